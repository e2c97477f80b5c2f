//! Lloyd's algorithm with k-means++ seeding, used to assign population
//! cluster labels in the GWAS trait generator.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const RESTARTS: usize = 10;

fn sq_dist(rows: &DMatrix<f64>, i: usize, center: &[f64]) -> f64 {
    let mut d = 0.0;
    for j in 0..rows.ncols() {
        let diff = rows[(i, j)] - center[j];
        d += diff * diff;
    }
    d
}

fn wcss(rows: &DMatrix<f64>, centers: &[Vec<f64>], labels: &[usize]) -> f64 {
    (0..rows.nrows())
        .map(|i| sq_dist(rows, i, &centers[labels[i] - 1]))
        .sum()
}

fn seed_centers(rows: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rows.nrows();
    let d = rows.ncols();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    centers.push((0..d).map(|j| rows[(first, j)]).collect());
    let mut dist2: Vec<f64> = (0..n).map(|i| sq_dist(rows, i, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist2.iter().sum();
        let idx = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in dist2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        };
        let c: Vec<f64> = (0..d).map(|j| rows[(idx, j)]).collect();
        for i in 0..n {
            dist2[i] = dist2[i].min(sq_dist(rows, i, &c));
        }
        centers.push(c);
    }
    centers
}

fn lloyd(
    rows: &DMatrix<f64>,
    k: usize,
    max_iter: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, f64) {
    let n = rows.nrows();
    let d = rows.ncols();
    let mut centers = seed_centers(rows, k, rng);
    let mut labels = vec![1usize; n];
    let mut prev_wcss = f64::INFINITY;
    for _ in 0..max_iter {
        // Assignment step; ties go to the lowest cluster index.
        for i in 0..n {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let dd = sq_dist(rows, i, center);
                if dd < best_d {
                    best_d = dd;
                    best = c;
                }
            }
            labels[i] = best + 1;
        }
        // Update step.
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; d]; k];
        for i in 0..n {
            let c = labels[i] - 1;
            counts[c] += 1;
            for j in 0..d {
                sums[c][j] += rows[(i, j)];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed an empty cluster at the point farthest from its center.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(rows, a, &centers[labels[a] - 1])
                            .partial_cmp(&sq_dist(rows, b, &centers[labels[b] - 1]))
                            .unwrap_or(std::cmp::Ordering::Equal)
                    })
                    .unwrap_or(0);
                centers[c] = (0..d).map(|j| rows[(far, j)]).collect();
            } else {
                for j in 0..d {
                    centers[c][j] = sums[c][j] / counts[c] as f64;
                }
            }
        }
        let cur = wcss(rows, &centers, &labels);
        debug_assert!(cur <= prev_wcss + 1e-9);
        if (prev_wcss - cur).abs() < 1e-12 {
            break;
        }
        prev_wcss = cur;
    }
    let final_wcss = wcss(rows, &centers, &labels);
    (labels, final_wcss)
}

/// Clusters the rows of `rows` into K groups; labels are 1-based.
/// Runs 10 seeded restarts and keeps the lowest within-cluster sum of squares.
pub fn kmeans(rows: &DMatrix<f64>, k: usize, seed: u64, max_iter: usize) -> Result<Vec<usize>> {
    let n = rows.nrows();
    if k == 0 || n < k {
        return Err(Error::InvalidConfig(format!(
            "kmeans needs n >= K >= 1, got n = {}, K = {}",
            n, k
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..RESTARTS {
        let (labels, score) = lloyd(rows, k, max_iter, &mut rng);
        if best.as_ref().map_or(true, |(_, b)| score < *b) {
            best = Some((labels, score));
        }
    }
    Ok(best.unwrap().0)
}
