//! Comparison estimators: the null-treatments least-median-of-squares
//! method, the deconfounder with a PPCA substitute confounder, and thin
//! wrappers over the plain regressions.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{sample_cov, sym_eigen_desc};
use crate::pipeline::{first_stage, prepare};
use crate::regress;

/// Subset-search settings for the least-median-of-squares δ estimate.
#[derive(Debug, Clone)]
pub struct LmsConfig {
    pub n_subsets: usize,
    /// Enumerate every q-subset when C(p, q) stays at or below this.
    pub exhaustive_limit: usize,
    pub seed: u64,
}

impl Default for LmsConfig {
    fn default() -> Self {
        LmsConfig {
            n_subsets: 3000,
            exhaustive_limit: 20_000,
            seed: 0,
        }
    }
}

/// Deconfounder settings: substitute-confounder dimension and outcome stage.
#[derive(Debug, Clone)]
pub struct DeconfConfig {
    pub k: usize,
    pub outcome_stage: OutcomeStage,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeStage {
    Lasso,
    Ridge,
}

impl Default for DeconfConfig {
    fn default() -> Self {
        DeconfConfig {
            k: 50,
            outcome_stage: OutcomeStage::Lasso,
            seed: 0,
        }
    }
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u128::from(u64::MAX) {
            return usize::MAX;
        }
    }
    acc.min(usize::MAX as u128) as usize
}

/// The h-th ordered value with `h = ⌊n/2⌋ + ⌊(k+1)/2⌋`, the classical
/// least-median-of-squares coverage count for k fitted coefficients.
fn lms_quantile(mut values: Vec<f64>, k: usize) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    let h = (n / 2 + (k + 1) / 2).clamp(1, n);
    values[h - 1]
}

/// Advances `subset` to the next q-combination in lexicographic order.
fn next_combination(subset: &mut [usize], p: usize) -> bool {
    let q = subset.len();
    let mut i = q;
    while i > 0 {
        i -= 1;
        if subset[i] < p - q + i {
            subset[i] += 1;
            for j in i + 1..q {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Least-median-of-squares estimate of δ from candidate exact solves on
/// q-row subsets, and the dense `β̂ = ξ̂ − γ̂δ̂`.
pub fn null_treatments(
    xi_hat: &DVector<f64>,
    gamma_hat: &DMatrix<f64>,
    cfg: &LmsConfig,
) -> Result<DVector<f64>> {
    let p = xi_hat.len();
    let q = gamma_hat.ncols();
    if q < 1 || p <= q {
        return Err(Error::InvalidConfig(format!(
            "null-treatments needs p > q >= 1, got p = {p}, q = {q}"
        )));
    }
    if gamma_hat.nrows() != p {
        return Err(Error::DimensionMismatch("gamma rows != xi length".into()));
    }
    if cfg.n_subsets < 1 {
        return Err(Error::InvalidConfig("n_subsets must be >= 1".into()));
    }

    let objective = |delta: &DVector<f64>| -> f64 {
        let r = xi_hat - gamma_hat * delta;
        lms_quantile(r.iter().map(|v| v * v).collect(), q)
    };
    let solve_subset = |rows: &[usize]| -> Option<DVector<f64>> {
        let sub_g = gamma_hat.select_rows(rows);
        let sub_xi = xi_hat.select_rows(rows);
        sub_g.lu().solve(&sub_xi).filter(|d| d.iter().all(|v| v.is_finite()))
    };

    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut consider = |delta: DVector<f64>| {
        let obj = objective(&delta);
        if best.as_ref().map_or(true, |(b, _)| obj < *b) {
            best = Some((obj, delta));
        }
    };

    if binomial(p, q) <= cfg.exhaustive_limit {
        let mut subset: Vec<usize> = (0..q).collect();
        loop {
            if let Some(delta) = solve_subset(&subset) {
                consider(delta);
            }
            if !next_combination(&mut subset, p) {
                break;
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for _ in 0..cfg.n_subsets {
            // Sample q distinct rows.
            let mut rows: Vec<usize> = Vec::with_capacity(q);
            while rows.len() < q {
                let r = rng.random_range(0..p);
                if !rows.contains(&r) {
                    rows.push(r);
                }
            }
            rows.sort_unstable();
            if let Some(delta) = solve_subset(&rows) {
                consider(delta);
            }
        }
    }

    let (best_obj, delta) = best.ok_or_else(|| {
        Error::RankDeficientSubmatrix("every candidate q-subset of γ̂ was singular".into())
    })?;
    debug_assert!(objective(&delta) <= best_obj + 1e-12);
    Ok(xi_hat - gamma_hat * delta)
}

/// Closed-form probabilistic PCA: `σ²` is the mean of the discarded
/// eigenvalues, `W = V_k(Λ_k − σ²I)^{1/2}`, and the substitute confounder
/// is the posterior mean `E[z|x]`.
pub fn ppca(x: &DMatrix<f64>, k: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, p) = (x.nrows(), x.ncols());
    if k >= n.min(p) {
        return Err(Error::InvalidConfig(format!(
            "ppca needs 0 <= k < min(n, p), got k = {k}"
        )));
    }
    if k == 0 {
        return Ok((DMatrix::zeros(n, 0), DMatrix::zeros(p, 0)));
    }
    let cov = sample_cov(x);
    let (vals, vecs) = sym_eigen_desc(&cov);
    let sigma2 = if k < p {
        vals.iter().skip(k).map(|v| v.max(0.0)).sum::<f64>() / (p - k) as f64
    } else {
        0.0
    };
    let mut w = DMatrix::zeros(p, k);
    for j in 0..k {
        let scale = (vals[j] - sigma2).max(0.0).sqrt();
        for i in 0..p {
            w[(i, j)] = vecs[(i, j)] * scale;
        }
    }
    // E[z|x] = (WᵀW + σ²I)⁻¹ Wᵀ x, per sample.
    let mut m = w.transpose() * &w;
    for j in 0..k {
        m[(j, j)] += sigma2.max(1e-12);
    }
    let minv = m
        .try_inverse()
        .ok_or_else(|| Error::SingularCovariance("PPCA posterior precision".into()))?;
    let substitute = x * &w * minv.transpose();
    Ok((substitute, w))
}

/// Deconfounder: regress Y on the treatments augmented with the PPCA
/// substitute confounder; only the treatment coefficients are reported.
pub fn deconfounder(d: &Dataset, cfg: &DeconfConfig) -> Result<DVector<f64>> {
    let (x, y) = prepare(d)?;
    let (n, p) = (x.nrows(), x.ncols());
    let (substitute, _) = ppca(&x, cfg.k)?;
    let mut augmented = DMatrix::zeros(n, p + cfg.k);
    augmented.view_mut((0, 0), (n, p)).copy_from(&x);
    if cfg.k > 0 {
        augmented
            .view_mut((0, p), (n, cfg.k))
            .copy_from(&substitute);
    }
    let coef = match cfg.outcome_stage {
        OutcomeStage::Lasso => regress::lasso_cv(&augmented, &y, 10, cfg.seed)?.0,
        OutcomeStage::Ridge => regress::ridge_cv(&augmented, &y, 10, cfg.seed)?.xi_hat,
    };
    Ok(DVector::from_fn(p, |i, _| coef[i]))
}

/// The null-treatments baseline end to end: first-stage estimates shared
/// with Spar, then the least-median-of-squares δ. The factor count is
/// estimated from the spectrum when not supplied.
pub fn fit_null(d: &Dataset, q: Option<usize>, cfg: &LmsConfig, seed: u64) -> Result<DVector<f64>> {
    let (x, y) = prepare(d)?;
    let q = match q {
        Some(q) => q,
        None => {
            let lim = x.nrows().min(x.ncols());
            crate::factor::select_q(&x, lim.saturating_sub(5).min(10).max(1))?
        }
    };
    let stage = first_stage(&x, &y, q, seed)?;
    null_treatments(&stage.regression.xi_hat, &stage.gamma.gamma, cfg)
}
