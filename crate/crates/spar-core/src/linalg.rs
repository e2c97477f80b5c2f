//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Sample covariance `XᵀX / n` of an already-centered matrix.
pub fn sample_cov(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mut cov = x.transpose() * x;
    cov /= n;
    cov
}

/// Eigenvalues and eigenvectors of a symmetric matrix, sorted descending.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let p = m.nrows();
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals = DVector::from_iterator(p, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen();
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Adds `(|λ_min| + bump)·I` whenever the matrix is not positive definite.
pub fn repair_pd(m: &mut DMatrix<f64>, bump: f64) {
    let lmin = min_eigenvalue(m);
    if lmin <= 0.0 {
        let shift = lmin.abs() + bump;
        for i in 0..m.nrows() {
            m[(i, i)] += shift;
        }
    }
}

/// Least-squares solution of `A x = b` via column-pivoted QR.
///
/// Errors with the caller-supplied constructor when A is numerically
/// rank-deficient (relative pivot tolerance 1e-10).
pub fn least_squares(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    on_singular: fn(String) -> Error,
) -> Result<DVector<f64>> {
    let cols = a.ncols();
    if cols == 0 {
        return Ok(DVector::zeros(0));
    }
    if a.nrows() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "lhs has {} rows, rhs has {}",
            a.nrows(),
            b.len()
        )));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let smin = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if !(smax > 0.0) || smin <= 1e-10 * smax || svd.singular_values.len() < cols {
        return Err(on_singular(format!(
            "smallest/largest singular value ratio {:.3e}",
            if smax > 0.0 { smin / smax } else { 0.0 }
        )));
    }
    svd.solve(b, 0.0)
        .map_err(|e| on_singular(e.to_string()))
}

/// Solves the symmetric positive-definite system `M x = rhs` for each rhs
/// column, via Cholesky.
pub fn solve_spd(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularCovariance("cholesky failed".into()))?;
    Ok(chol.solve(rhs))
}

/// FNV-1a hash over the raw f64 bits of a slice. Stable across platforms.
pub fn hash_f64s(values: impl Iterator<Item = f64>) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for v in values {
        for byte in v.to_bits().to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// FNV-1a over a string, used to derive per-method RNG streams.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for byte in s.as_bytes() {
        h ^= *byte as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 0.0, 0.0, 0.0, 9.0, 0.0, 0.0, 0.0, 1.0]);
        let (vals, _) = sym_eigen_desc(&m);
        assert!((vals[0] - 9.0).abs() < 1e-12);
        assert!((vals[1] - 4.0).abs() < 1e-12);
        assert!((vals[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn repair_makes_pd() {
        let mut m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        repair_pd(&mut m, 0.05);
        assert!(min_eigenvalue(&m) > 0.0);
    }

    #[test]
    fn least_squares_matches_normal_equations() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, 2.0, -1.0, 0.0, 3.0, 1.5, 1.0]);
        let b = DVector::from_row_slice(&[1.0, 0.0, 2.0, -1.0]);
        let x = least_squares(&a, &b, Error::SingularDesign).unwrap();
        let gram = a.transpose() * &a;
        let rhs = a.transpose() * &b;
        let expect = gram.lu().solve(&rhs).unwrap();
        assert!((x - expect).amax() < 1e-10);
    }

    #[test]
    fn least_squares_rejects_rank_deficient() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let b = DVector::from_row_slice(&[1.0, 2.0, 3.0]);
        assert!(least_squares(&a, &b, Error::SingularDesign).is_err());
    }
}
