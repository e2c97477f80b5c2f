//! Shared data model: treatment/outcome datasets, generator-side ground
//! truth, centering, and adjustment for measured confounders.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// An observational sample: n×p treatments X, outcome Y, and optionally
/// an n×r block W of measured confounders.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub w: Option<DMatrix<f64>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, w: Option<DMatrix<f64>>) -> Result<Self> {
        let d = Dataset { x, y, w };
        validate_dataset(&d)?;
        Ok(d)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn r(&self) -> usize {
        self.w.as_ref().map_or(0, |w| w.ncols())
    }

    /// Content hash over X, Y and W bits; used by the harness to assert
    /// that every method within a replication saw identical data.
    pub fn content_hash(&self) -> u64 {
        let w_iter = self.w.iter().flat_map(|w| w.iter().cloned());
        linalg::hash_f64s(
            self.x
                .iter()
                .cloned()
                .chain(self.y.iter().cloned())
                .chain(w_iter),
        )
    }
}

/// Generator-side parameters kept alongside simulated data for scoring.
/// The factor-model fields are absent for generators (such as the GWAS
/// models) that do not draw from the linear factor structure.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub beta: DVector<f64>,
    pub alpha: Option<DMatrix<f64>>,
    pub delta: Option<DVector<f64>>,
    pub eta: Option<DMatrix<f64>>,
    pub lambda_w: Option<DVector<f64>>,
    pub sigma_eps_x: Option<DMatrix<f64>>,
    pub u: Option<DMatrix<f64>>,
    pub q: usize,
}

impl GroundTruth {
    pub fn validate(&self) -> Result<()> {
        let p = self.beta.len();
        if self.q > p {
            return Err(Error::InvalidConfig(format!(
                "q = {} exceeds p = {}",
                self.q, p
            )));
        }
        if let Some(a) = &self.alpha {
            if a.nrows() != p || a.ncols() != self.q {
                return Err(Error::DimensionMismatch(format!(
                    "alpha is {}x{}, expected {}x{}",
                    a.nrows(),
                    a.ncols(),
                    p,
                    self.q
                )));
            }
        }
        if let Some(s) = &self.sigma_eps_x {
            if s.nrows() != p || s.ncols() != p {
                return Err(Error::DimensionMismatch("sigma_eps_x must be p×p".into()));
            }
            if (s - s.transpose()).amax() > 1e-10 {
                return Err(Error::InvalidConfig("sigma_eps_x not symmetric".into()));
            }
            if linalg::min_eigenvalue(s) < -1e-8 {
                return Err(Error::NotPositiveDefinite("sigma_eps_x".into()));
            }
        }
        Ok(())
    }

    /// Support of the causal-effect vector.
    pub fn sparsity(&self) -> SparsityPattern {
        SparsityPattern::from_beta(&self.beta, 0.0)
    }
}

/// Index set of nonzero causal effects and its cardinality.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    pub support: Vec<usize>,
    pub s: usize,
}

impl SparsityPattern {
    pub fn from_beta(beta: &DVector<f64>, tol: f64) -> Self {
        let support: Vec<usize> = beta
            .iter()
            .enumerate()
            .filter(|(_, b)| b.abs() > tol)
            .map(|(i, _)| i)
            .collect();
        let s = support.len();
        SparsityPattern { support, s }
    }
}

/// Checks shape consistency and rejects non-finite entries.
pub fn validate_dataset(d: &Dataset) -> Result<()> {
    let n = d.x.nrows();
    if n == 0 || d.x.ncols() == 0 {
        return Err(Error::EmptyMatrix("X must be non-empty".into()));
    }
    if d.y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "X has {} rows but Y has length {}",
            n,
            d.y.len()
        )));
    }
    if let Some(w) = &d.w {
        if w.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "X has {} rows but W has {}",
                n,
                w.nrows()
            )));
        }
    }
    if d.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteEntry("X".into()));
    }
    if d.y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteEntry("Y".into()));
    }
    if let Some(w) = &d.w {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEntry("W".into()));
        }
    }
    Ok(())
}

/// Subtracts the sample mean from every column.
pub fn center_columns(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::EmptyMatrix("cannot center an empty matrix".into()));
    }
    let n = m.nrows() as f64;
    let mut out = m.clone();
    for j in 0..m.ncols() {
        let mean = m.column(j).sum() / n;
        for i in 0..m.nrows() {
            out[(i, j)] -= mean;
        }
    }
    Ok(out)
}

fn center_vector(v: &DVector<f64>) -> DVector<f64> {
    let mean = v.sum() / v.len() as f64;
    v.map(|x| x - mean)
}

/// Regresses every column of X, and Y, on W (with intercept) and returns
/// the residual dataset with W removed.
pub fn residualize_on_confounders(d: &Dataset) -> Result<Dataset> {
    validate_dataset(d)?;
    let w = d
        .w
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("no W to residualize on".into()))?;
    let n = d.n();
    if n <= w.ncols() {
        return Err(Error::InvalidConfig(format!(
            "need n > r, got n = {}, r = {}",
            n,
            w.ncols()
        )));
    }
    let wc = center_columns(w)?;
    let xc = center_columns(&d.x)?;
    let yc = center_vector(&d.y);

    // Projector through the Gram factorization of centered W.
    let gram = wc.transpose() * &wc;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::SingularDesign("WᵀW is rank deficient".into()))?;
    // Guard against a Cholesky that "succeeded" on a numerically singular
    // Gram matrix (tiny trailing pivots).
    let l = chol.l();
    let max_diag = (0..l.nrows()).map(|i| l[(i, i)]).fold(0.0_f64, f64::max);
    for i in 0..l.nrows() {
        if l[(i, i)] <= 1e-10 * max_diag.max(1.0) {
            return Err(Error::SingularDesign("WᵀW is rank deficient".into()));
        }
    }

    let coefs_x = chol.solve(&(wc.transpose() * &xc));
    let x_res = &xc - &wc * coefs_x;
    let coefs_y = chol.solve(&(wc.transpose() * &yc));
    let y_res = &yc - &wc * coefs_y;

    Ok(Dataset {
        x: x_res,
        y: y_res,
        w: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    fn small_dataset() -> Dataset {
        Dataset {
            x: DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            y: DVector::from_row_slice(&[1.0, 2.0, 3.0]),
            w: None,
        }
    }

    #[test]
    fn validate_accepts_consistent_shapes() {
        assert!(validate_dataset(&small_dataset()).is_ok());
    }

    #[test]
    fn validate_rejects_shape_mismatch() {
        let mut d = small_dataset();
        d.y = DVector::from_row_slice(&[1.0, 2.0]);
        assert!(matches!(
            validate_dataset(&d),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn validate_rejects_nan() {
        let mut d = small_dataset();
        d.x[(0, 0)] = f64::NAN;
        assert!(matches!(
            validate_dataset(&d),
            Err(Error::NonFiniteEntry(_))
        ));
    }

    #[test]
    fn centering_subtracts_mean() {
        let m = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let c = center_columns(&m).unwrap();
        assert_abs_diff_eq!(c[(0, 0)], -1.0);
        assert_abs_diff_eq!(c[(1, 0)], 0.0);
        assert_abs_diff_eq!(c[(2, 0)], 1.0);
    }

    #[test]
    fn centering_is_idempotent() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, -4.0, 2.5, 0.0, -1.0, 7.0]);
        let once = center_columns(&m).unwrap();
        let twice = center_columns(&once).unwrap();
        assert!((&once - &twice).amax() < 1e-14);
    }

    #[test]
    fn centering_two_by_two() {
        let m = dmatrix![1.0, 4.0; 3.0, 8.0];
        let c = center_columns(&m).unwrap();
        let expect = dmatrix![-1.0, -2.0; 1.0, 2.0];
        assert!((c - expect).amax() < 1e-14);
    }

    #[test]
    fn residualize_exact_linear_fit_gives_zeros() {
        // X = 2 W exactly, so regressing away W leaves nothing.
        let w = DMatrix::from_column_slice(5, 1, &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let x = &w * 2.0;
        let y = DVector::from_column_slice(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let d = Dataset { x, y, w: Some(w) };
        let res = residualize_on_confounders(&d).unwrap();
        assert!(res.x.amax() < 1e-10);
        assert!(res.y.amax() < 1e-10);
        assert!(res.w.is_none());
    }

    #[test]
    fn residualize_rejects_constant_w() {
        let w = DMatrix::from_column_slice(4, 1, &[3.0, 3.0, 3.0, 3.0]);
        let x = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let y = DVector::from_column_slice(&[0.0, 1.0, 0.0, 1.0]);
        let d = Dataset { x, y, w: Some(w) };
        assert!(matches!(
            residualize_on_confounders(&d),
            Err(Error::SingularDesign(_))
        ));
    }

    #[test]
    fn residualize_matches_hat_matrix() {
        let w = DMatrix::from_column_slice(5, 1, &[0.3, -1.2, 2.0, 0.7, -0.5]);
        let x = DMatrix::from_column_slice(5, 1, &[1.0, 0.0, 2.0, -1.0, 0.5]);
        let y = DVector::from_column_slice(&[0.2, 1.0, -0.3, 0.8, 0.0]);
        let d = Dataset {
            x: x.clone(),
            y,
            w: Some(w.clone()),
        };
        let res = residualize_on_confounders(&d).unwrap();

        // Oracle: residual = (I - Wc(WcᵀWc)⁻¹Wcᵀ) Xc with explicit inverse.
        let wc = center_columns(&w).unwrap();
        let xc = center_columns(&x).unwrap();
        let ginv = (wc.transpose() * &wc).try_inverse().unwrap();
        let hat = &wc * ginv * wc.transpose();
        let expect = &xc - hat * &xc;
        assert!((res.x - expect).amax() < 1e-12);
    }

    #[test]
    fn residual_orthogonal_to_w_columns() {
        let w = DMatrix::from_row_slice(6, 2, &[
            0.5, 1.0, -0.2, 0.3, 1.5, -1.0, 0.8, 0.1, -0.9, 0.6, 0.0, 2.0,
        ]);
        let x = DMatrix::from_row_slice(6, 2, &[
            1.0, 0.0, 2.0, 1.0, 0.0, -1.0, 1.5, 2.0, -0.5, 0.3, 0.2, 0.9,
        ]);
        let y = DVector::from_column_slice(&[1.0, 0.0, -1.0, 0.5, 0.2, -0.7]);
        let d = Dataset {
            x,
            y,
            w: Some(w.clone()),
        };
        let res = residualize_on_confounders(&d).unwrap();
        let wc = center_columns(&w).unwrap();
        for j in 0..res.x.ncols() {
            let col = res.x.column(j);
            let cn = col.norm().max(1e-12);
            for k in 0..wc.ncols() {
                let wk = wc.column(k);
                let inner = col.dot(&wk) / (cn * wk.norm().max(1e-12));
                assert!(inner.abs() < 1e-8);
            }
        }
    }
}
