//! Regression estimators: OLS, ridge, coordinate-descent lasso with
//! cross-validation, scaled lasso, and the node-wise de-biased lasso.
//!
//! The lasso objective is `(1/2n)‖Y − Xb‖² + λ‖b‖₁` in the original
//! variable scale; coordinate updates are normalized by the Gram diagonal
//! internally so the solve is insensitive to column scaling.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const CD_TOL: f64 = 1e-7;
const CD_MAX_SWEEPS: usize = 100_000;
const KKT_TOL: f64 = 1e-6;

/// A fitted marginal regression of the outcome on the treatments.
#[derive(Debug, Clone)]
pub struct RegressionFit {
    pub xi_hat: DVector<f64>,
    /// Residual variance of the outcome regression.
    pub sigma_resid2: f64,
    pub method: &'static str,
    pub lambda: Option<f64>,
    pub iterations: usize,
    /// Worst KKT violation at the returned solution (penalized fits only).
    pub kkt_gap: f64,
}

fn soft_threshold(z: f64, w: f64) -> f64 {
    if z > w {
        z - w
    } else if z < -w {
        z + w
    } else {
        0.0
    }
}

#[derive(Clone, Copy)]
struct CdSettings {
    tol: f64,
    /// Keep tightening until the exact KKT conditions hold.
    enforce_kkt: bool,
    max_sweeps: usize,
}

const CD_STRICT: CdSettings = CdSettings {
    tol: CD_TOL,
    enforce_kkt: true,
    max_sweeps: CD_MAX_SWEEPS,
};

/// Looser settings for the cross-validation fold fits, which only rank
/// penalties by validation error.
const CD_PATH: CdSettings = CdSettings {
    tol: 1e-4,
    enforce_kkt: false,
    max_sweeps: 300,
};

/// Coordinate-descent lasso over precomputed Gram statistics:
/// `gram = XᵀX/n`, `corr = XᵀY/n`. `skip` masks one coordinate out of the
/// model (used by the node-wise regressions). `b` is the warm start and
/// holds the solution on exit; returns the sweep count.
fn cd_gram(
    gram: &DMatrix<f64>,
    corr: &DVector<f64>,
    lambda: f64,
    skip: Option<usize>,
    b: &mut DVector<f64>,
    settings: CdSettings,
) -> Result<usize> {
    let p = gram.nrows();
    let mut sweeps = 0usize;

    // Residual correlations r = corr − gram·b, maintained incrementally.
    let mut r = corr - gram * &*b;

    let sweep = |r: &mut DVector<f64>, b: &mut DVector<f64>, active_only: bool| -> f64 {
        let mut max_delta: f64 = 0.0;
        for j in 0..p {
            if Some(j) == skip {
                continue;
            }
            if active_only && b[j] == 0.0 {
                continue;
            }
            let gjj = gram[(j, j)];
            if gjj <= 1e-300 {
                continue;
            }
            let z = r[j] + gjj * b[j];
            let new = soft_threshold(z, lambda) / gjj;
            let delta = new - b[j];
            if delta != 0.0 {
                b[j] = new;
                for k in 0..p {
                    r[k] -= gram[(k, j)] * delta;
                }
                max_delta = max_delta.max(delta.abs());
            }
        }
        max_delta
    };

    let mut tol = settings.tol;
    loop {
        // Converge on the active set, then confirm with a full pass.
        loop {
            sweeps += 1;
            if sweeps > settings.max_sweeps {
                if settings.enforce_kkt {
                    return Err(Error::ConvergenceFailure(format!(
                        "lasso exceeded {} sweeps",
                        settings.max_sweeps
                    )));
                }
                return Ok(sweeps);
            }
            let d = sweep(&mut r, b, true);
            if d < tol {
                break;
            }
        }
        sweeps += 1;
        if sweeps > settings.max_sweeps {
            if settings.enforce_kkt {
                return Err(Error::ConvergenceFailure(format!(
                    "lasso exceeded {} sweeps",
                    settings.max_sweeps
                )));
            }
            return Ok(sweeps);
        }
        let d_full = sweep(&mut r, b, false);
        if d_full >= tol {
            continue;
        }
        if !settings.enforce_kkt {
            return Ok(sweeps);
        }
        // Exact KKT verification on freshly recomputed correlations.
        let r_exact = corr - gram * &*b;
        let gap = kkt_gap_from(&r_exact, b, lambda, skip);
        if gap <= 0.5 * KKT_TOL {
            return Ok(sweeps);
        }
        r = r_exact;
        tol /= 10.0;
        if tol < 1e-15 {
            return Err(Error::ConvergenceFailure(format!(
                "lasso stalled with KKT gap {gap:.3e}"
            )));
        }
    }
}

fn kkt_gap_from(r: &DVector<f64>, b: &DVector<f64>, lambda: f64, skip: Option<usize>) -> f64 {
    let mut gap: f64 = 0.0;
    for j in 0..b.len() {
        if Some(j) == skip {
            continue;
        }
        let v = if b[j] == 0.0 {
            (r[j].abs() - lambda).max(0.0)
        } else {
            (r[j] - lambda * b[j].signum()).abs()
        };
        gap = gap.max(v);
    }
    gap
}

/// Ordinary least squares with residual variance on n − p degrees of freedom.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<RegressionFit> {
    let (n, p) = (x.nrows(), x.ncols());
    if y.len() != n {
        return Err(Error::DimensionMismatch("X rows != Y length".into()));
    }
    if n <= p {
        return Err(Error::SingularDesign(format!(
            "OLS needs n > p, got n = {n}, p = {p}"
        )));
    }
    let xi = crate::linalg::least_squares(x, y, Error::SingularDesign)?;
    let resid = y - x * &xi;
    let sigma_resid2 = resid.norm_squared() / (n - p) as f64;
    Ok(RegressionFit {
        xi_hat: xi,
        sigma_resid2,
        method: "ols",
        lambda: None,
        iterations: 1,
        kkt_gap: 0.0,
    })
}

/// Ridge regression at a fixed penalty: `ξ̂ = (XᵀX + nλI)⁻¹XᵀY`.
pub fn ridge(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<RegressionFit> {
    if lambda < 0.0 {
        return Err(Error::InvalidConfig("ridge lambda must be >= 0".into()));
    }
    let n = x.nrows() as f64;
    let p = x.ncols();
    let mut gram = x.transpose() * x;
    for i in 0..p {
        gram[(i, i)] += n * lambda;
    }
    let rhs = x.transpose() * y;
    let xi = gram
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| gram.lu().solve(&rhs))
        .ok_or_else(|| Error::SingularDesign("ridge system singular".into()))?;
    let resid = y - x * &xi;
    Ok(RegressionFit {
        xi_hat: xi,
        sigma_resid2: resid.norm_squared() / n,
        method: "ridge",
        lambda: Some(lambda),
        iterations: 1,
        kkt_gap: 0.0,
    })
}

/// Deterministic shuffled fold assignment: `assign[i]` is the fold of row i.
fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut assign = vec![0usize; n];
    for (pos, &row) in order.iter().enumerate() {
        assign[row] = pos % folds;
    }
    assign
}

/// Ridge with the penalty chosen from a 50-point log grid by minimum
/// cross-validated mean squared error.
pub fn ridge_cv(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    folds: usize,
    seed: u64,
) -> Result<RegressionFit> {
    let n = x.nrows();
    if folds < 2 || folds > n {
        return Err(Error::InvalidConfig(format!(
            "need 2 <= folds <= n, got folds = {folds}, n = {n}"
        )));
    }
    let p = x.ncols();
    let base = (x.transpose() * x).trace() / (n as f64 * p as f64);
    let base = if base > 0.0 { base } else { 1.0 };
    let grid: Vec<f64> = log_grid(base * 1e3, base * 1e-6, 50);

    let assign = fold_assignment(n, folds, seed);
    let mut cv_err = vec![0.0f64; grid.len()];
    for fold in 0..folds {
        let (xtr, ytr, xva, yva) = split_fold(x, y, &assign, fold);
        let gram = xtr.transpose() * &xtr;
        let rhs = xtr.transpose() * &ytr;
        let eig = gram.symmetric_eigen();
        let vt_rhs = eig.eigenvectors.transpose() * &rhs;
        let ntr = xtr.nrows() as f64;
        for (gi, &lam) in grid.iter().enumerate() {
            let scaled = DVector::from_fn(p, |i, _| {
                vt_rhs[i] / (eig.eigenvalues[i].max(0.0) + ntr * lam)
            });
            let coef = &eig.eigenvectors * scaled;
            let resid = &yva - &xva * coef;
            cv_err[gi] += resid.norm_squared();
        }
    }
    let mut best = 0usize;
    for gi in 1..grid.len() {
        if cv_err[gi] < cv_err[best] {
            best = gi;
        }
    }
    let mut fit = ridge(x, y, grid[best])?;
    fit.method = "ridge-cv";
    Ok(fit)
}

fn log_grid(hi: f64, lo: f64, count: usize) -> Vec<f64> {
    let (lh, ll) = (hi.ln(), lo.ln());
    (0..count)
        .map(|i| (lh + (ll - lh) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

fn split_fold(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    assign: &[usize],
    fold: usize,
) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let train: Vec<usize> = (0..x.nrows()).filter(|&i| assign[i] != fold).collect();
    let valid: Vec<usize> = (0..x.nrows()).filter(|&i| assign[i] == fold).collect();
    (
        x.select_rows(&train),
        y.select_rows(&train),
        x.select_rows(&valid),
        y.select_rows(&valid),
    )
}

/// Lasso at a fixed penalty by cyclic coordinate descent.
pub fn lasso_cd(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    if lambda < 0.0 {
        return Err(Error::InvalidConfig("lasso lambda must be >= 0".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch("X rows != Y length".into()));
    }
    let n = x.nrows() as f64;
    let gram = (x.transpose() * x) / n;
    let corr = (x.transpose() * y) / n;
    let mut b = DVector::zeros(x.ncols());
    cd_gram(&gram, &corr, lambda, None, &mut b, CD_STRICT)?;
    Ok(b)
}

/// Lasso with the penalty chosen by k-fold cross-validation over a
/// 100-point log grid from `λ_max = ‖XᵀY/n‖_∞` down to `10⁻³·λ_max`.
pub fn lasso_cv(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    folds: usize,
    seed: u64,
) -> Result<(DVector<f64>, f64)> {
    let n = x.nrows();
    let p = x.ncols();
    if folds < 2 || folds > n {
        return Err(Error::InvalidConfig(format!(
            "need 2 <= folds <= n, got folds = {folds}, n = {n}"
        )));
    }
    let lambda_max = (x.transpose() * y).amax() / n as f64;
    if lambda_max <= f64::MIN_POSITIVE {
        return Ok((DVector::zeros(p), 0.0));
    }
    let grid = log_grid(lambda_max, lambda_max * 1e-3, 100);

    let assign = fold_assignment(n, folds, seed);
    let mut cv_err = vec![0.0f64; grid.len()];
    for fold in 0..folds {
        let (xtr, ytr, xva, yva) = split_fold(x, y, &assign, fold);
        let ntr = xtr.nrows() as f64;
        let gram = (xtr.transpose() * &xtr) / ntr;
        let corr = (xtr.transpose() * &ytr) / ntr;
        let mut b = DVector::zeros(p);
        for (gi, &lam) in grid.iter().enumerate() {
            cd_gram(&gram, &corr, lam, None, &mut b, CD_PATH)?;
            let resid = &yva - &xva * &b;
            cv_err[gi] += resid.norm_squared();
        }
    }
    let mut best = 0usize;
    for gi in 1..grid.len() {
        if cv_err[gi] < cv_err[best] {
            best = gi;
        }
    }
    let coef = lasso_cd(x, y, grid[best])?;
    Ok((coef, grid[best]))
}

/// Joint lasso/noise-scale estimation: alternates a lasso solve at penalty
/// `σ̂·√(2 log p / n)` with the residual-scale update `σ̂ = ‖Y − Xb‖/√n`.
pub fn scaled_lasso(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidConfig("scaled lasso needs n >= 2".into()));
    }
    let p = x.ncols();
    let lambda0 = (2.0 * (p as f64).ln() / n as f64).sqrt();
    let nf = n as f64;
    let gram = (x.transpose() * x) / nf;
    let corr = (x.transpose() * y) / nf;

    let mut sigma = y.norm() / nf.sqrt();
    let mut b = DVector::zeros(p);
    for _ in 0..100 {
        cd_gram(&gram, &corr, sigma * lambda0, None, &mut b, CD_STRICT)?;
        let resid = y - x * &b;
        let new_sigma = resid.norm() / nf.sqrt();
        let delta = (new_sigma - sigma).abs();
        sigma = new_sigma;
        if delta < 1e-6 {
            return Ok((b, sigma));
        }
    }
    Err(Error::ConvergenceFailure(
        "scaled lasso alternation did not settle in 100 rounds".into(),
    ))
}

/// Node-wise approximate inverse covariance: row j comes from the lasso
/// regression of column j on the remaining columns at penalty
/// `√(log p / n)·sd(x_j)`, scaled by the node-wise residual variance.
pub fn nodewise_inverse(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, p) = (x.nrows(), x.ncols());
    if p < 2 {
        return Err(Error::InvalidConfig("node-wise inverse needs p >= 2".into()));
    }
    let nf = n as f64;
    let gram = (x.transpose() * x) / nf;
    let lambda_base = ((p as f64).ln() / nf).sqrt();

    let mut m = DMatrix::zeros(p, p);
    let mut kappa = DVector::zeros(p);
    for j in 0..p {
        let mean_j = x.column(j).sum() / nf;
        let sd_j = (gram[(j, j)] - mean_j * mean_j).max(0.0).sqrt();
        let lambda_j = lambda_base * sd_j;
        let corr_j = gram.column(j).into_owned();
        kappa.fill(0.0);
        cd_gram(&gram, &corr_j, lambda_j, Some(j), &mut kappa, CD_STRICT)?;
        // τ² = x_jᵀ(x_j − X₋ⱼκ)/n, which is positive whenever λ_j > 0.
        let tau2 = (gram[(j, j)] - gram.column(j).dot(&kappa)).max(1e-12);
        for k in 0..p {
            m[(j, k)] = if k == j { 1.0 } else { -kappa[k] } / tau2;
        }
    }
    Ok(m)
}

/// De-biased lasso: a cross-validated lasso fit corrected by the node-wise
/// inverse, paired with the scaled-lasso residual variance.
pub fn debiased_lasso(x: &DMatrix<f64>, y: &DVector<f64>, seed: u64) -> Result<RegressionFit> {
    let folds = 10.min(x.nrows()).max(2);
    let n = x.nrows() as f64;
    let (b, lambda_star) = lasso_cv(x, y, folds, seed)?;
    let m = nodewise_inverse(x)?;
    let resid_corr = (x.transpose() * (y - x * &b)) / n;
    let xi = &b + &m * resid_corr;
    let (_, sigma_hat) = scaled_lasso(x, y)?;
    Ok(RegressionFit {
        xi_hat: xi,
        sigma_resid2: sigma_hat * sigma_hat,
        method: "debiased-lasso",
        lambda: Some(lambda_star),
        iterations: 1,
        kkt_gap: 0.0,
    })
}

/// Exposed for tests: worst KKT violation of `b` for the lasso problem.
pub fn lasso_kkt_gap(x: &DMatrix<f64>, y: &DVector<f64>, b: &DVector<f64>, lambda: f64) -> f64 {
    let n = x.nrows() as f64;
    let r = (x.transpose() * (y - x * b)) / n;
    kkt_gap_from(&r, b, lambda, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn seeded(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn gaussian(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn ols_exact_line() {
        let x = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let y = &x * 2.0;
        let y = DVector::from_column_slice(y.as_slice());
        let fit = ols(&x, &y).unwrap();
        assert!((fit.xi_hat[0] - 2.0).abs() < 1e-12);
        assert!(fit.sigma_resid2 < 1e-20);
    }

    #[test]
    fn ols_orthogonal_outcome() {
        let x = DMatrix::from_column_slice(4, 1, &[1.0, -1.0, 1.0, -1.0]);
        let y = DVector::from_column_slice(&[1.0, 1.0, -1.0, -1.0]);
        let fit = ols(&x, &y).unwrap();
        assert!(fit.xi_hat[0].abs() < 1e-14);
    }

    #[test]
    fn ols_matches_normal_equations() {
        let mut rng = seeded(1);
        let x = gaussian(&mut rng, 6, 2);
        let y = DVector::from_fn(6, |_, _| rng.sample(StandardNormal));
        let fit = ols(&x, &y).unwrap();
        let gram = x.transpose() * &x;
        let expect = gram.try_inverse().unwrap() * x.transpose() * &y;
        assert!((fit.xi_hat - expect).amax() < 1e-10);
    }

    #[test]
    fn ridge_zero_penalty_equals_ols() {
        let mut rng = seeded(2);
        let x = gaussian(&mut rng, 10, 3);
        let y = DVector::from_fn(10, |_, _| rng.sample(StandardNormal));
        let r = ridge(&x, &y, 0.0).unwrap();
        let o = ols(&x, &y).unwrap();
        assert!((r.xi_hat - o.xi_hat).amax() < 1e-9);
    }

    #[test]
    fn ridge_large_penalty_shrinks_to_zero() {
        let mut rng = seeded(3);
        let x = gaussian(&mut rng, 10, 3);
        let y = DVector::from_fn(10, |_, _| rng.sample(StandardNormal));
        let r = ridge(&x, &y, 1e12).unwrap();
        assert!(r.xi_hat.amax() < 1e-8);
    }

    #[test]
    fn ridge_single_column_closed_form() {
        let x = DMatrix::from_column_slice(5, 1, &[1.0, 2.0, -1.0, 0.5, 3.0]);
        let y = DVector::from_column_slice(&[2.0, 3.9, -2.1, 1.2, 6.3]);
        let lam = 0.7;
        let n = 5.0;
        let expect = x.column(0).dot(&y) / (x.column(0).norm_squared() + n * lam);
        let fit = ridge(&x, &y, lam).unwrap();
        assert!((fit.xi_hat[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn lasso_soft_threshold_single_predictor() {
        // Column with ‖x‖²/n = 1 and xᵀy/n = 1 ⇒ b = 1 − λ.
        let n = 4;
        let x = DMatrix::from_column_slice(n, 1, &[1.0, -1.0, 1.0, -1.0]);
        let y = DVector::from_column_slice(&[1.0, -1.0, 1.0, -1.0]);
        let b = lasso_cd(&x, &y, 0.3).unwrap();
        assert!((b[0] - 0.7).abs() < 1e-10);
    }

    #[test]
    fn lasso_null_beyond_lambda_max() {
        let mut rng = seeded(4);
        let x = gaussian(&mut rng, 20, 5);
        let y = DVector::from_fn(20, |_, _| rng.sample(StandardNormal));
        let lambda_max = (x.transpose() * &y).amax() / 20.0;
        let b = lasso_cd(&x, &y, lambda_max * 1.0001).unwrap();
        assert!(b.amax() == 0.0);
    }

    #[test]
    fn lasso_orthonormal_design_closed_form() {
        // Orthonormal in the 1/n inner product: soft-threshold per coordinate.
        let n = 4;
        let root = (n as f64).sqrt() / 2.0;
        let x = DMatrix::from_column_slice(
            n,
            2,
            &[1.0, 1.0, -1.0, -1.0, 1.0, -1.0, 1.0, -1.0],
        ) * (1.0 / root * (n as f64).sqrt() / 2.0);
        // Columns now satisfy xᵀx/n = 1 and are orthogonal.
        let gram = (x.transpose() * &x) / n as f64;
        assert!((gram - DMatrix::identity(2, 2)).amax() < 1e-12);
        let y = DVector::from_column_slice(&[2.0, 0.3, -0.5, 1.1]);
        let lam = 0.25;
        let b = lasso_cd(&x, &y, lam).unwrap();
        for j in 0..2 {
            let z = x.column(j).dot(&y) / n as f64;
            assert!((b[j] - soft_threshold(z, lam)).abs() < 1e-10);
        }
    }

    #[test]
    fn lasso_kkt_on_random_instances() {
        let mut rng = seeded(5);
        for _ in 0..10 {
            let n = 25;
            let p = 8;
            let x = gaussian(&mut rng, n, p);
            let y = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
            let lam = rng.random_range(0.01..0.5);
            let b = lasso_cd(&x, &y, lam).unwrap();
            assert!(lasso_kkt_gap(&x, &y, &b, lam) <= KKT_TOL);
        }
    }

    #[test]
    fn lasso_cv_guards_and_null_response() {
        let mut rng = seeded(6);
        let x = gaussian(&mut rng, 8, 3);
        let y = DVector::zeros(8);
        assert!(matches!(
            lasso_cv(&x, &y, 9, 0),
            Err(Error::InvalidConfig(_))
        ));
        let (b, lam) = lasso_cv(&x, &y, 4, 0).unwrap();
        assert!(b.amax() == 0.0);
        assert_eq!(lam, 0.0);
    }

    #[test]
    fn lasso_cv_recovers_strong_support() {
        let mut rng = seeded(7);
        let mut hits = 0;
        for rep in 0..10 {
            let n = 60;
            let p = 20;
            let x = gaussian(&mut rng, n, p);
            let mut beta = DVector::zeros(p);
            beta[0] = 4.0;
            beta[3] = -5.0;
            let y = &x * &beta;
            let (b, _) = lasso_cv(&x, &y, 5, rep as u64).unwrap();
            if b[0].abs() > 1e-8 && b[3].abs() > 1e-8 {
                hits += 1;
            }
        }
        assert_eq!(hits, 10);
    }

    #[test]
    fn scaled_lasso_lambda0_value() {
        let n = 300.0_f64;
        let p = 1000.0_f64;
        let lambda0 = (2.0 * p.ln() / n).sqrt();
        assert!((lambda0 - 0.21460).abs() < 1e-4);
    }

    #[test]
    fn scaled_lasso_noiseless_strong_signal() {
        let mut rng = seeded(8);
        let n = 100;
        let p = 10;
        let x = gaussian(&mut rng, n, p);
        let mut beta = DVector::zeros(p);
        beta[0] = 5.0;
        beta[1] = -4.0;
        let y = &x * &beta;
        let (_, sigma) = scaled_lasso(&x, &y).unwrap();
        let sd_y = {
            let m = y.sum() / n as f64;
            (y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt()
        };
        assert!(sigma < 0.05 * sd_y, "sigma {sigma}, sd {sd_y}");
    }

    #[test]
    fn nodewise_orthonormal_identity() {
        let n = 8;
        // Hadamard-style orthogonal columns scaled to xᵀx/n = 1.
        let h = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 1.0, 1.0, 1.0, 1.0, -1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0,
                1.0,
            ],
        );
        let mut x = DMatrix::zeros(n, 4);
        x.view_mut((0, 0), (4, 4)).copy_from(&h);
        x.view_mut((4, 0), (4, 4)).copy_from(&(-h));
        let gram = (x.transpose() * &x) / n as f64;
        assert!((gram - DMatrix::identity(4, 4)).amax() < 1e-12);
        let m = nodewise_inverse(&x).unwrap();
        assert!((m - DMatrix::identity(4, 4)).amax() < 1e-9);
    }

    #[test]
    fn nodewise_matches_per_column_lasso() {
        let mut rng = seeded(9);
        let n = 40;
        let x = gaussian(&mut rng, n, 3);
        let m = nodewise_inverse(&x).unwrap();
        let lambda_base = ((3.0_f64).ln() / n as f64).sqrt();
        for j in 0..3 {
            let others: Vec<usize> = (0..3).filter(|&k| k != j).collect();
            let xo = x.select_columns(&others);
            let xj = x.column(j).into_owned();
            let mean_j = xj.sum() / n as f64;
            let sd_j = (xj.norm_squared() / n as f64 - mean_j * mean_j).sqrt();
            let kappa = lasso_cd(&xo, &xj, lambda_base * sd_j).unwrap();
            let resid = &xj - &xo * &kappa;
            let tau2 = xj.dot(&resid) / n as f64;
            assert!((m[(j, j)] - 1.0 / tau2).abs() < 1e-6);
            for (oi, &k) in others.iter().enumerate() {
                assert!((m[(j, k)] + kappa[oi] / tau2).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn nodewise_survives_duplicate_columns() {
        let mut rng = seeded(10);
        let col: Vec<f64> = (0..30).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut x = DMatrix::zeros(30, 2);
        for i in 0..30 {
            x[(i, 0)] = col[i];
            x[(i, 1)] = col[i];
        }
        let m = nodewise_inverse(&x).unwrap();
        assert!(m.iter().all(|v| v.is_finite()));
        assert!(m[(0, 1)].abs() > 0.0);
    }

    #[test]
    fn debiased_lasso_orthonormal_projection() {
        let n = 8;
        let h = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 1.0, 1.0, 1.0, 1.0, -1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0,
                1.0,
            ],
        );
        let mut x = DMatrix::zeros(n, 4);
        x.view_mut((0, 0), (4, 4)).copy_from(&h);
        x.view_mut((4, 0), (4, 4)).copy_from(&(-h));
        let y = DVector::from_column_slice(&[1.0, 0.2, -0.4, 2.0, -1.0, 0.0, 0.3, 0.7]);
        let fit = debiased_lasso(&x, &y, 0).unwrap();
        let expect = (x.transpose() * &y) / n as f64;
        assert!((fit.xi_hat - expect).amax() < 1e-9);
    }

    #[test]
    fn debiased_lasso_null_response() {
        let mut rng = seeded(11);
        let x = gaussian(&mut rng, 20, 6);
        let y = DVector::zeros(20);
        let fit = debiased_lasso(&x, &y, 0).unwrap();
        assert!(fit.xi_hat.amax() < 1e-12);
    }

    #[test]
    fn ols_scaling_equivariance() {
        let mut rng = seeded(12);
        let x = gaussian(&mut rng, 15, 3);
        let y = DVector::from_fn(15, |_, _| rng.sample(StandardNormal));
        let fit = ols(&x, &y).unwrap();
        let mut xs = x.clone();
        let c = 3.5;
        for i in 0..15 {
            xs[(i, 1)] *= c;
        }
        let fit_s = ols(&xs, &y).unwrap();
        assert!((fit_s.xi_hat[1] - fit.xi_hat[1] / c).abs() < 1e-10);
        assert!((fit_s.xi_hat[0] - fit.xi_hat[0]).abs() < 1e-10);
    }
}
