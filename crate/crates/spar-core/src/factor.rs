//! Latent-factor structure of the treatments: maximum-likelihood factor
//! analysis, PCA loadings, POET covariance estimation, the γ̂ transform,
//! and factor-count selection.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{repair_pd, sample_cov, solve_spd, sym_eigen_desc};

const EM_TOL: f64 = 1e-8;
const EM_MAX_ITER: usize = 1000;

/// Default POET hard-thresholding constant.
pub const POET_DEFAULT_C: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorMethod {
    Mle,
    PcaPoet,
}

/// Estimated factor structure of X.
#[derive(Debug, Clone)]
pub struct FactorFit {
    pub alpha_hat: DMatrix<f64>,
    pub sigma_x_hat: DMatrix<f64>,
    pub sigma_eps_hat: DMatrix<f64>,
    pub q: usize,
    pub method: FactorMethod,
    /// Leading sample-covariance eigenvalues, for diagnostics.
    pub eigenvalues: Vec<f64>,
    pub em_iterations: usize,
}

/// `γ̂ = Σ̂_X⁻¹ α̂`, defined up to right-multiplication by an orthogonal
/// q×q matrix.
#[derive(Debug, Clone)]
pub struct GammaHat {
    pub gamma: DMatrix<f64>,
}

/// Scaled principal-component loadings `(v₁√λ₁, …, v_q√λ_q)` of the
/// sample covariance of centered X.
pub fn fa_pca(x: &DMatrix<f64>, q: usize) -> Result<DMatrix<f64>> {
    let (n, p) = (x.nrows(), x.ncols());
    if q < 1 || q > n.min(p) {
        return Err(Error::InvalidConfig(format!(
            "need 1 <= q <= min(n, p), got q = {q}, n = {n}, p = {p}"
        )));
    }
    let cov = sample_cov(x);
    let (vals, vecs) = sym_eigen_desc(&cov);
    let mut alpha = DMatrix::zeros(p, q);
    for k in 0..q {
        let scale = vals[k].max(0.0).sqrt();
        for i in 0..p {
            alpha[(i, k)] = vecs[(i, k)] * scale;
        }
    }
    Ok(alpha)
}

fn log_likelihood(s: &DMatrix<f64>, sigma: &DMatrix<f64>) -> f64 {
    let p = s.nrows() as f64;
    let chol = match sigma.clone().cholesky() {
        Some(c) => c,
        None => return f64::NEG_INFINITY,
    };
    let l = chol.l();
    let logdet: f64 = (0..s.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    let trace = chol.solve(s).trace();
    -0.5 * (p * (2.0 * std::f64::consts::PI).ln() + logdet + trace)
}

/// Gaussian factor-analysis MLE with diagonal noise covariance, fit by EM
/// from the PCA solution. Returns loadings in the raw EM orientation.
pub fn fa_mle(x: &DMatrix<f64>, q: usize) -> Result<FactorFit> {
    let (n, p) = (x.nrows(), x.ncols());
    if q < 1 {
        return Err(Error::InvalidConfig("fa_mle needs q >= 1".into()));
    }
    if !(n > p && p > q) {
        return Err(Error::InvalidConfig(format!(
            "fa_mle needs n > p > q, got n = {n}, p = {p}, q = {q}"
        )));
    }
    let s = sample_cov(x);
    let (eigvals, _) = sym_eigen_desc(&s);

    let mut alpha = fa_pca(x, q)?;
    let mut psi = DVector::from_fn(p, |i, _| {
        let fitted: f64 = (0..q).map(|k| alpha[(i, k)] * alpha[(i, k)]).sum();
        (s[(i, i)] - fitted).max(1e-6)
    });

    let mut prev_ll = f64::NEG_INFINITY;
    let mut iterations = EM_MAX_ITER;
    for iter in 0..EM_MAX_ITER {
        // E-step statistics through B = G αᵀ Ψ⁻¹ with G = (I + αᵀΨ⁻¹α)⁻¹.
        let psi_inv_alpha = DMatrix::from_fn(p, q, |i, k| alpha[(i, k)] / psi[i]);
        let mut g_inv = alpha.transpose() * &psi_inv_alpha;
        for k in 0..q {
            g_inv[(k, k)] += 1.0;
        }
        let g = g_inv
            .try_inverse()
            .ok_or_else(|| Error::ConvergenceFailure("EM posterior covariance singular".into()))?;
        let b = &g * psi_inv_alpha.transpose();
        let sbt = &s * b.transpose();
        let second_moment = &g + &b * &sbt;

        let alpha_new = &sbt
            * second_moment.clone().try_inverse().ok_or_else(|| {
                Error::ConvergenceFailure("EM factor second moment singular".into())
            })?;
        for i in 0..p {
            let cross: f64 = (0..q).map(|k| alpha_new[(i, k)] * sbt[(i, k)]).sum();
            psi[i] = (s[(i, i)] - cross).max(1e-10);
        }
        alpha = alpha_new;

        let sigma = &alpha * alpha.transpose() + DMatrix::from_diagonal(&psi);
        let ll = log_likelihood(&s, &sigma);
        if !ll.is_finite() {
            return Err(Error::ConvergenceFailure(
                "EM log-likelihood became non-finite".into(),
            ));
        }
        if (ll - prev_ll).abs() < EM_TOL {
            iterations = iter + 1;
            break;
        }
        prev_ll = ll;
    }

    let sigma_eps = DMatrix::from_diagonal(&psi);
    let sigma_x = &alpha * alpha.transpose() + &sigma_eps;
    Ok(FactorFit {
        alpha_hat: alpha,
        sigma_x_hat: sigma_x,
        sigma_eps_hat: sigma_eps,
        q,
        method: FactorMethod::Mle,
        eigenvalues: eigvals.iter().cloned().collect(),
        em_iterations: iterations,
    })
}

/// POET covariance estimate: rank-q spectral part plus the residual
/// covariance with off-diagonal hard thresholding at
/// `C·√(log p / n)·√(R_ii R_jj)`.
pub fn poet(
    x: &DMatrix<f64>,
    q: usize,
    thresh_const: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, p) = (x.nrows(), x.ncols());
    if q > p {
        return Err(Error::InvalidConfig(format!(
            "poet needs q <= p, got q = {q}, p = {p}"
        )));
    }
    if thresh_const < 0.0 {
        return Err(Error::InvalidConfig("threshold constant must be >= 0".into()));
    }
    let cov = sample_cov(x);
    let (vals, vecs) = sym_eigen_desc(&cov);

    let mut low_rank = DMatrix::zeros(p, p);
    for k in 0..q {
        let v = vecs.column(k);
        low_rank += v * v.transpose() * vals[k];
    }
    let mut resid = &cov - &low_rank;
    let level = thresh_const * ((p as f64).ln() / n as f64).sqrt();
    for i in 0..p {
        for j in 0..p {
            if i != j {
                let cut = level * (resid[(i, i)].max(0.0) * resid[(j, j)].max(0.0)).sqrt();
                if resid[(i, j)].abs() < cut {
                    resid[(i, j)] = 0.0;
                }
            }
        }
    }
    let mut sigma_x = low_rank + &resid;
    // Symmetrize away accumulation noise before the PD check.
    sigma_x = (&sigma_x + sigma_x.transpose()) * 0.5;
    repair_pd(&mut sigma_x, 1e-6);
    Ok((sigma_x, resid))
}

/// Solves `Σ̂_X γ̂ = α̂` without forming the inverse.
pub fn gamma_from(fit: &FactorFit) -> Result<GammaHat> {
    let gamma = solve_spd(&fit.sigma_x_hat, &fit.alpha_hat)?;
    let resid = (&fit.sigma_x_hat * &gamma - &fit.alpha_hat).norm();
    let scale = fit.alpha_hat.norm().max(1e-300);
    if resid > 1e-8 * scale {
        return Err(Error::SingularCovariance(format!(
            "linear solve residual {:.3e} relative to loadings",
            resid / scale
        )));
    }
    Ok(GammaHat { gamma })
}

/// Eigenvalue-difference factor-count selector with a slope-calibrated
/// threshold: fit a line to `(j^{2/3}, λ_j)` over a five-eigenvalue window
/// past the current candidate, set `δ̂ = 2·|slope|`, and keep the largest k
/// with `λ_k − λ_{k+1} ≥ δ̂`, iterating to a fixed point.
pub fn select_q(x: &DMatrix<f64>, q_max: usize) -> Result<usize> {
    let (n, p) = (x.nrows(), x.ncols());
    let lim = n.min(p);
    if lim < 3 || q_max + 2 >= lim {
        return Err(Error::InvalidConfig(format!(
            "need q_max < min(n, p) - 2, got q_max = {q_max}, min = {lim}"
        )));
    }
    if q_max == 0 {
        return Ok(0);
    }
    let cov = sample_cov(x);
    let (vals, _) = sym_eigen_desc(&cov);

    let window = 5usize.min(lim.saturating_sub(q_max).max(2));
    let mut k = q_max;
    for _ in 0..20 {
        let start = k; // zero-based index of λ_{k+1}
        let avail = lim - start;
        let w = window.min(avail);
        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for t in 0..w {
            let j = (start + t + 1) as f64;
            let xv = j.powf(2.0 / 3.0);
            let yv = vals[start + t];
            sx += xv;
            sy += yv;
            sxx += xv * xv;
            sxy += xv * yv;
        }
        let wf = w as f64;
        let denom = wf * sxx - sx * sx;
        let slope = if denom.abs() > 1e-12 {
            (wf * sxy - sx * sy) / denom
        } else {
            0.0
        };
        let delta = 2.0 * slope.abs();

        let mut k_new = 0usize;
        for cand in (1..=q_max).rev() {
            if vals[cand - 1] - vals[cand] >= delta {
                k_new = cand;
                break;
            }
        }
        if k_new == k {
            return Ok(k);
        }
        k = k_new;
    }
    Ok(k)
}
