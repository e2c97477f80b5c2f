//! The Spar pipeline: factor and regression estimation, the noise-scale
//! threshold, the ℓ0 slab-cover solve, and the least-squares refinement.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{center_columns, residualize_on_confounders, validate_dataset, Dataset};
use crate::error::{Error, Result};
use crate::factor::{self, FactorFit, FactorMethod, GammaHat, POET_DEFAULT_C};
use crate::linalg::{repair_pd, sample_cov};
use crate::mip::{build_mip, solve_bnb, MipSolution, SolveLimits, SolveStatus};
use crate::regress::{self, RegressionFit};

/// Configuration for a Spar fit.
#[derive(Debug, Clone)]
pub struct SparConfig {
    /// Number of latent confounders; estimated from the spectrum when absent.
    pub q: Option<usize>,
    /// Box bound on ‖β‖_∞ in the slab program.
    pub m_bound: f64,
    pub threshold_override: Option<f64>,
    pub limits: SolveLimits,
    pub seed: u64,
}

impl Default for SparConfig {
    fn default() -> Self {
        SparConfig {
            q: None,
            m_bound: 30.0,
            threshold_override: None,
            limits: SolveLimits::default(),
            seed: 0,
        }
    }
}

/// Per-stage wall times, in milliseconds.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub factor_ms: f64,
    pub regression_ms: f64,
    pub threshold_ms: f64,
    pub mip_ms: f64,
    pub refine_ms: f64,
}

/// Full output of a Spar fit.
#[derive(Debug, Clone)]
pub struct SparResult {
    pub beta_hat: DVector<f64>,
    pub delta_hat: DVector<f64>,
    pub z: Vec<bool>,
    pub beta_mip: DVector<f64>,
    pub t: f64,
    pub sigma2_hat: f64,
    pub q_used: usize,
    pub xi_hat: DVector<f64>,
    pub gamma_hat: DMatrix<f64>,
    /// Rows used by the refinement regression.
    pub refine_indices: Vec<usize>,
    pub solver_status: SolveStatus,
    pub nodes_explored: usize,
    /// Set when the refinement fell back to the slab-solver δ because
    /// γ̂ restricted to the refinement rows lost rank.
    pub refine_fallback: bool,
    pub timings: StageTimings,
}

/// `σ̂² = (mean(diag(Σ̂_εx)) + σ̂²_{Y∼X}) / 2`.
pub fn estimate_sigma2(sigma_eps_hat: &DMatrix<f64>, sigma_resid2: f64) -> f64 {
    let p = sigma_eps_hat.nrows() as f64;
    let mean_diag = sigma_eps_hat.diagonal().sum() / p;
    0.5 * (mean_diag + sigma_resid2)
}

/// Noise-scale threshold `t = √(2·ln(p)·σ̂² / n)` (natural logarithm).
pub fn compute_threshold(n: usize, p: usize, sigma2: f64) -> Result<f64> {
    if n < 1 || p < 2 {
        return Err(Error::InvalidConfig(format!(
            "need n >= 1 and p >= 2, got n = {n}, p = {p}"
        )));
    }
    if sigma2 < 0.0 {
        return Err(Error::InvalidConfig("sigma2 must be >= 0".into()));
    }
    Ok((2.0 * (p as f64).ln() * sigma2 / n as f64).sqrt())
}

/// Least-squares refinement on the rows with the smallest `|β̂^mip|`.
///
/// Returns the refreshed δ̂ and `β̂ = (ξ̂ − γ̂δ̂) ⊙ ẑ` along with the row set.
pub fn refine(
    xi_hat: &DVector<f64>,
    gamma_hat: &DMatrix<f64>,
    beta_mip: &DVector<f64>,
    z: &[bool],
    q: usize,
) -> Result<(DVector<f64>, DVector<f64>, Vec<usize>)> {
    let p = xi_hat.len();
    let keep = (p + q) / 2;
    if keep < q {
        return Err(Error::InvalidConfig(format!(
            "refinement set size {keep} is below q = {q}"
        )));
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        beta_mip[a]
            .abs()
            .partial_cmp(&beta_mip[b].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let indices: Vec<usize> = {
        let mut v = order[..keep].to_vec();
        v.sort_unstable();
        v
    };

    let delta = if q == 0 {
        DVector::zeros(0)
    } else {
        let sub_gamma = gamma_hat.select_rows(&indices);
        let sub_xi = xi_hat.select_rows(&indices);
        crate::linalg::least_squares(&sub_gamma, &sub_xi, Error::RankDeficientSubmatrix)?
    };
    let beta = masked_beta(xi_hat, gamma_hat, &delta, z);
    Ok((delta, beta, indices))
}

fn masked_beta(
    xi_hat: &DVector<f64>,
    gamma_hat: &DMatrix<f64>,
    delta: &DVector<f64>,
    z: &[bool],
) -> DVector<f64> {
    let raw = xi_hat - gamma_hat * delta;
    DVector::from_fn(xi_hat.len(), |i, _| if z[i] { raw[i] } else { 0.0 })
}

/// First-stage estimates shared by Spar and the null-treatments baseline:
/// factor fit, marginal regression, γ̂, and the threshold inputs.
pub struct FirstStage {
    pub factor: FactorFit,
    pub regression: RegressionFit,
    pub gamma: GammaHat,
    pub sigma2_hat: f64,
    pub factor_ms: f64,
    pub regression_ms: f64,
}

/// Runs factor and regression estimation on centered data, branching on
/// whether the sample outnumbers the treatments.
pub fn first_stage(x: &DMatrix<f64>, y: &DVector<f64>, q: usize, seed: u64) -> Result<FirstStage> {
    let (n, p) = (x.nrows(), x.ncols());
    let low_dim = n > p;

    let t0 = Instant::now();
    let factor = if low_dim {
        let mut fit = if q == 0 {
            diagonal_factor_fit(x)
        } else {
            factor::fa_mle(x, q).map_err(|e| e.in_stage("factor"))?
        };
        // The γ̂ transform in this branch runs off the sample covariance.
        let mut cov = sample_cov(x);
        repair_pd(&mut cov, 1e-8);
        fit.sigma_x_hat = cov;
        fit
    } else {
        let alpha = if q == 0 {
            DMatrix::zeros(p, 0)
        } else {
            factor::fa_pca(x, q).map_err(|e| e.in_stage("factor"))?
        };
        let (sigma_x, sigma_eps) =
            factor::poet(x, q, POET_DEFAULT_C).map_err(|e| e.in_stage("factor"))?;
        FactorFit {
            alpha_hat: alpha,
            sigma_x_hat: sigma_x,
            sigma_eps_hat: sigma_eps,
            q,
            method: FactorMethod::PcaPoet,
            eigenvalues: vec![],
            em_iterations: 0,
        }
    };
    let factor_ms = t0.elapsed().as_secs_f64() * 1e3;

    let t1 = Instant::now();
    let regression = if low_dim {
        regress::ols(x, y).map_err(|e| e.in_stage("regression"))?
    } else {
        regress::debiased_lasso(x, y, seed).map_err(|e| e.in_stage("regression"))?
    };
    let regression_ms = t1.elapsed().as_secs_f64() * 1e3;

    let gamma = factor::gamma_from(&factor).map_err(|e| e.in_stage("gamma"))?;
    let sigma2_hat = estimate_sigma2(&factor.sigma_eps_hat, regression.sigma_resid2);
    Ok(FirstStage {
        factor,
        regression,
        gamma,
        sigma2_hat,
        factor_ms,
        regression_ms,
    })
}

/// Factor fit with no factors: a pure diagonal noise model.
fn diagonal_factor_fit(x: &DMatrix<f64>) -> FactorFit {
    let p = x.ncols();
    let cov = sample_cov(x);
    let diag = DMatrix::from_diagonal(&cov.diagonal());
    FactorFit {
        alpha_hat: DMatrix::zeros(p, 0),
        sigma_x_hat: cov,
        sigma_eps_hat: diag,
        q: 0,
        method: FactorMethod::Mle,
        eigenvalues: vec![],
        em_iterations: 0,
    }
}

/// Centers (and if needed residualizes) a dataset for estimation.
pub fn prepare(d: &Dataset) -> Result<(DMatrix<f64>, DVector<f64>)> {
    validate_dataset(d)?;
    let cleaned = if d.w.is_some() {
        residualize_on_confounders(d)?
    } else {
        let x = center_columns(&d.x)?;
        let mean_y = d.y.sum() / d.y.len() as f64;
        let y = d.y.map(|v| v - mean_y);
        Dataset { x, y, w: None }
    };
    Ok((cleaned.x, cleaned.y))
}

fn default_q_max(n: usize, p: usize) -> usize {
    let lim = n.min(p);
    lim.saturating_sub(5).min(10).max(1)
}

/// End-to-end Spar fit.
pub fn spar_fit(d: &Dataset, cfg: &SparConfig) -> Result<SparResult> {
    let (x, y) = prepare(d)?;
    let (n, p) = (x.nrows(), x.ncols());

    let q_used = match cfg.q {
        Some(q) => q,
        None => factor::select_q(&x, default_q_max(n, p)).map_err(|e| e.in_stage("select-q"))?,
    };

    let stage = first_stage(&x, &y, q_used, cfg.seed)?;

    let t2 = Instant::now();
    let t = match cfg.threshold_override {
        Some(t) => t,
        None => compute_threshold(n, p, stage.sigma2_hat).map_err(|e| e.in_stage("threshold"))?,
    };
    let threshold_ms = t2.elapsed().as_secs_f64() * 1e3;

    let t3 = Instant::now();
    let prob = build_mip(
        stage.regression.xi_hat.clone(),
        stage.gamma.gamma.clone(),
        t,
        cfg.m_bound,
    )
    .map_err(|e| e.in_stage("mip"))?;
    let mip: MipSolution = solve_bnb(&prob, cfg.limits).map_err(|e| e.in_stage("mip"))?;
    let mip_ms = t3.elapsed().as_secs_f64() * 1e3;

    let beta_mip = masked_beta(
        &stage.regression.xi_hat,
        &stage.gamma.gamma,
        &mip.delta,
        &mip.z,
    );

    let t4 = Instant::now();
    let (delta_hat, beta_hat, refine_indices, refine_fallback) = match refine(
        &stage.regression.xi_hat,
        &stage.gamma.gamma,
        &beta_mip,
        &mip.z,
        q_used,
    ) {
        Ok((delta, beta, idx)) => (delta, beta, idx, false),
        Err(Error::RankDeficientSubmatrix(_)) => {
            (mip.delta.clone(), beta_mip.clone(), vec![], true)
        }
        Err(e) => return Err(e.in_stage("refine")),
    };
    let refine_ms = t4.elapsed().as_secs_f64() * 1e3;

    Ok(SparResult {
        beta_hat,
        delta_hat,
        z: mip.z,
        beta_mip,
        t,
        sigma2_hat: stage.sigma2_hat,
        q_used,
        xi_hat: stage.regression.xi_hat,
        gamma_hat: stage.gamma.gamma,
        refine_indices,
        solver_status: mip.status,
        nodes_explored: mip.nodes_explored,
        refine_fallback,
        timings: StageTimings {
            factor_ms: stage.factor_ms,
            regression_ms: stage.regression_ms,
            threshold_ms,
            mip_ms,
            refine_ms,
        },
    })
}
