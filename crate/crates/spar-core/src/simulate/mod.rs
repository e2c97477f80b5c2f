//! Synthetic data generators: the low-dimensional design, the
//! high-dimensional design with optional sparse non-diagonal noise
//! covariance, and three GWAS population-structure models with
//! signal-to-noise rescaling.

mod kmeans;

pub use kmeans::kmeans;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Binomial, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroundTruth};
use crate::error::{Error, Result};
use crate::linalg;

/// SNR grid used in the synthetic GWAS experiments.
pub const SNR_GRID: [f64; 10] = [0.1, 0.5, 0.7, 1.0, 3.0, 5.0, 7.0, 9.0, 11.0, 13.0];

/// Fraction of off-diagonal pairs given nonzero entries in the sparse
/// noise covariance generator.
pub const SPARSE_COV_RATE: f64 = 0.05;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LowDimConfig {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub s: usize,
    pub seed: u64,
}

impl Default for LowDimConfig {
    fn default() -> Self {
        LowDimConfig {
            n: 1000,
            p: 13,
            q: 3,
            s: 3,
            seed: 0,
        }
    }
}

impl LowDimConfig {
    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::InvalidConfig("n and p must be positive".into()));
        }
        if self.s < 1 || self.s > self.p {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= s <= p, got s = {}, p = {}",
                self.s, self.p
            )));
        }
        if self.q > self.p {
            return Err(Error::InvalidConfig("q must not exceed p".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HighDimConfig {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub s: usize,
    pub noise_offdiag_mean: f64,
    pub noise_offdiag_sd: f64,
    pub seed: u64,
}

impl Default for HighDimConfig {
    fn default() -> Self {
        HighDimConfig {
            n: 300,
            p: 300,
            q: 3,
            s: 5,
            noise_offdiag_mean: 0.0,
            noise_offdiag_sd: 0.0,
            seed: 0,
        }
    }
}

impl HighDimConfig {
    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::InvalidConfig("n and p must be positive".into()));
        }
        if self.s > self.p || self.q > self.p {
            return Err(Error::InvalidConfig("need s <= p and q <= p".into()));
        }
        if self.noise_offdiag_sd < 0.0 {
            return Err(Error::InvalidConfig("noise sd must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GwasModel {
    Bn,
    Psd,
    Spatial,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GwasConfig {
    pub model: GwasModel,
    pub n: usize,
    pub p: usize,
    pub d: usize,
    pub snr: f64,
    pub causal_fraction: f64,
    pub causal_value: f64,
    pub perturb_null_beta: bool,
    /// Optional per-SNP (allele frequency, F_ST) pairs; synthesized when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freq_pairs: Option<Vec<(f64, f64)>>,
    pub seed: u64,
}

impl Default for GwasConfig {
    fn default() -> Self {
        GwasConfig {
            model: GwasModel::Bn,
            n: 1000,
            p: 1000,
            d: 3,
            snr: 1.0,
            causal_fraction: 0.01,
            causal_value: 0.5,
            perturb_null_beta: false,
            freq_pairs: None,
            seed: 0,
        }
    }
}

impl GwasConfig {
    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::InvalidConfig("n and p must be positive".into()));
        }
        if !(self.causal_fraction > 0.0 && self.causal_fraction < 1.0) {
            return Err(Error::InvalidConfig(
                "causal_fraction must lie in (0, 1)".into(),
            ));
        }
        if !(self.snr > 0.0) {
            return Err(Error::InvalidConfig("snr must be positive".into()));
        }
        if self.d != 3 {
            return Err(Error::InvalidConfig(
                "the population models are defined for d = 3".into(),
            ));
        }
        Ok(())
    }
}

/// Variance shares (genetic, confounder, noise) of the simulated trait.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrWeights {
    pub v_gene: f64,
    pub v_conf: f64,
    pub v_noise: f64,
}

/// Splits total variance so that `(v_gene + v_conf) / v_noise = snr`
/// with `v_gene = v_conf` and the three shares summing to one.
pub fn snr_weights(snr: f64) -> Result<SnrWeights> {
    if !(snr > 0.0) {
        return Err(Error::InvalidConfig(format!("snr must be > 0, got {snr}")));
    }
    let v_noise = 1.0 / (1.0 + snr);
    let v_gene = snr / (2.0 * (1.0 + snr));
    Ok(SnrWeights {
        v_gene,
        v_conf: v_gene,
        v_noise,
    })
}

fn sample_sd(v: &DVector<f64>) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let mean = v.sum() / n as f64;
    let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
    (ss / (n as f64 - 1.0)).sqrt()
}

/// Rescales the confounder and noise components of the trait so the three
/// addends carry the requested variance shares.
pub fn snr_rescale(
    lambda_vec: &DVector<f64>,
    eps_vec: &DVector<f64>,
    gene_signal: &DVector<f64>,
    weights: &SnrWeights,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let sd_gene = sample_sd(gene_signal);
    let sd_lambda = sample_sd(lambda_vec);
    let sd_eps = sample_sd(eps_vec);
    if sd_gene <= 0.0 || sd_lambda <= 0.0 || sd_eps <= 0.0 {
        return Err(Error::DegenerateSignal(format!(
            "component sds must be positive, got gene {sd_gene:.3e}, conf {sd_lambda:.3e}, noise {sd_eps:.3e}"
        )));
    }
    let base = sd_gene / weights.v_gene.sqrt();
    let lam_scale = base * weights.v_conf.sqrt() / sd_lambda;
    let eps_scale = base * weights.v_noise.sqrt() / sd_eps;
    Ok((lambda_vec * lam_scale, eps_vec * eps_scale))
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn normal_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

fn step_beta(p: usize, s: usize) -> DVector<f64> {
    DVector::from_fn(p, |i, _| if i < s { 1.0 } else { 0.0 })
}

fn assemble_factor_model(
    beta: DVector<f64>,
    alpha: DMatrix<f64>,
    delta: DVector<f64>,
    u: DMatrix<f64>,
    eps_x: DMatrix<f64>,
    eps_y: DVector<f64>,
    sigma_eps_x: DMatrix<f64>,
) -> (Dataset, GroundTruth) {
    let x = &u * alpha.transpose() + eps_x;
    let y = &x * &beta + &u * &delta + eps_y;
    let q = alpha.ncols();
    let d = Dataset { x, y, w: None };
    let gt = GroundTruth {
        beta,
        alpha: Some(alpha),
        delta: Some(delta),
        eta: None,
        lambda_w: None,
        sigma_eps_x: Some(sigma_eps_x),
        u: Some(u),
        q,
    };
    (d, gt)
}

/// Low-dimensional design: unit effects on the first `s` treatments,
/// unit confounder effect, uniform loadings, standard normal noise.
pub fn gen_lowdim(cfg: &LowDimConfig) -> Result<(Dataset, GroundTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let beta = step_beta(cfg.p, cfg.s);
    let delta = DVector::from_element(cfg.q, 1.0);
    let alpha = uniform_matrix(&mut rng, cfg.p, cfg.q, -1.0, 1.0);
    let u = normal_matrix(&mut rng, cfg.n, cfg.q);
    let eps_x = normal_matrix(&mut rng, cfg.n, cfg.p);
    let eps_y = normal_vector(&mut rng, cfg.n);
    Ok(assemble_factor_model(
        beta,
        alpha,
        delta,
        u,
        eps_x,
        eps_y,
        DMatrix::identity(cfg.p, cfg.p),
    ))
}

/// High-dimensional design: treatment noise variance 2, optionally with a
/// sparse non-diagonal noise covariance.
pub fn gen_highdim(cfg: &HighDimConfig) -> Result<(Dataset, GroundTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let beta = step_beta(cfg.p, cfg.s);
    let alpha = uniform_matrix(&mut rng, cfg.p, cfg.q, -1.0, 1.0);
    let delta = DVector::from_fn(cfg.q, |_, _| rng.random_range(-1.0..1.0));
    let u = normal_matrix(&mut rng, cfg.n, cfg.q);

    let diagonal_noise = cfg.noise_offdiag_mean == 0.0 && cfg.noise_offdiag_sd == 0.0;
    let (eps_x, sigma) = if diagonal_noise {
        let sigma = DMatrix::from_diagonal_element(cfg.p, cfg.p, 2.0);
        let scale = 2.0_f64.sqrt();
        (normal_matrix(&mut rng, cfg.n, cfg.p) * scale, sigma)
    } else {
        let sigma = gen_sparse_noise_cov(
            cfg.p,
            cfg.noise_offdiag_mean,
            cfg.noise_offdiag_sd,
            SPARSE_COV_RATE,
            cfg.seed.wrapping_add(1),
        )?;
        let chol = sigma.clone().cholesky().ok_or_else(|| {
            Error::NotPositiveDefinite("repaired noise covariance".into())
        })?;
        let z = normal_matrix(&mut rng, cfg.n, cfg.p);
        (z * chol.l().transpose(), sigma)
    };
    let eps_y = normal_vector(&mut rng, cfg.n);
    Ok(assemble_factor_model(beta, alpha, delta, u, eps_x, eps_y, sigma))
}

/// Sparse symmetric covariance with diagonal 2: a random `sparsity_rate`
/// fraction of off-diagonal pairs get N(mean, sd²) draws, and the diagonal
/// is inflated by `|λ_min| + 0.05` if the result is not positive definite.
pub fn gen_sparse_noise_cov(
    p: usize,
    mean: f64,
    sd: f64,
    sparsity_rate: f64,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if p == 0 {
        return Err(Error::InvalidConfig("p must be positive".into()));
    }
    if sd < 0.0 {
        return Err(Error::InvalidConfig("sd must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cov = DMatrix::from_diagonal_element(p, p, 2.0);
    for i in 0..p {
        for j in (i + 1)..p {
            if rng.random_range(0.0..1.0) < sparsity_rate {
                let z: f64 = rng.sample(StandardNormal);
                let v = mean + sd * z;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
    }
    linalg::repair_pd(&mut cov, 0.05);
    Ok(cov)
}

/// Population structure draw for the three GWAS models: `S` mixes `n`
/// individuals over `d` populations and `Γ` maps populations to per-SNP
/// allele frequencies.
pub fn population_structure(
    model: GwasModel,
    n: usize,
    p: usize,
    d: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    population_structure_with(model, n, p, d, None, &mut rng)
}

fn population_structure_with(
    model: GwasModel,
    n: usize,
    p: usize,
    d: usize,
    freq_pairs: Option<&[(f64, f64)]>,
    rng: &mut ChaCha8Rng,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if d != 3 {
        return Err(Error::InvalidConfig(
            "population models are defined for d = 3".into(),
        ));
    }
    if n == 0 || p == 0 {
        return Err(Error::InvalidConfig("n and p must be positive".into()));
    }
    let gamma = match model {
        GwasModel::Bn | GwasModel::Psd => balding_nichols_loadings(p, d, freq_pairs, rng)?,
        GwasModel::Spatial => {
            let mut g = DMatrix::zeros(d, p);
            for i in 0..p {
                g[(0, i)] = 0.9 * rng.random_range(0.0..0.5);
                g[(1, i)] = 0.9 * rng.random_range(0.0..0.5);
                g[(2, i)] = 0.05;
            }
            g
        }
    };
    let s = match model {
        GwasModel::Bn => {
            // One-hot membership over three subpopulations with HapMap-style
            // proportions 60/210, 60/210, 90/210.
            let probs = [60.0 / 210.0, 60.0 / 210.0, 90.0 / 210.0];
            let mut s = DMatrix::zeros(n, d);
            for i in 0..n {
                let u = rng.random_range(0.0..1.0);
                let k = if u < probs[0] {
                    0
                } else if u < probs[0] + probs[1] {
                    1
                } else {
                    2
                };
                s[(i, k)] = 1.0;
            }
            s
        }
        GwasModel::Psd => {
            // Dirichlet(0.5, 0.5, 0.5) via normalized Gamma draws.
            let g = Gamma::new(0.5, 1.0).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            let mut s = DMatrix::zeros(n, d);
            for i in 0..n {
                let mut draws = [0.0; 3];
                let mut total = 0.0;
                for item in &mut draws {
                    let v: f64 = g.sample(rng);
                    *item = v;
                    total += v;
                }
                if total <= 0.0 {
                    total = 1.0;
                    draws = [1.0 / 3.0; 3];
                }
                for k in 0..3 {
                    s[(i, k)] = draws[k] / total;
                }
            }
            s
        }
        GwasModel::Spatial => {
            let beta = Beta::new(0.1, 0.1).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            let mut s = DMatrix::zeros(n, d);
            for i in 0..n {
                s[(i, 0)] = beta.sample(rng);
                s[(i, 1)] = beta.sample(rng);
                s[(i, 2)] = 1.0;
            }
            s
        }
    };
    Ok((s, gamma))
}

fn balding_nichols_loadings(
    p: usize,
    d: usize,
    freq_pairs: Option<&[(f64, f64)]>,
    rng: &mut ChaCha8Rng,
) -> Result<DMatrix<f64>> {
    let mut gamma = DMatrix::zeros(d, p);
    for i in 0..p {
        let (freq, fst) = match freq_pairs {
            Some(pairs) => {
                if pairs.is_empty() {
                    return Err(Error::InvalidConfig("empty frequency pair table".into()));
                }
                pairs[i % pairs.len()]
            }
            // Synthetic stand-ins for HapMap-derived per-SNP values.
            None => (rng.random_range(0.05..0.95), rng.random_range(0.01..0.10)),
        };
        if !(freq > 0.0 && freq < 1.0) || !(fst > 0.0 && fst < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "frequency pair ({freq}, {fst}) out of range"
            )));
        }
        let a = freq * (1.0 - fst) / fst;
        let b = (1.0 - freq) * (1.0 - fst) / fst;
        let dist = Beta::new(a, b).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for k in 0..d {
            gamma[(k, i)] = dist.sample(rng);
        }
    }
    Ok(gamma)
}

/// The three rescaled addends of the simulated trait.
#[derive(Debug, Clone)]
pub struct TraitComponents {
    pub gene_signal: DVector<f64>,
    pub confounder: DVector<f64>,
    pub noise: DVector<f64>,
}

/// Synthetic GWAS draw: binomial genotypes over a latent population
/// structure, a sparse causal trait, cluster-level confounding, and
/// heteroscedastic noise rescaled to the requested SNR.
pub fn gen_gwas(cfg: &GwasConfig) -> Result<(Dataset, GroundTruth)> {
    gen_gwas_with_components(cfg).map(|(d, gt, _)| (d, gt))
}

/// As [`gen_gwas`], additionally returning the trait addends so variance
/// shares can be inspected.
pub fn gen_gwas_with_components(
    cfg: &GwasConfig,
) -> Result<(Dataset, GroundTruth, TraitComponents)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (s, gamma) =
        population_structure_with(cfg.model, cfg.n, cfg.p, cfg.d, cfg.freq_pairs.as_deref(), &mut rng)?;

    // Allele frequencies, clipped away from 0/1 to avoid monomorphic SNPs.
    let mut freqs = &s * &gamma;
    for v in freqs.iter_mut() {
        *v = v.clamp(0.01, 0.99);
    }
    let mut a = DMatrix::zeros(cfg.n, cfg.p);
    for i in 0..cfg.n {
        for j in 0..cfg.p {
            let bin = Binomial::new(2, freqs[(i, j)])
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            a[(i, j)] = bin.sample(&mut rng) as f64;
        }
    }

    let n_causal = (cfg.causal_fraction * cfg.p as f64).ceil() as usize;
    let mut beta = DVector::zeros(cfg.p);
    for j in 0..n_causal.min(cfg.p) {
        beta[j] = cfg.causal_value;
    }
    if cfg.perturb_null_beta {
        for j in n_causal.min(cfg.p)..cfg.p {
            beta[j] = rng.random_range(-0.05..0.05);
        }
    }
    let gene_signal = &a * &beta;

    // Cluster-level confounder: the cluster label itself is the raw value.
    let labels = kmeans(&s, 3, cfg.seed.wrapping_add(0x6b6d65616e73), 100)?;
    let lambda = DVector::from_fn(cfg.n, |i, _| labels[i] as f64);

    // Heteroscedastic noise with inverse-gamma cluster variances.
    let inv_gamma_src = Gamma::new(3.0, 1.0).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let tau2: Vec<f64> = (0..3).map(|_| 1.0 / inv_gamma_src.sample(&mut rng)).collect();
    let eps = DVector::from_fn(cfg.n, |i, _| {
        let z: f64 = rng.sample(StandardNormal);
        z * tau2[labels[i] - 1].sqrt()
    });

    let weights = snr_weights(cfg.snr)?;
    let (lambda, eps) = snr_rescale(&lambda, &eps, &gene_signal, &weights)?;
    let y = &gene_signal + &lambda + &eps;

    let d = Dataset { x: a, y, w: None };
    let gt = GroundTruth {
        beta,
        alpha: None,
        delta: None,
        eta: None,
        lambda_w: None,
        sigma_eps_x: None,
        u: Some(s),
        q: cfg.d,
    };
    Ok((
        d,
        gt,
        TraitComponents {
            gene_signal,
            confounder: lambda,
            noise: eps,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{min_eigenvalue, sample_cov};

    #[test]
    fn lowdim_beta_and_delta_shapes() {
        let cfg = LowDimConfig {
            s: 3,
            seed: 11,
            ..LowDimConfig::default()
        };
        let (_, gt) = gen_lowdim(&cfg).unwrap();
        for i in 0..13 {
            let expect = if i < 3 { 1.0 } else { 0.0 };
            assert_eq!(gt.beta[i], expect);
        }
        let delta = gt.delta.unwrap();
        assert_eq!(delta, DVector::from_element(3, 1.0));
    }

    #[test]
    fn lowdim_deterministic_given_seed() {
        let cfg = LowDimConfig {
            n: 50,
            s: 2,
            seed: 5,
            ..LowDimConfig::default()
        };
        let (d1, _) = gen_lowdim(&cfg).unwrap();
        let (d2, _) = gen_lowdim(&cfg).unwrap();
        assert_eq!(d1.content_hash(), d2.content_hash());
        assert_eq!(d1, d2);
    }

    #[test]
    fn highdim_defaults_have_five_ones() {
        let cfg = HighDimConfig {
            n: 40,
            p: 60,
            seed: 3,
            ..HighDimConfig::default()
        };
        let (_, gt) = gen_highdim(&cfg).unwrap();
        assert_eq!(gt.sparsity().s, 5);
        assert_eq!(gt.sparsity().support, vec![0, 1, 2, 3, 4]);
        let sig = gt.sigma_eps_x.unwrap();
        assert_eq!(sig, DMatrix::from_diagonal_element(60, 60, 2.0));
    }

    #[test]
    fn sparse_cov_degenerate_draw_is_2i() {
        let cov = gen_sparse_noise_cov(20, 0.0, 0.0, 0.05, 9).unwrap();
        assert_eq!(cov, DMatrix::from_diagonal_element(20, 20, 2.0));
    }

    #[test]
    fn sparse_cov_symmetric_and_pd() {
        let cov = gen_sparse_noise_cov(50, 0.1, 0.2, 0.05, 13).unwrap();
        assert!((&cov - cov.transpose()).amax() == 0.0);
        assert!(min_eigenvalue(&cov) > 0.0);
        let off = (0..50)
            .flat_map(|i| (0..50).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && cov[(i, j)] != 0.0)
            .count();
        assert!(off > 0);
    }

    #[test]
    fn highdim_nondiagonal_noise_is_pd() {
        let cfg = HighDimConfig {
            n: 30,
            p: 50,
            noise_offdiag_mean: 0.1,
            noise_offdiag_sd: 0.2,
            seed: 17,
            ..HighDimConfig::default()
        };
        let (_, gt) = gen_highdim(&cfg).unwrap();
        let sig = gt.sigma_eps_x.unwrap();
        assert!(min_eigenvalue(&sig) > 0.0);
        assert!((&sig - sig.transpose()).amax() == 0.0);
    }

    #[test]
    fn snr_weights_algebra() {
        let w = snr_weights(1.0).unwrap();
        assert!((w.v_gene - 0.25).abs() < 1e-15);
        assert!((w.v_conf - 0.25).abs() < 1e-15);
        assert!((w.v_noise - 0.5).abs() < 1e-15);
        let w3 = snr_weights(3.0).unwrap();
        assert!((w3.v_gene - 0.375).abs() < 1e-15);
        assert!((w3.v_noise - 0.25).abs() < 1e-15);
        for snr in SNR_GRID {
            let w = snr_weights(snr).unwrap();
            assert!((w.v_gene + w.v_conf + w.v_noise - 1.0).abs() < 1e-12);
            assert!(((w.v_gene + w.v_conf) / w.v_noise - snr).abs() < 1e-10);
        }
        assert!(snr_weights(0.0).is_err());
    }

    #[test]
    fn snr_rescale_matches_formula() {
        // Ten-sample instance evaluated directly against the two displayed
        // rescaling formulas.
        let gene = DVector::from_column_slice(&[1.0, 2.0, 0.5, -1.0, 3.0, 0.0, 1.5, -2.0, 0.2, 0.8]);
        let lam = DVector::from_column_slice(&[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 1.0, 2.0, 3.0, 1.0]);
        let eps = DVector::from_column_slice(&[0.1, -0.2, 0.3, 0.0, -0.1, 0.2, 0.05, -0.3, 0.15, 0.0]);
        let w = snr_weights(3.0).unwrap();
        let (lam2, eps2) = snr_rescale(&lam, &eps, &gene, &w).unwrap();
        let sd = |v: &DVector<f64>| {
            let m = v.sum() / v.len() as f64;
            (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
        };
        let expect_lam = &lam * (sd(&gene) / w.v_gene.sqrt()) * (w.v_conf.sqrt() / sd(&lam));
        let expect_eps = &eps * (sd(&gene) / w.v_gene.sqrt()) * (w.v_noise.sqrt() / sd(&eps));
        assert!((lam2.clone() - expect_lam).amax() < 1e-12);
        assert!((eps2 - expect_eps).amax() < 1e-12);
        // Equal gene/confounder weights force equal sds.
        assert!((sd(&lam2) - sd(&gene) * (w.v_conf / w.v_gene).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn snr_rescale_rejects_constant_component() {
        let gene = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        let lam = DVector::from_element(3, 2.0);
        let eps = DVector::from_column_slice(&[0.1, -0.1, 0.2]);
        let w = snr_weights(1.0).unwrap();
        assert!(matches!(
            snr_rescale(&lam, &eps, &gene, &w),
            Err(Error::DegenerateSignal(_))
        ));
    }

    #[test]
    fn spatial_gamma_third_row_constant() {
        let (s, gamma) = population_structure(GwasModel::Spatial, 20, 30, 3, 2).unwrap();
        for i in 0..30 {
            assert_eq!(gamma[(2, i)], 0.05);
            assert!(gamma[(0, i)] >= 0.0 && gamma[(0, i)] <= 0.45);
        }
        for i in 0..20 {
            assert_eq!(s[(i, 2)], 1.0);
        }
    }

    #[test]
    fn psd_rows_on_simplex() {
        let (s, _) = population_structure(GwasModel::Psd, 50, 10, 3, 4).unwrap();
        for i in 0..50 {
            let row_sum: f64 = (0..3).map(|k| s[(i, k)]).sum();
            assert!((row_sum - 1.0).abs() < 1e-12);
            assert!((0..3).all(|k| s[(i, k)] >= 0.0));
        }
    }

    #[test]
    fn bn_rows_one_hot() {
        let (s, _) = population_structure(GwasModel::Bn, 100, 10, 3, 4).unwrap();
        for i in 0..100 {
            let ones = (0..3).filter(|&k| s[(i, k)] == 1.0).count();
            let zeros = (0..3).filter(|&k| s[(i, k)] == 0.0).count();
            assert_eq!(ones, 1);
            assert_eq!(zeros, 2);
        }
    }

    #[test]
    fn bn_small_fst_concentrates_at_freq() {
        // As F -> 0 the Balding-Nichols draw collapses onto the base
        // frequency; check the variance shrinks accordingly.
        let pairs = vec![(0.4, 0.0001)];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gamma = balding_nichols_loadings(200, 3, Some(&pairs), &mut rng).unwrap();
        let mean: f64 = gamma.iter().sum::<f64>() / (3.0 * 200.0);
        let var: f64 =
            gamma.iter().map(|v| (v - 0.4) * (v - 0.4)).sum::<f64>() / (3.0 * 200.0);
        assert!((mean - 0.4).abs() < 0.01);
        assert!(var < 0.4 * 0.6 * 0.001);
    }

    #[test]
    fn gwas_genotypes_in_range_and_beta_sparse() {
        let cfg = GwasConfig {
            n: 80,
            p: 120,
            snr: 1.0,
            seed: 6,
            ..GwasConfig::default()
        };
        let (d, gt) = gen_gwas(&cfg).unwrap();
        assert!(d.x.iter().all(|&v| v == 0.0 || v == 1.0 || v == 2.0));
        let expect_nonzero = (0.01_f64 * 120.0).ceil() as usize;
        assert_eq!(gt.sparsity().s, expect_nonzero);
        assert!(gt.beta.iter().take(expect_nonzero).all(|&b| b == 0.5));
    }

    #[test]
    fn gwas_perturbed_nulls_are_small_uniform() {
        let cfg = GwasConfig {
            n: 60,
            p: 100,
            snr: 1.0,
            perturb_null_beta: true,
            seed: 21,
            ..GwasConfig::default()
        };
        let (_, gt) = gen_gwas(&cfg).unwrap();
        let n_causal = 1;
        for j in n_causal..100 {
            assert!(gt.beta[j].abs() < 0.05);
        }
        assert!(gt.beta.iter().skip(n_causal).any(|&b| b != 0.0));
    }

    #[test]
    fn factor_generators_match_population_covariance() {
        // Empirical Cov(X) converges to ααᵀ + Σ_εx.
        let cfg = LowDimConfig {
            n: 20000,
            s: 3,
            seed: 12,
            ..LowDimConfig::default()
        };
        let (d, gt) = gen_lowdim(&cfg).unwrap();
        let xc = crate::data::center_columns(&d.x).unwrap();
        let emp = sample_cov(&xc);
        let alpha = gt.alpha.unwrap();
        let pop = &alpha * alpha.transpose() + gt.sigma_eps_x.unwrap();
        let rel = (&emp - &pop).norm() / pop.norm();
        assert!(rel < 0.1, "relative Frobenius error {rel}");
    }
}
