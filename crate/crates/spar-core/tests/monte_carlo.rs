//! Seeded Monte-Carlo checks of the statistical behavior of the
//! estimators, at sizes small enough for the test suite.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use spar_core::baselines::{deconfounder, DeconfConfig, OutcomeStage};
use spar_core::data::center_columns;
use spar_core::factor::{fa_mle, poet, select_q};
use spar_core::harness::metrics;
use spar_core::linalg::sample_cov;
use spar_core::pipeline::{prepare, spar_fit, SparConfig};
use spar_core::regress::{debiased_lasso, lasso_cv, ridge_cv, scaled_lasso};
use spar_core::simulate::{gen_gwas, gen_highdim, gen_lowdim, GwasConfig, GwasModel, HighDimConfig, LowDimConfig};

fn gaussian(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
}

#[test]
fn select_q_finds_nothing_in_pure_noise() {
    let hits = (0..50u64)
        .filter(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = gaussian(&mut rng, 500, 100);
            let xc = center_columns(&x).unwrap();
            select_q(&xc, 10).unwrap() == 0
        })
        .count();
    assert!(hits >= 45, "q̂ = 0 in only {hits}/50 noise draws");
}

#[test]
fn select_q_finds_three_strong_factors() {
    let hits = (0..50u64)
        .filter(|&seed| {
            let (d, _) = gen_lowdim(&LowDimConfig {
                s: 3,
                seed,
                ..LowDimConfig::default()
            })
            .unwrap();
            let xc = center_columns(&d.x).unwrap();
            select_q(&xc, 8).unwrap() == 3
        })
        .count();
    assert!(hits >= 45, "q̂ = 3 in only {hits}/50 factor draws");
}

#[test]
fn debiased_lasso_tightens_sup_norm_error() {
    // p > n with a strong sparse signal: the de-biased estimate should beat
    // the plain lasso in sup-norm error most of the time.
    let wins: usize = (0..20u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(3_000 + rep);
            let n = 300;
            let p = 500;
            let x = gaussian(&mut rng, n, p);
            let mut beta = DVector::zeros(p);
            for i in 0..5 {
                beta[i] = 1.0;
            }
            let noise = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = &x * &beta + noise;
            let (lasso_b, _) = lasso_cv(&x, &y, 10, rep).unwrap();
            let deb = debiased_lasso(&x, &y, rep).unwrap();
            let lasso_err = (&lasso_b - &beta).amax();
            let deb_err = (&deb.xi_hat - &beta).amax();
            usize::from(deb_err < lasso_err)
        })
        .sum();
    assert!(wins >= 16, "de-biased beat lasso in only {wins}/20 draws");
}

#[test]
fn poet_beats_sample_covariance_on_factor_data() {
    let mut rel_poet = Vec::new();
    let mut rel_sample = Vec::new();
    for rep in 0..20u64 {
        let (d, gt) = gen_highdim(&HighDimConfig {
            n: 300,
            p: 200,
            q: 3,
            s: 5,
            seed: 4_000 + rep,
            ..HighDimConfig::default()
        })
        .unwrap();
        let alpha = gt.alpha.unwrap();
        let truth = &alpha * alpha.transpose() + gt.sigma_eps_x.unwrap();
        let xc = center_columns(&d.x).unwrap();
        let (sigma_poet, _) = poet(&xc, 3, 0.5).unwrap();
        let sigma_sample = sample_cov(&xc);
        rel_poet.push((&sigma_poet - &truth).norm() / truth.norm());
        rel_sample.push((&sigma_sample - &truth).norm() / truth.norm());
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(
        mean(&rel_poet) < mean(&rel_sample),
        "poet {:.4} vs sample {:.4}",
        mean(&rel_poet),
        mean(&rel_sample)
    );
}

#[test]
fn spar_identifies_exactly_without_confounding() {
    // δ = 0 makes the marginal coefficients equal the causal ones, so the
    // pipeline should recover the support essentially always.
    let successes: usize = (0..100u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(5_000 + rep);
            let n = 1000;
            let p = 13;
            let q = 3;
            let alpha = DMatrix::from_fn(p, q, |_, _| rng.random_range(-1.0..1.0));
            let u = gaussian(&mut rng, n, q);
            let eps_x = gaussian(&mut rng, n, p);
            let x = &u * alpha.transpose() + eps_x;
            let mut beta = DVector::zeros(p);
            for i in 0..3 {
                beta[i] = 1.0;
            }
            let eps_y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = &x * &beta + eps_y;
            let d = spar_core::Dataset { x, y, w: None };
            let fit = spar_fit(
                &d,
                &SparConfig {
                    q: Some(3),
                    ..SparConfig::default()
                },
            )
            .unwrap();
            let support: Vec<usize> = (0..p).filter(|&i| fit.beta_hat[i] != 0.0).collect();
            let max_err = (&fit.beta_hat - &beta).amax();
            usize::from(support == vec![0, 1, 2] && max_err < 0.15)
        })
        .sum();
    assert!(successes >= 95, "exact recovery in only {successes}/100 runs");
}

#[test]
fn spar_beats_ols_per_replication_at_s3() {
    let wins: usize = (0..100u64)
        .into_par_iter()
        .map(|rep| {
            let (d, gt) = gen_lowdim(&LowDimConfig {
                s: 3,
                seed: 6_000 + rep,
                ..LowDimConfig::default()
            })
            .unwrap();
            let fit = spar_fit(
                &d,
                &SparConfig {
                    q: Some(3),
                    ..SparConfig::default()
                },
            )
            .unwrap();
            let (x, y) = prepare(&d).unwrap();
            let ols = spar_core::regress::ols(&x, &y).unwrap();
            let spar_mae = metrics(&fit.beta_hat, &gt.beta).unwrap().0;
            let ols_mae = metrics(&ols.xi_hat, &gt.beta).unwrap().0;
            usize::from(spar_mae < ols_mae)
        })
        .sum();
    assert!(wins >= 95, "spar beat OLS in only {wins}/100 runs");
}

#[test]
fn spar_median_bias_small_at_s5() {
    let reps = 100usize;
    let fits: Vec<(DVector<f64>, DVector<f64>)> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let (d, gt) = gen_lowdim(&LowDimConfig {
                s: 5,
                seed: 6_500 + rep,
                ..LowDimConfig::default()
            })
            .unwrap();
            let fit = spar_fit(
                &d,
                &SparConfig {
                    q: Some(3),
                    ..SparConfig::default()
                },
            )
            .unwrap();
            (fit.beta_hat, gt.beta)
        })
        .collect();
    for i in 0..13 {
        let mut biases: Vec<f64> = fits.iter().map(|(b, t)| b[i] - t[i]).collect();
        biases.sort_by(|a, b| a.total_cmp(b));
        let median = 0.5 * (biases[reps / 2 - 1] + biases[reps / 2]);
        assert!(
            median.abs() <= 0.05,
            "coordinate {i}: median bias {median:.4} at s=5"
        );
    }
}

#[test]
fn scaled_lasso_estimates_noise_scale_under_null() {
    for rep in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7_000 + rep);
        let n = 500;
        let p = 50;
        let x = gaussian(&mut rng, n, p);
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let (_, sigma) = scaled_lasso(&x, &y).unwrap();
        let mean_y = y.sum() / n as f64;
        let sd_y = (y.iter().map(|v| (v - mean_y) * (v - mean_y)).sum::<f64>() / n as f64).sqrt();
        assert!(
            (sigma - sd_y).abs() <= 0.1 * sd_y,
            "rep {rep}: sigma {sigma:.4} vs sd(Y) {sd_y:.4}"
        );
    }
}

#[test]
fn deconf_ridge_tracks_plain_ridge_on_gwas() {
    let pairs: Vec<(f64, f64)> = (0..10u64)
        .into_par_iter()
        .map(|rep| {
            let (d, gt) = gen_gwas(&GwasConfig {
                model: GwasModel::Bn,
                n: 400,
                p: 400,
                snr: 5.0,
                seed: 8_000 + rep,
                ..GwasConfig::default()
            })
            .unwrap();
            let beta_dr = deconfounder(
                &d,
                &DeconfConfig {
                    k: 50,
                    outcome_stage: OutcomeStage::Ridge,
                    seed: rep,
                },
            )
            .unwrap();
            let (x, y) = prepare(&d).unwrap();
            let beta_r = ridge_cv(&x, &y, 10, rep).unwrap().xi_hat;
            (
                metrics(&beta_dr, &gt.beta).unwrap().0,
                metrics(&beta_r, &gt.beta).unwrap().0,
            )
        })
        .collect();
    let deconf_mean = pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64;
    let ridge_mean = pairs.iter().map(|p| p.1).sum::<f64>() / pairs.len() as f64;
    let ratio = deconf_mean / ridge_mean;
    assert!(
        (0.85..=1.15).contains(&ratio),
        "deconf(ridge)/ridge MAE ratio {ratio:.3}"
    );
}

#[test]
fn fa_mle_agrees_with_restarted_em_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9_100);
    let n = 120;
    let p = 5;
    let q = 2;
    let alpha_true = DMatrix::from_fn(p, q, |_, _| rng.random_range(-1.0..1.0));
    let u = gaussian(&mut rng, n, q);
    let eps = gaussian(&mut rng, n, p) * 0.6;
    let x = center_columns(&(&u * alpha_true.transpose() + eps)).unwrap();
    let fit = fa_mle(&x, q).unwrap();

    // Oracle: plain EM with 10 random restarts, best log-likelihood kept.
    let s = sample_cov(&x);
    let loglik = |alpha: &DMatrix<f64>, psi: &DVector<f64>| -> f64 {
        let sigma = alpha * alpha.transpose() + DMatrix::from_diagonal(psi);
        let chol = match sigma.clone().cholesky() {
            Some(c) => c,
            None => return f64::NEG_INFINITY,
        };
        let l = chol.l();
        let logdet: f64 = (0..p).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
        -0.5 * (logdet + chol.solve(&s).trace())
    };
    let mut best: Option<(f64, DMatrix<f64>, DVector<f64>)> = None;
    for restart in 0..10 {
        let mut r2 = ChaCha8Rng::seed_from_u64(9_200 + restart);
        let mut alpha = DMatrix::from_fn(p, q, |_, _| r2.random_range(-1.0..1.0));
        let mut psi = DVector::from_element(p, 0.5);
        for _ in 0..4000 {
            let pia = DMatrix::from_fn(p, q, |i, k| alpha[(i, k)] / psi[i]);
            let mut g_inv = alpha.transpose() * &pia;
            for k in 0..q {
                g_inv[(k, k)] += 1.0;
            }
            let g = g_inv.try_inverse().unwrap();
            let b = &g * pia.transpose();
            let sbt = &s * b.transpose();
            let second = &g + &b * &sbt;
            let alpha_new = &sbt * second.try_inverse().unwrap();
            for i in 0..p {
                let cross: f64 = (0..q).map(|k| alpha_new[(i, k)] * sbt[(i, k)]).sum();
                psi[i] = (s[(i, i)] - cross).max(1e-10);
            }
            let done = (&alpha_new - &alpha).amax() < 1e-10;
            alpha = alpha_new;
            if done {
                break;
            }
        }
        let ll = loglik(&alpha, &psi);
        if best.as_ref().map_or(true, |(b, _, _)| ll > *b) {
            best = Some((ll, alpha, psi));
        }
    }
    let (_, alpha_o, psi_o) = best.unwrap();
    let sigma_fit = &fit.sigma_x_hat;
    let sigma_oracle = &alpha_o * alpha_o.transpose() + DMatrix::from_diagonal(&psi_o);
    let rel = (sigma_fit - &sigma_oracle).norm() / sigma_oracle.norm();
    assert!(rel < 0.10, "Σ̂_X differs from the restarted oracle by {rel:.3}");
}
