//! `spar` — simulate benchmark data, fit sparse causal-effect estimators,
//! poke the slab solver, and run Monte-Carlo experiment grids.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use spar_core::baselines::{DeconfConfig, LmsConfig, OutcomeStage};
use spar_core::bundle::{read_bundle, write_bundle, BundleMeta};
use spar_core::error::Error;
use spar_core::harness::{
    preset, run_experiment, write_results, ExperimentSpec, OutputFormat,
};
use spar_core::mip::{solve_bnb, MipProblem, SolveLimits};
use spar_core::pipeline::{spar_fit, StageTimings};
use spar_core::simulate::{
    gen_gwas, gen_highdim, gen_lowdim, GwasConfig, GwasModel, HighDimConfig, LowDimConfig,
};
use spar_core::{regress, SparConfig};

#[derive(Parser)]
#[command(name = "spar", version, about = "Sparse multi-treatment causal effect estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Lowdim,
    Highdim,
    GwasBn,
    GwasPsd,
    GwasSpatial,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Spar,
    Null,
    DeconfLasso,
    DeconfRidge,
    Lasso,
    Ridge,
    Ols,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset bundle directory.
    Simulate {
        /// JSON config file; overrides the individual flags when given.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "lowdim")]
        model: ModelArg,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        q: Option<usize>,
        /// Number of nonzero causal effects (factor-model designs).
        #[arg(long)]
        s: Option<usize>,
        /// Signal-to-noise ratio (GWAS designs).
        #[arg(long)]
        snr: Option<f64>,
        /// Off-diagonal mean of the treatment noise covariance.
        #[arg(long)]
        offdiag_mean: Option<f64>,
        /// Off-diagonal standard deviation of the treatment noise covariance.
        #[arg(long)]
        offdiag_sd: Option<f64>,
        /// Draw the null causal effects from Uniform(-0.05, 0.05).
        #[arg(long)]
        perturb_null_beta: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit an estimator on a dataset bundle.
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "spar")]
        method: MethodArg,
        /// Latent confounder count: AUTO or an integer.
        #[arg(long, default_value = "AUTO")]
        q: String,
        /// Box bound on the sup-norm of the causal effects.
        #[arg(long = "M", default_value_t = 30.0)]
        m_bound: f64,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve a slab-cover problem from its JSON serialization.
    SolveMip {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1_000_000)]
        max_nodes: usize,
        /// Time budget in seconds.
        #[arg(long, default_value_t = 60.0)]
        time_budget: f64,
    },
    /// Run an experiment grid from a spec file or a built-in preset.
    Bench {
        #[arg(long, conflicts_with = "preset")]
        spec: Option<PathBuf>,
        /// fig2 | table1 | fig4 | fig7-bn | fig7-psd | fig7-spatial
        #[arg(long)]
        preset: Option<String>,
        /// Multiplies preset replication counts.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct FitRecord {
    method: String,
    beta_hat: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_hat: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    z: Option<Vec<u8>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta_mip: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma2_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    q_used: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    refine_indices: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    solver_status: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nodes_explored: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    refine_fallback: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timings: Option<StageTimings>,
    wall_ms: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let invalid = e.downcast_ref::<Error>().map_or(false, |err| {
                matches!(
                    err,
                    Error::InvalidConfig(_) | Error::DimensionMismatch(_) | Error::Json(_)
                )
            });
            if invalid {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Simulate {
            config,
            model,
            n,
            p,
            q,
            s,
            snr,
            offdiag_mean,
            offdiag_sd,
            perturb_null_beta,
            seed,
            out,
        } => {
            let (dataset, truth, meta) = if let Some(path) = config {
                let text = fs::read_to_string(&path)?;
                simulate_from_json(&text)?
            } else {
                simulate_from_flags(SimFlags {
                    model,
                    n,
                    p,
                    q,
                    s,
                    snr,
                    offdiag_mean,
                    offdiag_sd,
                    perturb_null_beta,
                    seed,
                })?
            };
            write_bundle(&out, &dataset, Some(&truth), &meta)?;
            println!(
                "wrote bundle to {} (n = {}, p = {})",
                out.display(),
                meta.n,
                meta.p
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Fit {
            input,
            method,
            q,
            m_bound,
            threshold,
            seed,
            out,
        } => {
            let (dataset, _, _) = read_bundle(&input)?;
            let q_opt = parse_q(&q)?;
            let start = Instant::now();
            let record = fit_method(&dataset, method, q_opt, m_bound, threshold, seed)?;
            let mut record = record;
            record.wall_ms = start.elapsed().as_secs_f64() * 1e3;
            let text = serde_json::to_string_pretty(&record)?;
            match &out {
                Some(path) => fs::write(path, &text)?,
                None => println!("{text}"),
            }
            if let Some(path) = out {
                println!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::SolveMip {
            input,
            out,
            max_nodes,
            time_budget,
        } => {
            let prob = MipProblem::from_json(&fs::read_to_string(&input)?)?;
            let sol = solve_bnb(
                &prob,
                SolveLimits {
                    max_nodes,
                    time_budget: std::time::Duration::from_secs_f64(time_budget),
                },
            )?;
            let payload = serde_json::json!({
                "z": sol.z.iter().map(|&b| u8::from(b)).collect::<Vec<_>>(),
                "delta": sol.delta.as_slice(),
                "objective": sol.objective,
                "status": format!("{:?}", sol.status),
                "nodes_explored": sol.nodes_explored,
            });
            let text = serde_json::to_string_pretty(&payload)?;
            match out {
                Some(path) => {
                    fs::write(&path, &text)?;
                    println!("wrote {}", path.display());
                }
                None => println!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench {
            spec,
            preset: preset_name,
            scale,
            jobs,
            out,
        } => {
            if let Some(j) = jobs {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(j)
                    .build_global()
                    .ok();
            }
            let mut specs: Vec<ExperimentSpec> = if let Some(path) = spec {
                let text = fs::read_to_string(&path)?;
                if text.trim_start().starts_with('[') {
                    serde_json::from_str(&text)?
                } else {
                    vec![serde_json::from_str(&text)?]
                }
            } else if let Some(name) = preset_name {
                preset(&name, scale)?
            } else {
                anyhow::bail!(Error::InvalidConfig(
                    "bench needs --spec or --preset".into()
                ));
            };
            if let Ok(seed_text) = std::env::var("SPAR_SEED") {
                let seed: u64 = seed_text
                    .parse()
                    .map_err(|_| Error::InvalidConfig("SPAR_SEED must be an integer".into()))?;
                for s in &mut specs {
                    s.base_seed = seed;
                }
            }
            fs::create_dir_all(&out)?;
            let mut any_failures = false;
            for spec in &specs {
                let started = Instant::now();
                let result = run_experiment(spec)?;
                let csv = out.join(format!("{}.csv", spec.label));
                write_results(&result.rows, &csv, OutputFormat::Csv)?;
                if !result.failures.is_empty() {
                    any_failures = true;
                    let fpath = out.join(format!("{}_failures.json", spec.label));
                    fs::write(&fpath, serde_json::to_string_pretty(&result.failures)?)?;
                }
                println!(
                    "{}: {} rows, {} failures, {:.1}s -> {}",
                    spec.label,
                    result.rows.len(),
                    result.failures.len(),
                    started.elapsed().as_secs_f64(),
                    csv.display()
                );
                for s in &result.summary {
                    println!(
                        "  {:<14} mae {:.4}  rmse {:.4}  tpr {}  fpr {}",
                        s.method,
                        s.mae_mean,
                        s.rmse_mean,
                        s.tpr_mean.map_or("-".into(), |v| format!("{v:.3}")),
                        s.fpr_mean.map_or("-".into(), |v| format!("{v:.2e}")),
                    );
                }
            }
            if any_failures {
                Ok(ExitCode::from(3))
            } else {
                Ok(ExitCode::SUCCESS)
            }
        }
    }
}

struct SimFlags {
    model: ModelArg,
    n: Option<usize>,
    p: Option<usize>,
    q: Option<usize>,
    s: Option<usize>,
    snr: Option<f64>,
    offdiag_mean: Option<f64>,
    offdiag_sd: Option<f64>,
    perturb_null_beta: bool,
    seed: u64,
}

type SimOutput = (
    spar_core::Dataset,
    spar_core::GroundTruth,
    BundleMeta,
);

fn simulate_from_flags(flags: SimFlags) -> anyhow::Result<SimOutput> {
    match flags.model {
        ModelArg::Lowdim => {
            let mut cfg = LowDimConfig::default();
            if let Some(n) = flags.n {
                cfg.n = n;
            }
            if let Some(p) = flags.p {
                cfg.p = p;
            }
            if let Some(q) = flags.q {
                cfg.q = q;
            }
            if let Some(s) = flags.s {
                cfg.s = s;
            }
            cfg.seed = flags.seed;
            let (d, t) = gen_lowdim(&cfg)?;
            let meta = meta_for(&d, flags.seed, "lowdim", serde_json::to_value(&cfg)?);
            Ok((d, t, meta))
        }
        ModelArg::Highdim => {
            let mut cfg = HighDimConfig::default();
            if let Some(n) = flags.n {
                cfg.n = n;
            }
            if let Some(p) = flags.p {
                cfg.p = p;
            }
            if let Some(q) = flags.q {
                cfg.q = q;
            }
            if let Some(s) = flags.s {
                cfg.s = s;
            }
            if let Some(m) = flags.offdiag_mean {
                cfg.noise_offdiag_mean = m;
            }
            if let Some(sd) = flags.offdiag_sd {
                cfg.noise_offdiag_sd = sd;
            }
            cfg.seed = flags.seed;
            let (d, t) = gen_highdim(&cfg)?;
            let meta = meta_for(&d, flags.seed, "highdim", serde_json::to_value(&cfg)?);
            Ok((d, t, meta))
        }
        ModelArg::GwasBn | ModelArg::GwasPsd | ModelArg::GwasSpatial => {
            let mut cfg = GwasConfig {
                model: match flags.model {
                    ModelArg::GwasBn => GwasModel::Bn,
                    ModelArg::GwasPsd => GwasModel::Psd,
                    _ => GwasModel::Spatial,
                },
                ..GwasConfig::default()
            };
            if let Some(n) = flags.n {
                cfg.n = n;
            }
            if let Some(p) = flags.p {
                cfg.p = p;
            }
            if let Some(snr) = flags.snr {
                cfg.snr = snr;
            }
            cfg.perturb_null_beta = flags.perturb_null_beta;
            cfg.seed = flags.seed;
            let name = match cfg.model {
                GwasModel::Bn => "gwas-bn",
                GwasModel::Psd => "gwas-psd",
                GwasModel::Spatial => "gwas-spatial",
            };
            let (d, t) = gen_gwas(&cfg)?;
            let meta = meta_for(&d, flags.seed, name, serde_json::to_value(&cfg)?);
            Ok((d, t, meta))
        }
    }
}

fn simulate_from_json(text: &str) -> anyhow::Result<SimOutput> {
    #[derive(serde::Deserialize)]
    #[serde(tag = "model", rename_all = "kebab-case")]
    enum SimConfig {
        Lowdim(LowDimConfig),
        Highdim(HighDimConfig),
        GwasBn(GwasConfig),
        GwasPsd(GwasConfig),
        GwasSpatial(GwasConfig),
    }
    let cfg: SimConfig = serde_json::from_str(text)?;
    match cfg {
        SimConfig::Lowdim(c) => {
            let (d, t) = gen_lowdim(&c)?;
            let meta = meta_for(&d, c.seed, "lowdim", serde_json::to_value(&c)?);
            Ok((d, t, meta))
        }
        SimConfig::Highdim(c) => {
            let (d, t) = gen_highdim(&c)?;
            let meta = meta_for(&d, c.seed, "highdim", serde_json::to_value(&c)?);
            Ok((d, t, meta))
        }
        SimConfig::GwasBn(mut c) => {
            c.model = GwasModel::Bn;
            let (d, t) = gen_gwas(&c)?;
            let meta = meta_for(&d, c.seed, "gwas-bn", serde_json::to_value(&c)?);
            Ok((d, t, meta))
        }
        SimConfig::GwasPsd(mut c) => {
            c.model = GwasModel::Psd;
            let (d, t) = gen_gwas(&c)?;
            let meta = meta_for(&d, c.seed, "gwas-psd", serde_json::to_value(&c)?);
            Ok((d, t, meta))
        }
        SimConfig::GwasSpatial(mut c) => {
            c.model = GwasModel::Spatial;
            let (d, t) = gen_gwas(&c)?;
            let meta = meta_for(&d, c.seed, "gwas-spatial", serde_json::to_value(&c)?);
            Ok((d, t, meta))
        }
    }
}

fn meta_for(
    d: &spar_core::Dataset,
    seed: u64,
    generator: &str,
    params: serde_json::Value,
) -> BundleMeta {
    BundleMeta {
        n: d.n(),
        p: d.p(),
        r: d.r(),
        seed,
        generator: generator.into(),
        params,
    }
}

fn parse_q(text: &str) -> anyhow::Result<Option<usize>> {
    if text.eq_ignore_ascii_case("auto") {
        return Ok(None);
    }
    let q: usize = text
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("--q must be AUTO or an integer, got '{text}'")))?;
    Ok(Some(q))
}

fn fit_method(
    dataset: &spar_core::Dataset,
    method: MethodArg,
    q: Option<usize>,
    m_bound: f64,
    threshold: Option<f64>,
    seed: u64,
) -> anyhow::Result<FitRecord> {
    let blank = |name: &str, beta: Vec<f64>| FitRecord {
        method: name.to_string(),
        beta_hat: beta,
        delta_hat: None,
        z: None,
        beta_mip: None,
        t: None,
        sigma2_hat: None,
        q_used: None,
        refine_indices: None,
        solver_status: None,
        nodes_explored: None,
        refine_fallback: None,
        timings: None,
        wall_ms: 0.0,
    };
    let record = match method {
        MethodArg::Spar => {
            let cfg = SparConfig {
                q,
                m_bound,
                threshold_override: threshold,
                seed,
                ..SparConfig::default()
            };
            let r = spar_fit(dataset, &cfg)?;
            FitRecord {
                method: "spar".into(),
                beta_hat: r.beta_hat.as_slice().to_vec(),
                delta_hat: Some(r.delta_hat.as_slice().to_vec()),
                z: Some(r.z.iter().map(|&b| u8::from(b)).collect()),
                beta_mip: Some(r.beta_mip.as_slice().to_vec()),
                t: Some(r.t),
                sigma2_hat: Some(r.sigma2_hat),
                q_used: Some(r.q_used),
                refine_indices: Some(r.refine_indices),
                solver_status: Some(format!("{:?}", r.solver_status)),
                nodes_explored: Some(r.nodes_explored),
                refine_fallback: Some(r.refine_fallback),
                timings: Some(r.timings),
                wall_ms: 0.0,
            }
        }
        MethodArg::Null => {
            let beta = spar_core::baselines::fit_null(
                dataset,
                q,
                &LmsConfig {
                    seed,
                    ..LmsConfig::default()
                },
                seed,
            )?;
            blank("null", beta.as_slice().to_vec())
        }
        MethodArg::DeconfLasso | MethodArg::DeconfRidge => {
            let stage = if method == MethodArg::DeconfLasso {
                OutcomeStage::Lasso
            } else {
                OutcomeStage::Ridge
            };
            let k = 50.min(dataset.n().min(dataset.p()).saturating_sub(1));
            let beta = spar_core::baselines::deconfounder(
                dataset,
                &DeconfConfig {
                    k,
                    outcome_stage: stage,
                    seed,
                },
            )?;
            let name = if stage == OutcomeStage::Lasso {
                "deconf-lasso"
            } else {
                "deconf-ridge"
            };
            blank(name, beta.as_slice().to_vec())
        }
        MethodArg::Lasso => {
            let (x, y) = spar_core::pipeline::prepare(dataset)?;
            let (beta, _) = regress::lasso_cv(&x, &y, 10, seed)?;
            blank("lasso", beta.as_slice().to_vec())
        }
        MethodArg::Ridge => {
            let (x, y) = spar_core::pipeline::prepare(dataset)?;
            let fit = regress::ridge_cv(&x, &y, 10, seed)?;
            blank("ridge", fit.xi_hat.as_slice().to_vec())
        }
        MethodArg::Ols => {
            let (x, y) = spar_core::pipeline::prepare(dataset)?;
            let fit = regress::ols(&x, &y)?;
            blank("ols", fit.xi_hat.as_slice().to_vec())
        }
    };
    Ok(record)
}
