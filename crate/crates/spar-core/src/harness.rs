//! Monte-Carlo experiment runner: seeded replications, method registry,
//! error metrics, CSV/JSON outputs, and the built-in experiment presets.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, DeconfConfig, LmsConfig, OutcomeStage};
use crate::bundle::fmt_f64;
use crate::data::{Dataset, GroundTruth};
use crate::error::{Error, Result};
use crate::linalg::hash_str;
use crate::pipeline::{self, SparConfig};
use crate::regress;
use crate::simulate::{
    gen_gwas, gen_highdim, gen_lowdim, GwasConfig, GwasModel, HighDimConfig, LowDimConfig,
    SNR_GRID,
};

pub const ZERO_TOL: f64 = 1e-10;

/// Data-generating scenario for one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "kebab-case")]
pub enum Scenario {
    Lowdim(LowDimConfig),
    Highdim(HighDimConfig),
    Gwas(GwasConfig),
}

impl Scenario {
    pub fn generate(&self, seed: u64) -> Result<(Dataset, GroundTruth)> {
        match self {
            Scenario::Lowdim(cfg) => {
                let mut c = cfg.clone();
                c.seed = seed;
                gen_lowdim(&c)
            }
            Scenario::Highdim(cfg) => {
                let mut c = cfg.clone();
                c.seed = seed;
                gen_highdim(&c)
            }
            Scenario::Gwas(cfg) => {
                let mut c = cfg.clone();
                c.seed = seed;
                gen_gwas(&c)
            }
        }
    }
}

/// A registered estimator with its per-method settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Method {
    Spar {
        #[serde(default)]
        q: Option<usize>,
        #[serde(default = "default_m")]
        m: f64,
    },
    Null {
        #[serde(default)]
        q: Option<usize>,
    },
    DeconfLasso {
        #[serde(default = "default_k")]
        k: usize,
    },
    DeconfRidge {
        #[serde(default = "default_k")]
        k: usize,
    },
    Lasso,
    Ridge,
    Ols,
}

fn default_m() -> f64 {
    30.0
}

fn default_k() -> usize {
    50
}

impl Method {
    pub fn display_name(&self) -> String {
        match self {
            Method::Spar { .. } => "spar".into(),
            Method::Null { .. } => "null".into(),
            Method::DeconfLasso { .. } => "deconf-lasso".into(),
            Method::DeconfRidge { .. } => "deconf-ridge".into(),
            Method::Lasso => "lasso".into(),
            Method::Ridge => "ridge".into(),
            Method::Ols => "ols".into(),
        }
    }

    /// Fits the estimator and returns β̂.
    pub fn fit(&self, d: &Dataset, seed: u64) -> Result<DVector<f64>> {
        match self {
            Method::Spar { q, m } => {
                let cfg = SparConfig {
                    q: *q,
                    m_bound: *m,
                    seed,
                    ..SparConfig::default()
                };
                Ok(pipeline::spar_fit(d, &cfg)?.beta_hat)
            }
            Method::Null { q } => {
                let cfg = LmsConfig {
                    seed,
                    ..LmsConfig::default()
                };
                baselines::fit_null(d, *q, &cfg, seed)
            }
            Method::DeconfLasso { k } => baselines::deconfounder(
                d,
                &DeconfConfig {
                    k: *k,
                    outcome_stage: OutcomeStage::Lasso,
                    seed,
                },
            ),
            Method::DeconfRidge { k } => baselines::deconfounder(
                d,
                &DeconfConfig {
                    k: *k,
                    outcome_stage: OutcomeStage::Ridge,
                    seed,
                },
            ),
            Method::Lasso => {
                let (x, y) = pipeline::prepare(d)?;
                Ok(regress::lasso_cv(&x, &y, 10, seed)?.0)
            }
            Method::Ridge => {
                let (x, y) = pipeline::prepare(d)?;
                Ok(regress::ridge_cv(&x, &y, 10, seed)?.xi_hat)
            }
            Method::Ols => {
                let (x, y) = pipeline::prepare(d)?;
                Ok(regress::ols(&x, &y)?.xi_hat)
            }
        }
    }
}

/// One experiment: a scenario, a method list, and replication control.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub label: String,
    #[serde(flatten)]
    pub scenario: Scenario,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub base_seed: u64,
    /// Re-runs Spar and Null at each listed q (factor-count sensitivity).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_override: Option<Vec<usize>>,
}

impl ExperimentSpec {
    fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::InvalidConfig("replications must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no methods configured".into()));
        }
        Ok(())
    }

    /// Expands the q_override grid into named method variants.
    fn expanded_methods(&self) -> Vec<(String, Method)> {
        let mut out = Vec::new();
        for m in &self.methods {
            match (&self.q_override, m) {
                (Some(grid), Method::Spar { m: bound, .. }) => {
                    for &q in grid {
                        out.push((
                            format!("spar[q={q}]"),
                            Method::Spar {
                                q: Some(q),
                                m: *bound,
                            },
                        ));
                    }
                }
                (Some(grid), Method::Null { .. }) => {
                    for &q in grid {
                        out.push((format!("null[q={q}]"), Method::Null { q: Some(q) }));
                    }
                }
                _ => out.push((m.display_name(), m.clone())),
            }
        }
        out
    }
}

/// Per-(method, replication) scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub rep: usize,
    pub mae: f64,
    pub rmse: f64,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureRow {
    pub method: String,
    pub rep: usize,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub reps: usize,
    pub mae_mean: f64,
    pub mae_sd: f64,
    pub rmse_mean: f64,
    pub rmse_sd: f64,
    pub tpr_mean: Option<f64>,
    pub fpr_mean: Option<f64>,
    pub wall_ms_mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub label: String,
    pub rows: Vec<MetricsRow>,
    pub summary: Vec<SummaryRow>,
    pub failures: Vec<FailureRow>,
}

/// Mean absolute and root-mean-square error per coefficient.
pub fn metrics(beta_hat: &DVector<f64>, beta_true: &DVector<f64>) -> Result<(f64, f64)> {
    let p = beta_true.len();
    if beta_hat.len() != p || p == 0 {
        return Err(Error::DimensionMismatch(format!(
            "estimate length {} vs truth {}",
            beta_hat.len(),
            p
        )));
    }
    let mut abs = 0.0;
    let mut sq = 0.0;
    for i in 0..p {
        let e = beta_hat[i] - beta_true[i];
        abs += e.abs();
        sq += e * e;
    }
    Ok((abs / p as f64, (sq / p as f64).sqrt()))
}

/// Support-recovery rates; undefined rates are reported as None.
pub fn tpr_fpr(
    beta_hat: &DVector<f64>,
    beta_true: &DVector<f64>,
    zero_tol: f64,
) -> Result<(Option<f64>, Option<f64>)> {
    let p = beta_true.len();
    if beta_hat.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "estimate length {} vs truth {}",
            beta_hat.len(),
            p
        )));
    }
    let mut pos = 0usize;
    let mut neg = 0usize;
    let mut tp = 0usize;
    let mut fp = 0usize;
    for i in 0..p {
        let selected = beta_hat[i].abs() > zero_tol;
        if beta_true[i].abs() > 0.0 {
            pos += 1;
            if selected {
                tp += 1;
            }
        } else {
            neg += 1;
            if selected {
                fp += 1;
            }
        }
    }
    let tpr = (pos > 0).then(|| tp as f64 / pos as f64);
    let fpr = (neg > 0).then(|| fp as f64 / neg as f64);
    Ok((tpr, fpr))
}

/// Runs every configured method on identical per-replication datasets and
/// scores against the generator truth. Deterministic given the spec.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let methods = spec.expanded_methods();

    let per_rep: Vec<(Vec<MetricsRow>, Vec<FailureRow>)> = (0..spec.replications)
        .into_par_iter()
        .map(|rep| -> Result<(Vec<MetricsRow>, Vec<FailureRow>)> {
            let seed = spec.base_seed.wrapping_add(rep as u64);
            let (dataset, truth) = self_generate(&spec.scenario, seed)?;
            let hash_before = dataset.content_hash();
            let mut rows = Vec::new();
            let mut failures = Vec::new();
            for (name, method) in &methods {
                let method_seed = seed.wrapping_add(hash_str(name));
                let start = Instant::now();
                match method.fit(&dataset, method_seed) {
                    Ok(beta_hat) => {
                        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
                        let (mae, rmse) = metrics(&beta_hat, &truth.beta)?;
                        let (tpr, fpr) = tpr_fpr(&beta_hat, &truth.beta, ZERO_TOL)?;
                        rows.push(MetricsRow {
                            method: name.clone(),
                            rep,
                            mae,
                            rmse,
                            tpr,
                            fpr,
                            wall_ms,
                        });
                    }
                    Err(e) => failures.push(FailureRow {
                        method: name.clone(),
                        rep,
                        error: e.to_string(),
                    }),
                }
                assert_eq!(
                    dataset.content_hash(),
                    hash_before,
                    "method {name} mutated the shared dataset"
                );
            }
            Ok((rows, failures))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows: Vec<MetricsRow> = per_rep.iter().flat_map(|(r, _)| r.clone()).collect();
    let mut failures: Vec<FailureRow> = per_rep.into_iter().flat_map(|(_, f)| f).collect();
    rows.sort_by(|a, b| a.method.cmp(&b.method).then(a.rep.cmp(&b.rep)));
    failures.sort_by(|a, b| a.method.cmp(&b.method).then(a.rep.cmp(&b.rep)));

    let summary = summarize(&rows);
    Ok(ExperimentOutput {
        label: spec.label.clone(),
        rows,
        summary,
        failures,
    })
}

fn self_generate(scenario: &Scenario, seed: u64) -> Result<(Dataset, GroundTruth)> {
    scenario.generate(seed)
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(rows: &[MetricsRow]) -> Vec<SummaryRow> {
    let mut names: Vec<String> = rows.iter().map(|r| r.method.clone()).collect();
    names.sort();
    names.dedup();
    names
        .into_iter()
        .map(|name| {
            let group: Vec<&MetricsRow> = rows.iter().filter(|r| r.method == name).collect();
            let maes: Vec<f64> = group.iter().map(|r| r.mae).collect();
            let rmses: Vec<f64> = group.iter().map(|r| r.rmse).collect();
            let tprs: Vec<f64> = group.iter().filter_map(|r| r.tpr).collect();
            let fprs: Vec<f64> = group.iter().filter_map(|r| r.fpr).collect();
            let walls: Vec<f64> = group.iter().map(|r| r.wall_ms).collect();
            let (mae_mean, mae_sd) = mean_sd(&maes);
            let (rmse_mean, rmse_sd) = mean_sd(&rmses);
            SummaryRow {
                method: name,
                reps: group.len(),
                mae_mean,
                mae_sd,
                rmse_mean,
                rmse_sd,
                tpr_mean: (!tprs.is_empty()).then(|| mean_sd(&tprs).0),
                fpr_mean: (!fprs.is_empty()).then(|| mean_sd(&fprs).0),
                wall_ms_mean: mean_sd(&walls).0,
            }
        })
        .collect()
}

fn opt_field(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Writes per-replication rows plus a sibling `*_summary.csv` aggregate.
pub fn write_results(rows: &[MetricsRow], path: &Path, format: OutputFormat) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    match format {
        OutputFormat::Csv => {
            let file = fs::File::create(path)?;
            let mut w = BufWriter::new(file);
            writeln!(w, "method,rep,mae,rmse,tpr,fpr,wall_ms_total")?;
            for r in rows {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    r.method,
                    r.rep,
                    fmt_f64(r.mae),
                    fmt_f64(r.rmse),
                    opt_field(r.tpr),
                    opt_field(r.fpr),
                    fmt_f64(r.wall_ms)
                )?;
            }
            w.flush()?;
        }
        OutputFormat::Json => {
            fs::write(path, serde_json::to_string_pretty(rows)?)?;
        }
    }
    let summary = summarize(rows);
    let summary_path = summary_sibling(path);
    let file = fs::File::create(summary_path)?;
    let mut w = BufWriter::new(file);
    writeln!(
        w,
        "method,reps,mae_mean,mae_sd,rmse_mean,rmse_sd,tpr_mean,fpr_mean,wall_ms_mean"
    )?;
    for s in &summary {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            s.method,
            s.reps,
            fmt_f64(s.mae_mean),
            fmt_f64(s.mae_sd),
            fmt_f64(s.rmse_mean),
            fmt_f64(s.rmse_sd),
            opt_field(s.tpr_mean),
            opt_field(s.fpr_mean),
            fmt_f64(s.wall_ms_mean)
        )?;
    }
    w.flush()?;
    Ok(())
}

fn summary_sibling(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    path.with_file_name(format!("{stem}_summary.csv"))
}

/// Reads rows back from the JSON format.
pub fn read_results_json(path: &Path) -> Result<Vec<MetricsRow>> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Built-in experiment grids mirroring the published study; `scale`
/// multiplies the replication counts (minimum one).
pub fn preset(name: &str, scale: f64) -> Result<Vec<ExperimentSpec>> {
    if !(scale > 0.0) {
        return Err(Error::InvalidConfig("scale must be positive".into()));
    }
    let reps = |full: usize| ((full as f64 * scale).round() as usize).max(1);
    let mut specs = Vec::new();
    match name {
        "fig2" => {
            for s in 1..=13usize {
                specs.push(ExperimentSpec {
                    label: format!("fig2_s{s:02}"),
                    scenario: Scenario::Lowdim(LowDimConfig {
                        s,
                        ..LowDimConfig::default()
                    }),
                    methods: vec![
                        Method::Spar {
                            q: Some(3),
                            m: 30.0,
                        },
                        Method::Null { q: Some(3) },
                        Method::Ols,
                    ],
                    replications: reps(1000),
                    base_seed: 20_000 + 100 * s as u64,
                    q_override: None,
                });
            }
        }
        "table1" | "fig4" => {
            for p in [300usize, 500, 700, 900, 1000] {
                specs.push(ExperimentSpec {
                    label: format!("{name}_p{p}"),
                    scenario: Scenario::Highdim(HighDimConfig {
                        p,
                        ..HighDimConfig::default()
                    }),
                    methods: vec![
                        Method::Spar {
                            q: Some(3),
                            m: 30.0,
                        },
                        Method::Null { q: Some(3) },
                        Method::DeconfLasso { k: 50 },
                        Method::Lasso,
                    ],
                    replications: reps(100),
                    base_seed: 40_000 + p as u64,
                    q_override: None,
                });
            }
        }
        "fig7-bn" | "fig7-psd" | "fig7-spatial" => {
            let model = match name {
                "fig7-bn" => GwasModel::Bn,
                "fig7-psd" => GwasModel::Psd,
                _ => GwasModel::Spatial,
            };
            for (si, &snr) in SNR_GRID.iter().enumerate() {
                specs.push(ExperimentSpec {
                    label: format!("{}_snr{:04.1}", name.replace('-', "_"), snr),
                    scenario: Scenario::Gwas(GwasConfig {
                        model,
                        snr,
                        ..GwasConfig::default()
                    }),
                    methods: vec![
                        Method::Spar {
                            q: Some(3),
                            m: 30.0,
                        },
                        Method::Null { q: Some(3) },
                        Method::DeconfLasso { k: 50 },
                        Method::DeconfRidge { k: 50 },
                        Method::Lasso,
                        Method::Ridge,
                    ],
                    replications: reps(100),
                    base_seed: 60_000 + 1000 * si as u64,
                    q_override: None,
                });
            }
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown preset '{other}' (expected fig2, table1, fig4, fig7-bn, fig7-psd, fig7-spatial)"
            )));
        }
    }
    Ok(specs)
}
