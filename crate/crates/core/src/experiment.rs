//! Replicated simulation experiments over a grid of sample sizes.
//!
//! | id | loss + penalty (default) | model | recorded metric |
//! |----|--------------------------|-------|-----------------|
//! | E1 | square + elastic net | linear Gaussian | `max_i |H_ii - tr H / n|` |
//! | E2 | Huber + elastic net | linear, Student-t noise | `(1/n) sum (W_i - tr[Σ A])^2` |
//! | E3 | logistic + elastic net | single index | as E2 |
//! | E4 | Huber + elastic net | linear Gaussian | ALO, LOO, mean-field and Monte-Carlo risk |
//! | E5 | square + elastic net | linear Gaussian | `|tr[Σ A] - tr H/(n - tr H)| sqrt(n)` |
//!
//! Replicate `r` uses data seed `master_seed ^ r`; the true coefficients
//! depend on `master_seed` and `p` only. Every CSV row carries
//! `(seed, n, p, replicate)` and can be recomputed with [`run_replicate`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checks;
use crate::curvature;
use crate::datagen::{self, Covariance, Link, ModelKind, ModelSpec, Noise, Sampler};
use crate::error::{Error, Result};
use crate::model::{LossSpec, PenaltyFamily, PenaltySpec, TestFunction};
use crate::risk;
use crate::solver::{self, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExperimentId {
    E1,
    E2,
    E3,
    E4,
    E5,
}

impl ExperimentId {
    pub fn metric_names(&self) -> &'static [&'static str] {
        match self {
            ExperimentId::E1 => &["max_dev_h", "rate", "trace_h", "support_size", "bound_violations"],
            ExperimentId::E2 | ExperimentId::E3 => &[
                "discrepancy_sq",
                "rem_sumsq",
                "trace_sigma_a",
                "df_ratio",
                "support_size",
                "bound_violations",
            ],
            ExperimentId::E4 => &[
                "alo",
                "loo",
                "mf_trace",
                "mf_df",
                "err_mc",
                "mc_se",
                "abs_alo_loo",
                "abs_mf_trace_loo",
                "abs_mf_df_loo",
                "abs_alo_mc",
                "support_size",
                "bound_violations",
            ],
            ExperimentId::E5 => &["trace_sigma_a", "hat_ratio", "scaled_gap", "support_size", "bound_violations"],
        }
    }

    fn default_model(&self) -> ModelTemplate {
        match self {
            ExperimentId::E2 => ModelTemplate::RobustLinear { sparsity: 0.1, signal: 1.0, noise: Noise::StudentT { df: 2.0 } },
            ExperimentId::E3 => ModelTemplate::SingleIndex { sparsity: 0.1, link: Link::Logistic },
            _ => ModelTemplate::LinearGaussian { sparsity: 0.1, signal: 1.0, noise_sd: 1.0 },
        }
    }

    fn default_loss(&self) -> LossSpec {
        match self {
            ExperimentId::E1 | ExperimentId::E5 => LossSpec::Square,
            ExperimentId::E2 | ExperimentId::E4 => LossSpec::Huber { threshold: 1.0 },
            ExperimentId::E3 => LossSpec::Logistic,
        }
    }
}

impl std::fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Data-generating model with dimension-free parameters; the coefficient
/// vector has `max(1, round(sparsity * p))` nonzero entries of equal
/// magnitude and Euclidean norm `signal`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelTemplate {
    LinearGaussian { sparsity: f64, signal: f64, noise_sd: f64 },
    RobustLinear { sparsity: f64, signal: f64, noise: Noise },
    /// The index vector is rescaled to unit `Σ`-norm by the sampler.
    SingleIndex { sparsity: f64, link: Link },
}

impl ModelTemplate {
    pub fn instantiate(&self, p: usize, seed: u64) -> Result<ModelKind> {
        let (sparsity, signal) = match self {
            ModelTemplate::LinearGaussian { sparsity, signal, .. } | ModelTemplate::RobustLinear { sparsity, signal, .. } => {
                (*sparsity, *signal)
            }
            ModelTemplate::SingleIndex { sparsity, .. } => (*sparsity, 1.0),
        };
        if !(0.0..=1.0).contains(&sparsity) {
            return Err(Error::InvalidInput(format!("sparsity must be in [0, 1], got {sparsity}")));
        }
        let k = ((sparsity * p as f64).round() as usize).clamp(1, p);
        let coef = datagen::sparse_coefficients(p, k, signal / (k as f64).sqrt(), seed)?;
        let coef: Vec<f64> = coef.iter().copied().collect();
        Ok(match self {
            ModelTemplate::LinearGaussian { noise_sd, .. } => ModelKind::LinearGaussian { beta: coef, noise_sd: *noise_sd },
            ModelTemplate::RobustLinear { noise, .. } => ModelKind::RobustLinear { beta: coef, noise: noise.clone() },
            ModelTemplate::SingleIndex { link, .. } => ModelKind::SingleIndex { w: coef, link: *link },
        })
    }
}

/// Penalty with sample-size dependent defaults. A missing `lambda` means
/// `0.1 * sqrt(n log p)`; group weights are `lambda * sqrt(|G|)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PenaltyTemplate {
    Ridge { nu: f64 },
    ElasticNet {
        #[serde(default)]
        lambda: Option<f64>,
        nu: f64,
    },
    GroupLasso {
        group_size: usize,
        #[serde(default)]
        lambda: Option<f64>,
        nu: f64,
    },
}

impl Default for PenaltyTemplate {
    fn default() -> Self {
        PenaltyTemplate::ElasticNet { lambda: None, nu: 0.5 }
    }
}

pub fn default_lambda(n: usize, p: usize) -> f64 {
    0.1 * (n as f64 * (p.max(2) as f64).ln()).sqrt()
}

impl PenaltyTemplate {
    pub fn instantiate(&self, n: usize, p: usize) -> PenaltyFamily {
        match self {
            PenaltyTemplate::Ridge { nu } => PenaltyFamily::Ridge { nu: *nu },
            PenaltyTemplate::ElasticNet { lambda, nu } => PenaltyFamily::ElasticNet {
                lambda: lambda.unwrap_or_else(|| default_lambda(n, p)),
                nu: *nu,
            },
            PenaltyTemplate::GroupLasso { group_size, lambda, nu } => {
                PenaltyFamily::contiguous_groups(p, *group_size, lambda.unwrap_or_else(|| default_lambda(n, p)), *nu)
            }
        }
    }
}

fn default_grid() -> Vec<usize> {
    vec![400, 800, 1600]
}
fn default_ratio() -> f64 {
    0.5
}
fn default_delta() -> f64 {
    0.1
}
fn default_replicates() -> usize {
    10
}
fn default_tol() -> f64 {
    1e-9
}
fn default_n_mc() -> usize {
    20_000
}
fn default_output() -> PathBuf {
    PathBuf::from("results")
}
fn default_true() -> bool {
    true
}

/// JSON experiment description. Only `experiment` is required.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    #[serde(default = "default_grid")]
    pub n_grid: Vec<usize>,
    /// `p / n`; `p` is rounded to the nearest integer.
    #[serde(default = "default_ratio")]
    pub aspect_ratio: f64,
    /// Every `p / n` must lie in `[delta, 1 / delta]`.
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub model: Option<ModelTemplate>,
    #[serde(default)]
    pub covariance: Option<Covariance>,
    #[serde(default)]
    pub loss: Option<LossSpec>,
    #[serde(default)]
    pub penalty: PenaltyTemplate,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_tol")]
    pub solver_tol: f64,
    /// Monte-Carlo draws for the E4 generalization error.
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
    #[serde(default)]
    pub test_function: Option<TestFunction>,
    /// Evaluate the deterministic bounds on every fit.
    #[serde(default = "default_true")]
    pub check_bounds: bool,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentId) -> Self {
        serde_json::from_value(serde_json::json!({ "experiment": experiment })).expect("defaults deserialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model(&self) -> ModelTemplate {
        self.model.clone().unwrap_or_else(|| self.experiment.default_model())
    }

    pub fn covariance(&self) -> Covariance {
        self.covariance.clone().unwrap_or(Covariance::Identity)
    }

    pub fn loss(&self) -> LossSpec {
        self.loss.unwrap_or_else(|| self.experiment.default_loss())
    }

    pub fn test_function(&self) -> TestFunction {
        self.test_function.unwrap_or(TestFunction::SquaredError)
    }

    pub fn p_for(&self, n: usize) -> usize {
        (self.aspect_ratio * n as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.replicates == 0 {
            return bad("replicates must be >= 1".into());
        }
        if self.n_grid.is_empty() {
            return bad("n_grid is empty".into());
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad(format!("delta must be in (0, 1], got {}", self.delta));
        }
        for &n in &self.n_grid {
            let p = self.p_for(n);
            if n < 2 || p == 0 {
                return bad(format!("grid point n={n} gives p={p}"));
            }
            let ratio = p as f64 / n as f64;
            if ratio < self.delta || ratio > 1.0 / self.delta {
                return bad(format!(
                    "p/n = {ratio} at n={n} is outside [{}, {}]",
                    self.delta,
                    1.0 / self.delta
                ));
            }
        }
        if !(self.solver_tol > 0.0) {
            return bad("solver_tol must be > 0".into());
        }
        if self.experiment == ExperimentId::E4 && self.n_mc < 100 {
            return bad("n_mc must be >= 100".into());
        }
        if matches!(self.experiment, ExperimentId::E1 | ExperimentId::E5) && self.loss() != LossSpec::Square {
            return bad(format!("{} needs the square loss", self.experiment));
        }
        // surface penalty errors before any work
        let n = self.n_grid[0];
        PenaltySpec::new(self.penalty.instantiate(n, self.p_for(n)), n, self.p_for(n))?;
        self.model().instantiate(self.p_for(n), self.master_seed)?;
        self.covariance().matrix(self.p_for(n))?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub experiment: ExperimentId,
    pub n: usize,
    pub p: usize,
    pub replicate: usize,
    pub seed: u64,
    pub status: RowStatus,
    pub reason: String,
    /// In the order of [`ExperimentId::metric_names`]; `None` when a value is
    /// undefined for this replicate.
    pub metrics: Vec<Option<f64>>,
}

impl ReplicateRow {
    pub fn metric(&self, name: &str) -> Option<f64> {
        let idx = self.experiment.metric_names().iter().position(|m| *m == name)?;
        self.metrics.get(idx).copied().flatten()
    }
}

pub fn replicate_seed(master: u64, replicate: usize) -> u64 {
    master ^ replicate as u64
}

const MC_SALT: u64 = 0x6d63_5f73_7472_6561;

/// Runs one `(n, replicate)` cell. Failures become rows with
/// `status = failed` and the error text as reason.
pub fn run_replicate(cfg: &ExperimentConfig, n: usize, replicate: usize) -> ReplicateRow {
    let p = cfg.p_for(n);
    let seed = replicate_seed(cfg.master_seed, replicate);
    let names = cfg.experiment.metric_names();
    let mut row = ReplicateRow {
        experiment: cfg.experiment,
        n,
        p,
        replicate,
        seed,
        status: RowStatus::Ok,
        reason: String::new(),
        metrics: vec![None; names.len()],
    };
    match compute_metrics(cfg, n, p, seed) {
        Ok(values) => {
            for (name, v) in values {
                let idx = names.iter().position(|m| *m == name).expect("known metric");
                row.metrics[idx] = v;
            }
        }
        Err(e) => {
            row.status = RowStatus::Failed;
            row.reason = e.to_string();
        }
    }
    row
}

fn compute_metrics(cfg: &ExperimentConfig, n: usize, p: usize, seed: u64) -> Result<Vec<(&'static str, Option<f64>)>> {
    let kind = cfg.model().instantiate(p, cfg.master_seed)?;
    let covariance = cfg.covariance();
    let data = datagen::generate(&ModelSpec { kind: kind.clone(), covariance: covariance.clone(), n, p, seed })?;
    let sigma = data.sigma.clone().expect("generated data carries Σ");
    let loss = cfg.loss();
    let penalty = PenaltySpec::for_dataset(cfg.penalty.instantiate(n, p), &data)?;
    let solver_cfg = SolverConfig::with_tol(cfg.solver_tol);
    let fit = solver::fit(&data, &loss, &penalty, &solver_cfg)?;
    let a = curvature::a_hat(&data, &penalty, &fit)?;
    let support = fit.active_set.len() as f64;
    let mut violations = if cfg.check_bounds {
        Some(checks::violations(&checks::check_fit(&data, &loss, &penalty, &fit, &a, Some(&sigma))?).len() as f64)
    } else {
        None
    };

    let mut out: Vec<(&'static str, Option<f64>)> = Vec::new();
    match cfg.experiment {
        ExperimentId::E1 => {
            let hat = curvature::hat_matrix(&data, &loss, &a)?;
            let mean = hat.trace / n as f64;
            let dev = (0..n).map(|i| (hat.matrix[(i, i)] - mean).abs()).fold(0.0, f64::max);
            let nf = n as f64;
            out.push(("max_dev_h", Some(dev)));
            out.push(("rate", Some((nf.ln() / nf).sqrt())));
            out.push(("trace_h", Some(hat.trace)));
        }
        ExperimentId::E2 | ExperimentId::E3 => {
            let rem = risk::rem_diagnostics(&data, &fit, &a, &sigma);
            out.push(("discrepancy_sq", Some(rem.discrepancy_sq)));
            out.push(("rem_sumsq", Some(rem.rem_sumsq)));
            out.push(("trace_sigma_a", Some(rem.trace)));
            out.push(("df_ratio", risk::df_ratio(&data, &fit, &a).ok()));
        }
        ExperimentId::E4 => {
            let g = cfg.test_function();
            let (alo, _) = risk::alo_estimate(&data, &loss, &fit, &a, &g)?;
            let fits = risk::loo_fits(&data, &loss, &penalty, &fit, &solver_cfg, true)?;
            if let Some(v) = violations.as_mut() {
                let checker = checks::LooChecker::new(&data, &loss, &penalty, &fit, Some(&sigma))?;
                for f in &fits {
                    *v += checks::violations(&checker.check(f)?).len() as f64;
                }
            }
            let loo = (0..n).map(|i| g.eval(fits[i].predictions[i], data.y[i])).sum::<Result<f64>>()? / n as f64;
            let mf_trace = risk::mf_estimate(&data, &loss, &fit, &g, risk::mf_weight(&a, &sigma))?;
            let mf_df = match risk::df_ratio(&data, &fit, &a) {
                Ok(w) => Some(risk::mf_estimate(&data, &loss, &fit, &g, w)?),
                Err(_) => None,
            };
            let sampler = Sampler::new(&kind, &covariance, p)?;
            let (err, se) = risk::generalization_error_mc(&fit.b_hat, &sampler, &g, cfg.n_mc, seed ^ MC_SALT)?;
            out.push(("alo", Some(alo)));
            out.push(("loo", Some(loo)));
            out.push(("mf_trace", Some(mf_trace)));
            out.push(("mf_df", mf_df));
            out.push(("err_mc", Some(err)));
            out.push(("mc_se", Some(se)));
            out.push(("abs_alo_loo", Some((alo - loo).abs())));
            out.push(("abs_mf_trace_loo", Some((mf_trace - loo).abs())));
            out.push(("abs_mf_df_loo", mf_df.map(|m| (m - loo).abs())));
            out.push(("abs_alo_mc", Some((alo - err).abs())));
        }
        ExperimentId::E5 => {
            let hat = curvature::hat_matrix(&data, &loss, &a)?;
            let tr = risk::mf_weight(&a, &sigma);
            let ratio = risk::hat_ratio(&hat)?;
            out.push(("trace_sigma_a", Some(tr)));
            out.push(("hat_ratio", Some(ratio)));
            out.push(("scaled_gap", Some((tr - ratio).abs() * (n as f64).sqrt())));
        }
    }
    out.push(("support_size", Some(support)));
    out.push(("bound_violations", violations));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub n: usize,
    pub p: usize,
    pub ok: usize,
    pub failed: usize,
    pub medians: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub experiment: ExperimentId,
    pub total: usize,
    pub failed: usize,
    pub grid: Vec<GridSummary>,
    /// Least-squares slope of `log(median)` against `log(n)`, for metrics
    /// whose medians are positive at every grid point.
    pub slopes: BTreeMap<String, f64>,
    pub config: ExperimentConfig,
}

impl ExperimentSummary {
    pub fn failure_rate(&self) -> f64 {
        self.failed as f64 / self.total.max(1) as f64
    }

    /// More than 10% of replicates failed.
    pub fn exceeds_failure_threshold(&self) -> bool {
        self.failure_rate() > 0.1
    }

    pub fn median(&self, n: usize, metric: &str) -> Option<f64> {
        self.grid.iter().find(|g| g.n == n)?.medians.get(metric).copied()
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub rows: Vec<ReplicateRow>,
    pub summary: ExperimentSummary,
    pub csv_path: PathBuf,
    pub summary_path: PathBuf,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 { values[m] } else { 0.5 * (values[m - 1] + values[m]) })
}

/// Slope of the least-squares line through `(x, y)`.
pub fn slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    let k = x.len() as f64;
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn summarize(cfg: &ExperimentConfig, rows: &[ReplicateRow]) -> ExperimentSummary {
    let names = cfg.experiment.metric_names();
    let mut grid = Vec::new();
    for &n in &cfg.n_grid {
        let cell: Vec<&ReplicateRow> = rows.iter().filter(|r| r.n == n).collect();
        let ok: Vec<&&ReplicateRow> = cell.iter().filter(|r| r.status == RowStatus::Ok).collect();
        let mut medians = BTreeMap::new();
        for (k, name) in names.iter().enumerate() {
            let mut vals: Vec<f64> = ok.iter().filter_map(|r| r.metrics[k]).collect();
            if let Some(m) = median(&mut vals) {
                medians.insert(name.to_string(), m);
            }
        }
        grid.push(GridSummary { n, p: cfg.p_for(n), ok: ok.len(), failed: cell.len() - ok.len(), medians });
    }
    let mut slopes = BTreeMap::new();
    for name in names {
        let pts: Vec<(f64, f64)> = grid
            .iter()
            .filter_map(|g| g.medians.get(*name).map(|&m| ((g.n as f64).ln(), m)))
            .collect();
        if pts.len() == grid.len() && pts.iter().all(|(_, m)| *m > 0.0) {
            let (x, y): (Vec<f64>, Vec<f64>) = pts.iter().map(|(a, m)| (*a, m.ln())).unzip();
            if let Some(s) = slope(&x, &y) {
                slopes.insert(name.to_string(), s);
            }
        }
    }
    let failed = rows.iter().filter(|r| r.status == RowStatus::Failed).count();
    ExperimentSummary { experiment: cfg.experiment, total: rows.len(), failed, grid, slopes, config: cfg.clone() }
}

/// Runs all `(n, replicate)` cells, in parallel, without writing files.
pub fn run_rows(cfg: &ExperimentConfig) -> Result<Vec<ReplicateRow>> {
    cfg.validate()?;
    let cells: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.replicates).map(move |r| (n, r)))
        .collect();
    Ok(cells.into_par_iter().map(|(n, r)| run_replicate(cfg, n, r)).collect())
}

/// Runs the experiment and writes `<id>_results.csv` and
/// `<id>_summary.json` to the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let rows = run_rows(cfg)?;
    let summary = summarize(cfg, &rows);
    fs::create_dir_all(&cfg.output_dir)?;
    let csv_path = cfg.output_dir.join(format!("{}_results.csv", cfg.experiment));
    let summary_path = cfg.output_dir.join(format!("{}_summary.json", cfg.experiment));
    write_rows(&csv_path, cfg.experiment, &rows)?;
    fs::write(&summary_path, serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(ExperimentOutput { rows, summary, csv_path, summary_path })
}

pub fn write_rows(path: &Path, id: ExperimentId, rows: &[ReplicateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["experiment", "n", "p", "replicate", "seed", "status", "reason"];
    header.extend_from_slice(id.metric_names());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.experiment.to_string(),
            r.n.to_string(),
            r.p.to_string(),
            r.replicate.to_string(),
            r.seed.to_string(),
            match r.status {
                RowStatus::Ok => "ok".into(),
                RowStatus::Failed => "failed".into(),
            },
            r.reason.clone(),
        ];
        rec.extend(r.metrics.iter().map(|m| m.map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
