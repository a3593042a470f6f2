use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use alocv_core::checks::{self, BoundCheck};
use alocv_core::experiment::{self, ExperimentConfig};
use alocv_core::model::FitSummary;
use alocv_core::risk::{self, ReportOptions};
use alocv_core::{curvature, datagen, oracle, solver};
use alocv_core::{Dataset, Error, FitResult, LossSpec, PenaltySpec, SolverConfig, TestFunction};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

mod args;

use args::{parse_loss, parse_penalty, PenaltyArg};

/// Environment variable holding the worker-thread count.
const THREADS_ENV: &str = "ALOCV_THREADS";

#[derive(Parser)]
#[command(name = "alocv", version, about = "Regularized M-estimation with leave-one-out, ALO and mean-field risk estimates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the penalized estimator and print the fit as JSON.
    Fit(FitArgs),
    /// Fit, then report ALO, mean-field and optionally exact leave-one-out risk.
    Risk(RiskArgs),
    /// Run a replicated experiment described by a JSON config.
    Experiment(ExperimentArgs),
    /// Fit, then check deterministic bounds and finite-difference derivatives.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct FitArgs {
    /// CSV with header `x_1..x_p,y`.
    #[arg(long)]
    data: PathBuf,
    /// square | huber:m | logistic
    #[arg(long, default_value = "huber:1", value_parser = parse_loss)]
    loss: LossSpec,
    /// ridge:nu | enet:lambda,nu | group:size:lambda,nu
    #[arg(long, value_parser = parse_penalty)]
    penalty: PenaltyArg,
    /// KKT residual target.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iter: usize,
    /// Recorded in the output; fits are deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the JSON here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RiskArgs {
    #[command(flatten)]
    fit: FitArgs,
    /// sq | abs | dev | mis | mis:t
    #[arg(long, default_value = "sq")]
    g: TestFunction,
    /// Run the n leave-one-out refits.
    #[arg(long)]
    with_loo: bool,
    /// Headerless p x p covariance CSV; enables tr[Σ A] and the Rem diagnostics.
    #[arg(long)]
    sigma: Option<PathBuf>,
    /// Per-observation weights CSV (i, W_i, leverage, denominator).
    #[arg(long, default_value = "alo_weights.csv")]
    weights: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir` of the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long)]
    sigma: Option<PathBuf>,
    /// Leave-one-out refits and derivative probes to run.
    #[arg(long, default_value_t = 20)]
    probes: usize,
}

/// Exit codes: 0 success, 1 usage or input error, 2 non-certified fit,
/// 3 experiment failure threshold exceeded or verification failure.
enum Outcome {
    Ok,
    NotCertified,
    Failed,
}

fn main() -> ExitCode {
    // clap uses exit status 2 for usage errors, which is reserved here
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Risk(a) => cmd_risk(&a),
        Command::Experiment(a) => cmd_experiment(&a),
        Command::Verify(a) => cmd_verify(&a),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::NotCertified) => ExitCode::from(2),
        Ok(Outcome::Failed) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let k: usize = raw
        .parse()
        .ok()
        .filter(|&k| k > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(k)
        .build_global()
        .map_err(|e| e.to_string())
}

fn emit(value: &Value, output: Option<&Path>) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match output {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn solver_config(a: &FitArgs) -> Result<SolverConfig, Error> {
    let cfg = SolverConfig { tol: a.tol, max_iter: a.max_iter, ..SolverConfig::default() };
    cfg.validate()?;
    Ok(cfg)
}

struct Problem {
    data: Dataset,
    penalty: PenaltySpec,
    cfg: SolverConfig,
}

fn load(a: &FitArgs, sigma: Option<&Path>) -> Result<Problem, Error> {
    let mut data = datagen::read_csv(&a.data)?;
    if let Some(path) = sigma {
        data = data.with_sigma(datagen::read_matrix_csv(path)?)?;
    }
    let penalty = PenaltySpec::for_dataset(a.penalty.family(data.p()), &data)?;
    Ok(Problem { data, penalty, cfg: solver_config(a)? })
}

/// Fits; a non-certified solve emits the best iterate and yields
/// `Err(Outcome::NotCertified)`.
fn fit_or_report(p: &Problem, a: &FitArgs) -> Result<Result<FitResult, Outcome>, Error> {
    match solver::fit(&p.data, &a.loss, &p.penalty, &p.cfg) {
        Ok(f) => Ok(Ok(f)),
        Err(Error::MaxIterExceeded(best)) => {
            eprintln!("error: fit not certified (kkt residual {:.3e} > tol {:.3e})", best.kkt_residual, best.tol);
            emit(&fit_json(&best, a), a.output.as_deref())?;
            Ok(Err(Outcome::NotCertified))
        }
        Err(e) => Err(e),
    }
}

fn fit_json(f: &FitResult, a: &FitArgs) -> Value {
    let mut v = serde_json::to_value(FitSummary::from(f)).expect("fit summary serializes");
    v["loss"] = json!(a.loss.to_string());
    v["seed"] = json!(a.seed);
    v
}

fn cmd_fit(a: &FitArgs) -> Result<Outcome, Error> {
    let p = load(a, None)?;
    let fit = match fit_or_report(&p, a)? {
        Ok(f) => f,
        Err(o) => return Ok(o),
    };
    emit(&fit_json(&fit, a), a.output.as_deref())?;
    Ok(Outcome::Ok)
}

fn cmd_risk(a: &RiskArgs) -> Result<Outcome, Error> {
    let p = load(&a.fit, a.sigma.as_deref())?;
    let fit = match fit_or_report(&p, &a.fit)? {
        Ok(f) => f,
        Err(o) => return Ok(o),
    };
    let opts = ReportOptions { with_loo: a.with_loo, sigma: None };
    let report = risk::risk_report(&p.data, &a.fit.loss, &p.penalty, &fit, &p.cfg, &a.g, &opts)?;

    let mut w = csv::Writer::from_path(&a.weights)?;
    w.write_record(["i", "W_i", "leverage", "denominator"])?;
    for i in 0..report.n {
        w.write_record([
            i.to_string(),
            report.weights_alo[i].to_string(),
            report.leverages[i].to_string(),
            report.denominators[i].to_string(),
        ])?;
    }
    w.flush()?;

    let mut v = serde_json::to_value(&report)?;
    v["fit"] = fit_json(&fit, &a.fit);
    v["weights_csv"] = json!(a.weights.display().to_string());
    emit(&v, a.fit.output.as_deref())?;
    Ok(Outcome::Ok)
}

fn cmd_experiment(a: &ExperimentArgs) -> Result<Outcome, Error> {
    let text = fs::read_to_string(&a.config)?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(dir) = &a.output_dir {
        cfg.output_dir = dir.clone();
    }
    let out = experiment::run_experiment(&cfg)?;
    let s = &out.summary;
    println!(
        "{}: {} rows, {} failed; results in {} and {}",
        s.experiment,
        s.total,
        s.failed,
        out.csv_path.display(),
        out.summary_path.display()
    );
    if s.exceeds_failure_threshold() {
        eprintln!("error: {:.1}% of replicates failed", 100.0 * s.failure_rate());
        return Ok(Outcome::Failed);
    }
    Ok(Outcome::Ok)
}

fn cmd_verify(a: &VerifyArgs) -> Result<Outcome, Error> {
    let mut p = load(&a.fit, a.sigma.as_deref())?;
    let fit = match fit_or_report(&p, &a.fit)? {
        Ok(f) => f,
        Err(o) => return Ok(o),
    };
    let loss = a.fit.loss;
    let ahat = curvature::a_hat(&p.data, &p.penalty, &fit)?;
    let mut bounds: Vec<BoundCheck> = checks::check_fit(&p.data, &loss, &p.penalty, &fit, &ahat, None)?;

    let mut rng = ChaCha8Rng::seed_from_u64(a.fit.seed);
    let (n, dim) = (p.data.n(), p.data.p());
    for _ in 0..a.probes.min(n) {
        let i = rng.random_range(0..n);
        let loo = solver::fit_leave_one_out(&p.data, &loss, &p.penalty, i, &fit, &p.cfg)?;
        bounds.extend(checks::check_leave_one_out(&p.data, &loss, &p.penalty, &fit, &loo, None)?);
    }

    // derivative probes need tight refits
    p.cfg.tol = p.cfg.tol.min(oracle::PROBE_MAX_TOL);
    let probe = oracle::ProbeConfig::default();
    let (mut tested, mut skipped, mut worst) = (0usize, 0usize, 0.0f64);
    for _ in 0..a.probes {
        let (i, j) = (rng.random_range(0..n), rng.random_range(0..dim));
        match oracle::jacobian_fd(&p.data, &loss, &p.penalty, &p.cfg, &probe, i, j) {
            Ok(fd) => {
                let formula = curvature::derivative_formula(&p.data, &loss, &fit, &ahat, i, j);
                let abs = (&fd - &formula).amax();
                let err = abs.min(abs / formula.amax().max(1e-300));
                worst = worst.max(err);
                tested += 1;
            }
            Err(Error::SupportChanged) => skipped += 1,
            Err(e) => return Err(e),
        }
    }

    let violations = checks::violations(&bounds).len();
    let derivative_ok = worst <= probe.tolerance;
    let report = json!({
        "fit": fit_json(&fit, &a.fit),
        "bounds": bounds,
        "violations": violations,
        "derivative_probes": {
            "tested": tested,
            "skipped_support_change": skipped,
            "max_error": worst,
            "tolerance": probe.tolerance,
        },
        "passed": violations == 0 && derivative_ok,
    });
    emit(&report, a.fit.output.as_deref())?;
    Ok(if violations == 0 && derivative_ok { Outcome::Ok } else { Outcome::Failed })
}
