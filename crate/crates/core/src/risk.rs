//! Risk estimates built on a certified fit: ALO, exact leave-one-out,
//! mean-field corrections with an explicit weight, and Monte-Carlo
//! generalization error, along with the diagnostics that compare the
//! per-observation ALO weights `W_i` with the single weight `tr[Σ A_hat]`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvature::{self, AHat, HatMatrix};
use crate::datagen::Sampler;
use crate::error::{Error, Result};
use crate::model::{Dataset, FitResult, LossSpec, PenaltySpec, TestFunction};
use crate::solver::{self, SolverConfig};

/// Per-observation pieces of the ALO estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct AloTerms {
    /// `h_i = x_i' A_hat x_i`.
    pub leverages: DVector<f64>,
    /// `1 - h_i D_ii`.
    pub denominators: DVector<f64>,
    /// `W_i = h_i / (1 - h_i D_ii)`.
    pub weights: DVector<f64>,
    /// `x_i' b_hat + L'_i W_i`.
    pub predictions: DVector<f64>,
}

pub fn alo_terms(data: &Dataset, loss: &LossSpec, fit: &FitResult, a: &AHat) -> Result<AloTerms> {
    let leverages = curvature::leverages(data, a);
    let n = data.n();
    let denominators = DVector::from_fn(n, |i, _| 1.0 - leverages[i] * fit.curvature_diag[i]);
    if let Some(i) = (0..n).find(|&i| denominators[i] <= 1e-12) {
        return Err(Error::DegenerateLeverage { index: i, denominator: denominators[i] });
    }
    let weights = leverages.component_div(&denominators);
    let predictions = DVector::from_fn(n, |i, _| {
        let t = fit.predictions[i];
        t + loss.d1(data.y[i], t) * weights[i]
    });
    Ok(AloTerms { leverages, denominators, weights, predictions })
}

/// `(1/n) sum_i g(x_i' b_hat + L'_i W_i, y_i)` and the weights `W_i`.
pub fn alo_estimate(
    data: &Dataset,
    loss: &LossSpec,
    fit: &FitResult,
    a: &AHat,
    g: &TestFunction,
) -> Result<(f64, DVector<f64>)> {
    let terms = alo_terms(data, loss, fit, a)?;
    let est = average(g, &terms.predictions, &data.y)?;
    Ok((est, terms.weights))
}

/// Exact leave-one-out estimate with `n` refits; fits the full problem
/// first to warm-start them.
pub fn loo_estimate(
    data: &Dataset,
    loss: &LossSpec,
    penalty: &PenaltySpec,
    cfg: &SolverConfig,
    g: &TestFunction,
) -> Result<(f64, DVector<f64>)> {
    let full = solver::fit(data, loss, penalty, cfg)?;
    let preds = loo_predictions(data, loss, penalty, &full, cfg, true)?;
    Ok((average(g, &preds, &data.y)?, preds))
}

/// All `n` leave-one-out fits, warm-started from `warm`. With `parallel`
/// the refits run on the rayon pool; results do not depend on scheduling.
pub fn loo_fits(
    data: &Dataset,
    loss: &LossSpec,
    penalty: &PenaltySpec,
    warm: &FitResult,
    cfg: &SolverConfig,
    parallel: bool,
) -> Result<Vec<FitResult>> {
    let one = |i: usize| -> Result<FitResult> {
        solver::fit_leave_one_out(data, loss, penalty, i, warm, cfg)
            .map_err(|e| Error::LeaveOneOut { index: i, source: Box::new(e) })
    };
    if parallel {
        (0..data.n()).into_par_iter().map(one).collect()
    } else {
        (0..data.n()).map(one).collect()
    }
}

/// `x_i' b^i` for every `i`; see [`loo_fits`].
pub fn loo_predictions(
    data: &Dataset,
    loss: &LossSpec,
    penalty: &PenaltySpec,
    warm: &FitResult,
    cfg: &SolverConfig,
    parallel: bool,
) -> Result<DVector<f64>> {
    let fits = loo_fits(data, loss, penalty, warm, cfg, parallel)?;
    Ok(DVector::from_fn(data.n(), |i, _| fits[i].predictions[i]))
}

/// `tr[Σ A_hat]`.
pub fn mf_weight(a: &AHat, sigma: &DMatrix<f64>) -> f64 {
    a.trace_with(sigma)
}

/// `sum_i h_i D_ii / sum_i (1 - h_i D_ii) D_ii`, the Σ-free weight.
pub fn df_ratio(data: &Dataset, fit: &FitResult, a: &AHat) -> Result<f64> {
    let lev = curvature::leverages(data, a);
    let d = &fit.curvature_diag;
    let num: f64 = (0..data.n()).map(|i| lev[i] * d[i]).sum();
    let den: f64 = (0..data.n()).map(|i| (1.0 - lev[i] * d[i]) * d[i]).sum();
    if den <= 1e-12 {
        return Err(Error::DegenerateDenominator(den));
    }
    Ok(num / den)
}

/// `tr[H] / (n - tr[H])` for the square loss.
pub fn hat_ratio(hat: &HatMatrix) -> Result<f64> {
    let n = hat.matrix.nrows() as f64;
    let den = n - hat.trace;
    if den <= 1e-12 {
        return Err(Error::DegenerateDenominator(den));
    }
    Ok(hat.trace / den)
}

/// `(1/n) sum_i g(x_i' b_hat + weight * L'_i, y_i)`.
pub fn mf_estimate(data: &Dataset, loss: &LossSpec, fit: &FitResult, g: &TestFunction, weight: f64) -> Result<f64> {
    if !(weight >= 0.0 && weight.is_finite()) {
        return Err(Error::InvalidInput(format!("weight must be finite and >= 0, got {weight}")));
    }
    let preds = DVector::from_fn(data.n(), |i, _| {
        let t = fit.predictions[i];
        t + weight * loss.d1(data.y[i], t)
    });
    average(g, &preds, &data.y)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RemDiagnostics {
    /// `Rem_i = h_i - tr[A_hat Σ] (1 - D_ii h_i)`.
    pub rem: DVector<f64>,
    pub rem_sumsq: f64,
    /// `(1/n) sum_i (W_i - tr[A_hat Σ])^2`.
    pub discrepancy_sq: f64,
    pub trace: f64,
}

pub fn rem_diagnostics(data: &Dataset, fit: &FitResult, a: &AHat, sigma: &DMatrix<f64>) -> RemDiagnostics {
    let lev = curvature::leverages(data, a);
    let tr = a.trace_with(sigma);
    let n = data.n();
    let d = &fit.curvature_diag;
    let rem = DVector::from_fn(n, |i, _| lev[i] - tr * (1.0 - d[i] * lev[i]));
    let discrepancy_sq = (0..n)
        .map(|i| {
            let w = lev[i] / (1.0 - lev[i] * d[i]);
            (w - tr).powi(2)
        })
        .sum::<f64>()
        / n as f64;
    RemDiagnostics {
        rem_sumsq: rem.norm_squared(),
        rem,
        discrepancy_sq,
        trace: tr,
    }
}

/// Rows drawn per RNG stream in [`generalization_error_mc`].
pub const MC_CHUNK: usize = 1000;

/// Monte-Carlo estimate of `E[g(b' x_new, y_new)]` and its standard error.
///
/// Chunk `c` of `MC_CHUNK` draws uses the ChaCha8 stream `c` of `seed`, so
/// the result does not depend on how chunks are scheduled.
pub fn generalization_error_mc(
    b: &DVector<f64>,
    sampler: &Sampler,
    g: &TestFunction,
    n_mc: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_mc < 100 {
        return Err(Error::InvalidInput(format!("n_mc must be >= 100, got {n_mc}")));
    }
    if b.len() != sampler.truth().len() {
        return Err(Error::InvalidInput("coefficient dimension does not match the model".into()));
    }
    let chunks = n_mc.div_ceil(MC_CHUNK);
    let values: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let m = MC_CHUNK.min(n_mc - c * MC_CHUNK);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let (x, y) = sampler.draw(&mut rng, m);
            let pred = x * b;
            (0..m).map(|i| g.value(pred[i], y[i])).collect()
        })
        .collect();
    let all: Vec<f64> = values.into_iter().flatten().collect();
    let m = all.len() as f64;
    let mean = all.iter().sum::<f64>() / m;
    let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Ok((mean, (var / m).sqrt()))
}

/// Lipschitz constants of the concentration argument for `Rem_i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationConstants {
    /// `4 p h^{3/2} + 2 sqrt(p) h^{3/2}`.
    pub k: f64,
    /// `h sqrt(p) max(1, sqrt(h p))`.
    pub k_prime: f64,
    /// Closed-form bound on `k` for `h = 1/(n mu)`, when `p/n` is in
    /// `[delta, 1/delta]`.
    pub k_bound: Option<f64>,
    pub k_prime_bound: Option<f64>,
}

impl ConcentrationConstants {
    /// Whether the computed constants respect the closed-form bounds (vacuous
    /// when the bounds are not applicable).
    pub fn within_bounds(&self) -> bool {
        let tol = 1e-12;
        self.k_bound.map_or(true, |b| self.k <= b * (1.0 + tol))
            && self.k_prime_bound.map_or(true, |b| self.k_prime <= b * (1.0 + tol))
    }
}

pub fn concentration_constants(p: usize, n: usize, mu: f64, delta: f64, h_inv_opnorm: f64) -> Result<ConcentrationConstants> {
    if p == 0 || n == 0 || !(mu > 0.0) || !(delta > 0.0) || !(h_inv_opnorm > 0.0) {
        return Err(Error::InvalidInput("concentration constants need positive inputs".into()));
    }
    let pf = p as f64;
    let nf = n as f64;
    let h = h_inv_opnorm;
    let k = 4.0 * pf * h.powf(1.5) + 2.0 * pf.sqrt() * h.powf(1.5);
    let k_prime = h * pf.sqrt() * (h.sqrt() * pf.sqrt()).max(1.0);
    let ratio = pf / nf;
    let proportional = ratio >= delta && ratio <= 1.0 / delta;
    let matches_h = (h - 1.0 / (nf * mu)).abs() <= 1e-12 * h;
    let (k_bound, k_prime_bound) = if proportional && matches_h {
        let kp = delta.powf(-0.5) / (mu * nf.sqrt()) * (delta.powf(-0.5) / mu.sqrt()).max(1.0);
        let kb = 4.0 / (delta * mu.powf(1.5) * nf.sqrt()) + 2.0 / (delta.sqrt() * mu.powf(1.5) * nf);
        (Some(kb), Some(kp))
    } else {
        (None, None)
    };
    Ok(ConcentrationConstants { k, k_prime, k_bound, k_prime_bound })
}

/// Everything the CLI reports about one fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub n: usize,
    pub p: usize,
    pub test_function: String,
    pub alo: f64,
    pub loo: Option<f64>,
    /// Mean-field estimate with weight `tr[Σ A_hat]`.
    pub mf_trace: Option<f64>,
    pub mf_df_ratio: Option<f64>,
    pub mf_hat_ratio: Option<f64>,
    pub weights_alo: Vec<f64>,
    pub leverages: Vec<f64>,
    pub denominators: Vec<f64>,
    pub weight_mf: Option<f64>,
    pub weight_df_ratio: Option<f64>,
    pub weight_hat_ratio: Option<f64>,
    pub discrepancy_sq: Option<f64>,
    pub rem: Option<Vec<f64>>,
    pub rem_sumsq: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct ReportOptions {
    /// Run the `n` refits for the exact leave-one-out estimate.
    pub with_loo: bool,
    pub sigma: Option<DMatrix<f64>>,
}

pub fn risk_report(
    data: &Dataset,
    loss: &LossSpec,
    penalty: &PenaltySpec,
    fit: &FitResult,
    cfg: &SolverConfig,
    g: &TestFunction,
    opts: &ReportOptions,
) -> Result<RiskReport> {
    let a = curvature::a_hat(data, penalty, fit)?;
    let terms = alo_terms(data, loss, fit, &a)?;
    let alo = average(g, &terms.predictions, &data.y)?;

    let loo = if opts.with_loo {
        let preds = loo_predictions(data, loss, penalty, fit, cfg, true)?;
        Some(average(g, &preds, &data.y)?)
    } else {
        None
    };

    let sigma = opts.sigma.as_ref().or(data.sigma.as_ref());
    let weight_mf = sigma.map(|s| mf_weight(&a, s));
    let weight_df_ratio = df_ratio(data, fit, &a).ok();
    let weight_hat_ratio = if *loss == LossSpec::Square {
        hat_ratio(&curvature::hat_matrix(data, loss, &a)?).ok()
    } else {
        None
    };
    let mf = |w: Option<f64>| -> Result<Option<f64>> { w.map(|w| mf_estimate(data, loss, fit, g, w)).transpose() };
    let rem = sigma.map(|s| rem_diagnostics(data, fit, &a, s));

    Ok(RiskReport {
        n: data.n(),
        p: data.p(),
        test_function: g.to_string(),
        alo,
        loo,
        mf_trace: mf(weight_mf)?,
        mf_df_ratio: mf(weight_df_ratio)?,
        mf_hat_ratio: mf(weight_hat_ratio)?,
        weights_alo: terms.weights.iter().copied().collect(),
        leverages: terms.leverages.iter().copied().collect(),
        denominators: terms.denominators.iter().copied().collect(),
        weight_mf,
        weight_df_ratio,
        weight_hat_ratio,
        discrepancy_sq: rem.as_ref().map(|r| r.discrepancy_sq),
        rem: rem.as_ref().map(|r| r.rem.iter().copied().collect()),
        rem_sumsq: rem.as_ref().map(|r| r.rem_sumsq),
    })
}

fn average(g: &TestFunction, preds: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    let mut acc = 0.0;
    for i in 0..preds.len() {
        acc += g.eval(preds[i], y[i])?;
    }
    Ok(acc / preds.len() as f64)
}
