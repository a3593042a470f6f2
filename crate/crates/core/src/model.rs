//! Domain types shared by every module: data, losses, penalties, test
//! functions and fit results.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Which data-generating model produced a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKindTag {
    Linear,
    RobustLinear,
    SingleIndex,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedInfo {
    pub seed: u64,
    pub model: ModelKindTag,
}

/// Design matrix, responses and optional population quantities.
///
/// Binary responses are stored as reals in `{0, 1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub sigma: Option<DMatrix<f64>>,
    pub truth: Option<DVector<f64>>,
    pub seed_info: Option<SeedInfo>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 || p == 0 {
            return Err(Error::InvalidInput(format!("empty design ({n}x{p})")));
        }
        if y.len() != n {
            return Err(Error::InvalidInput(format!(
                "response length {} does not match {n} rows",
                y.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("design has non-finite entries".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("response has non-finite entries".into()));
        }
        Ok(Self {
            x,
            y,
            sigma: None,
            truth: None,
            seed_info: None,
        })
    }

    /// Attaches a known population covariance. It must be symmetric and
    /// positive definite.
    pub fn with_sigma(mut self, sigma: DMatrix<f64>) -> Result<Self> {
        let p = self.p();
        if sigma.shape() != (p, p) {
            return Err(Error::InvalidInput(format!(
                "sigma is {:?}, expected {p}x{p}",
                sigma.shape()
            )));
        }
        let scale = sigma.amax().max(f64::MIN_POSITIVE);
        let asym = (&sigma - sigma.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::InvalidInput(format!("sigma not symmetric (gap {asym:.3e})")));
        }
        let min_eig = linalg::sym_eigenvalues(&sigma).min();
        if !(min_eig > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sigma not positive definite (min eigenvalue {min_eig:.3e})"
            )));
        }
        self.sigma = Some(sigma);
        Ok(self)
    }

    pub fn with_truth(mut self, truth: DVector<f64>) -> Result<Self> {
        if truth.len() != self.p() {
            return Err(Error::InvalidInput("truth length must equal p".into()));
        }
        if let (Some(SeedInfo { model: ModelKindTag::SingleIndex, .. }), Some(sigma)) =
            (self.seed_info, &self.sigma)
        {
            let q = truth.dot(&(sigma * &truth));
            if (q - 1.0).abs() > 1e-8 {
                return Err(Error::InvalidInput(format!(
                    "single-index truth must satisfy w'Σw = 1, got {q}"
                )));
            }
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn with_seed_info(mut self, info: SeedInfo) -> Self {
        self.seed_info = Some(info);
        self
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Row `i` of the design as an owned column vector.
    pub fn row(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }
}

/// Convex loss `L_y(t)` with its first two derivatives in `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LossSpec {
    /// `(y - t)^2 / 2`
    Square,
    /// `rho(y - t)` with the Huber function of the given threshold.
    Huber { threshold: f64 },
    /// Negative Bernoulli log-likelihood `log(1 + e^t) - y t`.
    Logistic,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::Huber { threshold: 1.0 }
    }
}

impl LossSpec {
    pub fn huber(threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold.is_finite()) {
            return Err(Error::InvalidInput(format!("huber threshold must be > 0, got {threshold}")));
        }
        Ok(LossSpec::Huber { threshold })
    }

    #[inline]
    pub fn value(&self, y: f64, t: f64) -> f64 {
        match *self {
            LossSpec::Square => 0.5 * (y - t) * (y - t),
            LossSpec::Huber { threshold: m } => {
                let r = (y - t).abs();
                if r <= m {
                    0.5 * r * r
                } else {
                    m * r - 0.5 * m * m
                }
            }
            LossSpec::Logistic => softplus(t) - y * t,
        }
    }

    #[inline]
    pub fn d1(&self, y: f64, t: f64) -> f64 {
        match *self {
            LossSpec::Square => t - y,
            LossSpec::Huber { threshold: m } => -(y - t).clamp(-m, m),
            LossSpec::Logistic => sigmoid(t) - y,
        }
    }

    #[inline]
    pub fn d2(&self, y: f64, t: f64) -> f64 {
        match *self {
            LossSpec::Square => 1.0,
            LossSpec::Huber { threshold: m } => {
                if (y - t).abs() <= m {
                    1.0
                } else {
                    0.0
                }
            }
            LossSpec::Logistic => {
                let s = sigmoid(t);
                s * (1.0 - s)
            }
        }
    }

    /// `(L_y(t), L_y'(t), L_y''(t))`.
    pub fn eval(&self, y: f64, t: f64) -> Result<(f64, f64, f64)> {
        if !t.is_finite() || !y.is_finite() {
            return Err(Error::Domain(format!("loss evaluated at y={y}, t={t}")));
        }
        Ok((self.value(y, t), self.d1(y, t), self.d2(y, t)))
    }

    /// Upper bound on `L_y''` over all inputs.
    pub fn max_curvature(&self) -> f64 {
        match self {
            LossSpec::Square | LossSpec::Huber { .. } => 1.0,
            LossSpec::Logistic => 0.25,
        }
    }

    /// Whether `t -> L_y(t)` is 1-Lipschitz for every `y`.
    pub fn is_lipschitz(&self) -> bool {
        match *self {
            LossSpec::Square => false,
            LossSpec::Huber { threshold } => threshold <= 1.0,
            // |sigmoid(t) - y| <= 1 for y in {0, 1}
            LossSpec::Logistic => true,
        }
    }

    /// Whether `t -> L_y'(t)` is 1-Lipschitz for every `y`.
    pub fn derivative_is_lipschitz(&self) -> bool {
        true
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSpec::Square => write!(f, "square"),
            LossSpec::Huber { threshold } => write!(f, "huber:{threshold}"),
            LossSpec::Logistic => write!(f, "logistic"),
        }
    }
}

impl FromStr for LossSpec {
    type Err = Error;

    /// `square`, `huber` (threshold 1), `huber:<m>` or `logistic`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None => match s {
                "square" => Ok(LossSpec::Square),
                "huber" => Ok(LossSpec::default()),
                "logistic" => Ok(LossSpec::Logistic),
                _ => Err(Error::InvalidInput(format!("unknown loss '{s}'"))),
            },
            Some(("huber", m)) => LossSpec::huber(parse_real(m)?),
            _ => Err(Error::InvalidInput(format!("unknown loss '{s}'"))),
        }
    }
}

#[inline]
pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Penalty family. `nu` is always the per-observation ridge weight, so the
/// quadratic part of the penalty is `n * nu * |b|^2 / 2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PenaltyFamily {
    Ridge { nu: f64 },
    ElasticNet { lambda: f64, nu: f64 },
    GroupLasso { groups: Vec<Vec<usize>>, lambdas: Vec<f64>, nu: f64 },
}

impl PenaltyFamily {
    pub fn nu(&self) -> f64 {
        match *self {
            PenaltyFamily::Ridge { nu }
            | PenaltyFamily::ElasticNet { nu, .. }
            | PenaltyFamily::GroupLasso { nu, .. } => nu,
        }
    }

    pub fn kind(&self) -> PenaltyKind {
        match self {
            PenaltyFamily::Ridge { .. } => PenaltyKind::Ridge,
            PenaltyFamily::ElasticNet { .. } => PenaltyKind::ElasticNet,
            PenaltyFamily::GroupLasso { .. } => PenaltyKind::GroupLasso,
        }
    }

    /// Contiguous groups of `size` (the last one may be shorter), each with
    /// weight `lambda * sqrt(|G|)`.
    pub fn contiguous_groups(p: usize, size: usize, lambda: f64, nu: f64) -> Self {
        let size = size.max(1);
        let groups: Vec<Vec<usize>> = (0..p)
            .step_by(size)
            .map(|s| (s..(s + size).min(p)).collect())
            .collect();
        let lambdas = groups.iter().map(|g| lambda * (g.len() as f64).sqrt()).collect();
        PenaltyFamily::GroupLasso { groups, lambdas, nu }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    Ridge,
    ElasticNet,
    GroupLasso,
}

/// A validated penalty bound to a sample size and an effective
/// strong-convexity constant.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PenaltySpec {
    family: PenaltyFamily,
    n_scale: usize,
    mu_eff: f64,
}

impl PenaltySpec {
    /// Validates `family` for dimension `p` and sample size `n`, with the
    /// isotropic strong-convexity constant `mu_eff = nu`.
    pub fn new(family: PenaltyFamily, n: usize, p: usize) -> Result<Self> {
        let nu = family.nu();
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::InvalidInput(format!("nu must be > 0, got {nu}")));
        }
        match &family {
            PenaltyFamily::Ridge { .. } => {}
            PenaltyFamily::ElasticNet { lambda, .. } => {
                if !(*lambda >= 0.0 && lambda.is_finite()) {
                    return Err(Error::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
                }
            }
            PenaltyFamily::GroupLasso { groups, lambdas, .. } => {
                if groups.len() != lambdas.len() {
                    return Err(Error::InvalidInput("one lambda per group is required".into()));
                }
                if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
                    return Err(Error::InvalidInput("group lambdas must be >= 0".into()));
                }
                let mut seen = vec![false; p];
                for g in groups {
                    if g.is_empty() {
                        return Err(Error::InvalidInput("empty group".into()));
                    }
                    for &j in g {
                        if j >= p || seen[j] {
                            return Err(Error::InvalidInput(format!(
                                "groups do not partition 0..{p} (index {j})"
                            )));
                        }
                        seen[j] = true;
                    }
                }
                if seen.iter().any(|s| !s) {
                    return Err(Error::InvalidInput(format!("groups do not cover 0..{p}")));
                }
            }
        }
        if n == 0 {
            return Err(Error::InvalidInput("n must be >= 1".into()));
        }
        Ok(Self { family, n_scale: n, mu_eff: nu })
    }

    /// Uses `mu_eff = nu / |Σ|_op` when `Σ` is known.
    pub fn for_dataset(family: PenaltyFamily, data: &Dataset) -> Result<Self> {
        let spec = Self::new(family, data.n(), data.p())?;
        Ok(match &data.sigma {
            Some(sigma) => {
                let op = linalg::sym_op_norm(sigma);
                spec.with_sigma_opnorm(op)
            }
            None => spec,
        })
    }

    pub fn with_sigma_opnorm(mut self, op: f64) -> Self {
        self.mu_eff = self.family.nu() / op;
        self
    }

    pub fn family(&self) -> &PenaltyFamily {
        &self.family
    }

    pub fn kind(&self) -> PenaltyKind {
        self.family.kind()
    }

    pub fn n_scale(&self) -> usize {
        self.n_scale
    }

    pub fn mu_eff(&self) -> f64 {
        self.mu_eff
    }

    pub fn nu(&self) -> f64 {
        self.family.nu()
    }

    /// `n * nu`, the ridge weight of the quadratic part.
    pub fn ridge_weight(&self) -> f64 {
        self.n_scale as f64 * self.family.nu()
    }

    /// `R(b)`.
    pub fn value(&self, b: &DVector<f64>) -> f64 {
        let quad = 0.5 * self.ridge_weight() * b.norm_squared();
        match &self.family {
            PenaltyFamily::Ridge { .. } => quad,
            PenaltyFamily::ElasticNet { lambda, .. } => lambda * b.lp_norm(1) + quad,
            PenaltyFamily::GroupLasso { groups, lambdas, .. } => {
                let l: f64 = groups
                    .iter()
                    .zip(lambdas)
                    .map(|(g, lam)| lam * group_norm(b, g))
                    .sum();
                l + quad
            }
        }
    }

    /// Same penalty re-bound to another sample size (leave-one-out problems
    /// keep the full-data `n`).
    pub fn rescaled(&self, n: usize) -> Self {
        Self { n_scale: n, ..self.clone() }
    }
}

pub(crate) fn group_norm(b: &DVector<f64>, g: &[usize]) -> f64 {
    g.iter().map(|&j| b[j] * b[j]).sum::<f64>().sqrt()
}

/// Coordinates counted as nonzero: `|b_j| > 1e-10 * max(1, |b|_inf)`.
pub fn activity_threshold(b: &DVector<f64>) -> f64 {
    1e-10 * b.amax().max(1.0)
}

pub fn active_set(b: &DVector<f64>) -> Vec<usize> {
    let thr = activity_threshold(b);
    (0..b.len()).filter(|&j| b[j].abs() > thr).collect()
}

/// Groups with `|b_G| > threshold`.
pub fn active_groups(b: &DVector<f64>, groups: &[Vec<usize>]) -> Vec<usize> {
    let thr = activity_threshold(b);
    (0..groups.len()).filter(|&k| group_norm(b, &groups[k]) > thr).collect()
}

/// Test function `g(a, y)` used to score predictions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    SquaredError,
    AbsoluteError,
    /// `log(1 + e^a) - y a`
    LogisticDeviance,
    /// `1{ 1{a > threshold} != y }`, with `a` the raw prediction.
    Misclassification { threshold: f64 },
}

impl TestFunction {
    #[inline]
    pub fn value(&self, a: f64, y: f64) -> f64 {
        match *self {
            TestFunction::SquaredError => (a - y) * (a - y),
            TestFunction::AbsoluteError => (a - y).abs(),
            TestFunction::LogisticDeviance => softplus(a) - y * a,
            TestFunction::Misclassification { threshold } => {
                let label = if a > threshold { 1.0 } else { 0.0 };
                if label == y {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }

    pub fn eval(&self, a: f64, y: f64) -> Result<f64> {
        if !a.is_finite() || !y.is_finite() {
            return Err(Error::Domain(format!("test function evaluated at a={a}, y={y}")));
        }
        Ok(self.value(a, y))
    }

    /// `|g(x,y) - g(x',y)| <= |x - x'| (1 + |x| + |x'|)` for all `x, x'` at
    /// fixed `y`.
    pub fn satisfies_growth_condition(&self) -> bool {
        !matches!(self, TestFunction::Misclassification { .. })
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFunction::SquaredError => write!(f, "sq"),
            TestFunction::AbsoluteError => write!(f, "abs"),
            TestFunction::LogisticDeviance => write!(f, "dev"),
            TestFunction::Misclassification { threshold } => write!(f, "mis:{threshold}"),
        }
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None => match s {
                "sq" => Ok(TestFunction::SquaredError),
                "abs" => Ok(TestFunction::AbsoluteError),
                "dev" => Ok(TestFunction::LogisticDeviance),
                "mis" => Ok(TestFunction::Misclassification { threshold: 0.0 }),
                _ => Err(Error::InvalidInput(format!("unknown test function '{s}'"))),
            },
            Some(("mis", t)) => Ok(TestFunction::Misclassification { threshold: parse_real(t)? }),
            _ => Err(Error::InvalidInput(format!("unknown test function '{s}'"))),
        }
    }
}

pub(crate) fn parse_real(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::InvalidInput(format!("expected a number, got '{s}'")))
}

/// Output of a certified (or best-effort) solve.
#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub b_hat: DVector<f64>,
    /// `X b_hat`; for leave-one-out fits this still covers all `n` rows.
    pub predictions: DVector<f64>,
    /// `L_{y_i}''(x_i' b_hat)`, zero for a left-out row.
    pub curvature_diag: DVector<f64>,
    pub active_set: Vec<usize>,
    pub active_groups: Option<Vec<usize>>,
    pub kkt_residual: f64,
    pub tol: f64,
    pub certified: bool,
    pub iterations: usize,
    pub objective: f64,
    /// Objective after every accepted iteration.
    pub objective_trace: Vec<f64>,
    /// Observation excluded from the fit, if any.
    pub left_out: Option<usize>,
}

/// JSON view of a fit.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FitSummary {
    pub coefficients: Vec<f64>,
    pub active_set: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub active_groups: Option<Vec<usize>>,
    pub kkt_residual: f64,
    pub tol: f64,
    pub certified: bool,
    pub iterations: usize,
    pub objective: f64,
}

impl From<&FitResult> for FitSummary {
    fn from(f: &FitResult) -> Self {
        Self {
            coefficients: f.b_hat.iter().copied().collect(),
            active_set: f.active_set.clone(),
            active_groups: f.active_groups.clone(),
            kkt_residual: f.kkt_residual,
            tol: f.tol,
            certified: f.certified,
            iterations: f.iterations,
            objective: f.objective,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_loss_values() {
        let (v, d1, d2) = LossSpec::Square.eval(3.0, 1.5).unwrap();
        assert_eq!(v, 1.125);
        assert_eq!(d1, -1.5);
        assert_eq!(d2, 1.0);
    }

    #[test]
    fn huber_branches() {
        let h = LossSpec::huber(1.0).unwrap();
        let (_, d1, d2) = h.eval(0.0, 0.5).unwrap();
        assert_eq!((d1, d2), (0.5, 1.0));
        let (_, d1, d2) = h.eval(0.0, 2.0).unwrap();
        assert_eq!((d1, d2), (1.0, 0.0));
        assert!(LossSpec::huber(0.0).is_err());
    }

    #[test]
    fn non_finite_inputs_are_domain_errors() {
        assert!(matches!(LossSpec::Logistic.eval(1.0, f64::NAN), Err(Error::Domain(_))));
        assert!(matches!(TestFunction::SquaredError.eval(f64::INFINITY, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn test_function_examples() {
        assert_eq!(TestFunction::SquaredError.eval(0.0, 3.0).unwrap(), 9.0);
        assert_eq!(TestFunction::AbsoluteError.eval(1.7, 1.7).unwrap(), 0.0);
        let mis = TestFunction::Misclassification { threshold: 0.5 };
        assert_eq!(mis.eval(0.7, 1.0).unwrap(), 0.0);
        assert_eq!(mis.eval(0.2, 1.0).unwrap(), 1.0);
        assert!(!mis.satisfies_growth_condition());
        assert!(TestFunction::AbsoluteError.satisfies_growth_condition());
    }

    #[test]
    fn growth_condition_holds_for_sq_and_abs() {
        // squared error only meets the bound for |y| <= 1/2; probe at y = 0
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for g in [TestFunction::SquaredError, TestFunction::AbsoluteError] {
            for _ in 0..1000 {
                let x: f64 = rng.random_range(-10.0..10.0);
                let xp: f64 = rng.random_range(-10.0..10.0);
                let lhs = (g.value(x, 0.0) - g.value(xp, 0.0)).abs();
                let rhs = (x - xp).abs() * (1.0 + x.abs() + xp.abs());
                assert!(lhs <= rhs + 1e-12);
            }
        }
    }

    #[test]
    fn loss_invariants_on_random_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let losses = [
            LossSpec::Square,
            LossSpec::huber(1.0).unwrap(),
            LossSpec::huber(0.3).unwrap(),
            LossSpec::Logistic,
        ];
        for loss in losses {
            for _ in 0..1000 {
                let y = match loss {
                    LossSpec::Logistic => f64::from(rng.random_bool(0.5) as u8),
                    _ => rng.random_range(-5.0..5.0),
                };
                let t: f64 = rng.random_range(-6.0..6.0);
                let d2 = loss.d2(y, t);
                assert!((0.0..=1.0).contains(&d2));
                assert!(d2 <= loss.max_curvature());
                let h = 1e-6;
                let fd = (loss.value(y, t + h) - loss.value(y, t - h)) / (2.0 * h);
                // Huber kinks sit at |y - t| = m; skip probes straddling them
                if let LossSpec::Huber { threshold } = loss {
                    if ((y - t).abs() - threshold).abs() < 2.0 * h {
                        continue;
                    }
                }
                assert!((fd - loss.d1(y, t)).abs() < 1e-6, "{loss} y={y} t={t}");
                let (a, b): (f64, f64) = (t, rng.random_range(-6.0..6.0));
                let mid = 0.5 * (a + b);
                assert!(loss.value(y, mid) <= 0.5 * (loss.value(y, a) + loss.value(y, b)) + 1e-10);
            }
        }
    }

    #[test]
    fn parse_specs() {
        assert_eq!("huber:0.5".parse::<LossSpec>().unwrap(), LossSpec::Huber { threshold: 0.5 });
        assert_eq!("logistic".parse::<LossSpec>().unwrap(), LossSpec::Logistic);
        assert!("cauchy".parse::<LossSpec>().is_err());
        assert_eq!(
            "mis:0.25".parse::<TestFunction>().unwrap(),
            TestFunction::Misclassification { threshold: 0.25 }
        );
    }

    #[test]
    fn penalty_validation() {
        assert!(PenaltySpec::new(PenaltyFamily::ElasticNet { lambda: 1.0, nu: 0.0 }, 10, 3).is_err());
        assert!(PenaltySpec::new(PenaltyFamily::Ridge { nu: -1.0 }, 10, 3).is_err());
        let overlapping = PenaltyFamily::GroupLasso {
            groups: vec![vec![0, 1], vec![1, 2]],
            lambdas: vec![1.0, 1.0],
            nu: 1.0,
        };
        assert!(PenaltySpec::new(overlapping, 10, 3).is_err());
        let uncovered = PenaltyFamily::GroupLasso { groups: vec![vec![0, 1]], lambdas: vec![1.0], nu: 1.0 };
        assert!(PenaltySpec::new(uncovered, 10, 3).is_err());
        let ok = PenaltyFamily::contiguous_groups(5, 2, 1.0, 0.5);
        let spec = PenaltySpec::new(ok, 10, 5).unwrap();
        assert_eq!(spec.ridge_weight(), 5.0);
        assert_eq!(spec.mu_eff(), 0.5);
    }

    #[test]
    fn penalties_minimized_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fams = [
            PenaltyFamily::Ridge { nu: 0.3 },
            PenaltyFamily::ElasticNet { lambda: 0.7, nu: 0.3 },
            PenaltyFamily::contiguous_groups(4, 2, 0.7, 0.3),
        ];
        for fam in fams {
            let pen = PenaltySpec::new(fam, 5, 4).unwrap();
            let zero = DVector::zeros(4);
            for _ in 0..100 {
                let b = DVector::from_fn(4, |_, _| rng.random_range(-2.0..2.0));
                assert!(pen.value(&b) >= pen.value(&zero));
            }
        }
    }

    #[test]
    fn mu_eff_uses_sigma_opnorm() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let data = Dataset::new(x, DVector::from_vec(vec![1.0, 2.0])).unwrap().with_sigma(sigma).unwrap();
        let pen = PenaltySpec::for_dataset(PenaltyFamily::Ridge { nu: 1.0 }, &data).unwrap();
        assert!((pen.mu_eff() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dataset_rejects_bad_input() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, f64::NAN]);
        assert!(Dataset::new(x, DVector::from_vec(vec![0.0])).is_err());
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let d = Dataset::new(x, DVector::from_vec(vec![0.0])).unwrap();
        let not_pd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(d.clone().with_sigma(not_pd).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(d.with_sigma(asym).is_err());
    }
}
