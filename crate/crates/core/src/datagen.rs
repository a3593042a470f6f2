//! Seeded Gaussian designs with linear, heavy-tailed linear and
//! single-index responses, plus CSV import/export.
//!
//! Generation order is fixed: the `n x p` standard normals row by row, then
//! the `n` noise (or uniform) draws, all from one ChaCha8 stream seeded by
//! `ModelSpec::seed`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sigmoid, Dataset, ModelKindTag, SeedInfo};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum Noise {
    Gaussian { sd: f64 },
    StudentT { df: f64 },
    Cauchy,
}

impl Default for Noise {
    fn default() -> Self {
        Noise::StudentT { df: 2.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Logistic,
    Probit,
}

impl Link {
    pub fn apply(&self, t: f64) -> f64 {
        match self {
            Link::Logistic => sigmoid(t),
            Link::Probit => 0.5 * (1.0 + statrs::function::erf::erf(t / std::f64::consts::SQRT_2)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelKind {
    /// `y = X beta + N(0, noise_sd^2)`.
    LinearGaussian { beta: Vec<f64>, noise_sd: f64 },
    /// `y = X beta + eps` with `eps` drawn from `noise`.
    RobustLinear { beta: Vec<f64>, noise: Noise },
    /// `y = 1{U <= link(x' w)}`, `U ~ Unif[0, 1]`, with `w` rescaled so that
    /// `w' Σ w = 1`.
    SingleIndex { w: Vec<f64>, link: Link },
}

impl ModelKind {
    pub fn tag(&self) -> ModelKindTag {
        match self {
            ModelKind::LinearGaussian { .. } => ModelKindTag::Linear,
            ModelKind::RobustLinear { .. } => ModelKindTag::RobustLinear,
            ModelKind::SingleIndex { .. } => ModelKindTag::SingleIndex,
        }
    }

    fn coefficients(&self) -> &[f64] {
        match self {
            ModelKind::LinearGaussian { beta, .. } | ModelKind::RobustLinear { beta, .. } => beta,
            ModelKind::SingleIndex { w, .. } => w,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Covariance {
    Identity,
    Ar1 { rho: f64 },
    Custom { matrix: Vec<Vec<f64>> },
}

impl Covariance {
    pub fn matrix(&self, p: usize) -> Result<DMatrix<f64>> {
        match self {
            Covariance::Identity => Ok(DMatrix::identity(p, p)),
            Covariance::Ar1 { rho } => {
                if !(rho.abs() < 1.0) {
                    return Err(Error::InvalidInput(format!("AR1 needs |rho| < 1, got {rho}")));
                }
                Ok(DMatrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs())))
            }
            Covariance::Custom { matrix } => {
                if matrix.len() != p || matrix.iter().any(|r| r.len() != p) {
                    return Err(Error::InvalidInput(format!("custom covariance must be {p}x{p}")));
                }
                Ok(DMatrix::from_fn(p, p, |i, j| matrix[i][j]))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub covariance: Covariance,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
}

/// Population quantities needed to draw rows: the Cholesky factor of `Σ` and
/// the (normalized) coefficient vector.
#[derive(Clone, Debug)]
pub struct Sampler {
    kind: ModelKind,
    sigma: DMatrix<f64>,
    /// Lower Cholesky factor; `None` for the identity.
    chol: Option<DMatrix<f64>>,
    truth: DVector<f64>,
}

impl Sampler {
    pub fn new(kind: &ModelKind, covariance: &Covariance, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidInput("p must be >= 1".into()));
        }
        let coef = kind.coefficients();
        if coef.len() != p {
            return Err(Error::InvalidInput(format!("coefficient vector has length {}, expected {p}", coef.len())));
        }
        match kind {
            ModelKind::LinearGaussian { noise_sd, .. } if !(*noise_sd >= 0.0) => {
                return Err(Error::InvalidInput("noise_sd must be >= 0".into()));
            }
            ModelKind::RobustLinear { noise: Noise::Gaussian { sd }, .. } if !(*sd >= 0.0) => {
                return Err(Error::InvalidInput("noise sd must be >= 0".into()));
            }
            ModelKind::RobustLinear { noise: Noise::StudentT { df }, .. } if !(*df > 0.0) => {
                return Err(Error::InvalidInput("Student-t df must be > 0".into()));
            }
            _ => {}
        }
        let sigma = covariance.matrix(p)?;
        let chol = match covariance {
            Covariance::Identity => None,
            _ => {
                let c = sigma.clone().cholesky().ok_or_else(|| {
                    Error::InvalidInput("covariance is not positive definite".into())
                })?;
                let l = c.l();
                if l.diagonal().min() <= 1e-12 {
                    return Err(Error::InvalidInput("covariance is numerically singular".into()));
                }
                Some(l)
            }
        };
        let mut truth = DVector::from_column_slice(coef);
        if let ModelKind::SingleIndex { .. } = kind {
            let q = truth.dot(&(&sigma * &truth));
            if !(q > 0.0) {
                return Err(Error::InvalidInput("single-index w must be nonzero".into()));
            }
            truth /= q.sqrt();
        }
        Ok(Self { kind: kind.clone(), sigma, chol, truth })
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn truth(&self) -> &DVector<f64> {
        &self.truth
    }

    /// Draws `m` rows and their responses.
    pub fn draw<R: Rng>(&self, rng: &mut R, m: usize) -> (DMatrix<f64>, DVector<f64>) {
        let p = self.truth.len();
        let mut z = DMatrix::<f64>::zeros(m, p);
        for i in 0..m {
            for j in 0..p {
                z[(i, j)] = StandardNormal.sample(rng);
            }
        }
        let x = match &self.chol {
            None => z,
            Some(l) => z * l.transpose(),
        };
        let index = &x * &self.truth;
        let y = match &self.kind {
            ModelKind::LinearGaussian { noise_sd, .. } => {
                DVector::from_fn(m, |i, _| index[i] + noise_sd * Distribution::<f64>::sample(&StandardNormal, rng))
            }
            ModelKind::RobustLinear { noise, .. } => {
                let eps: Vec<f64> = match noise {
                    Noise::Gaussian { sd } => (0..m).map(|_| sd * Distribution::<f64>::sample(&StandardNormal, rng)).collect(),
                    Noise::StudentT { df } => {
                        let t = StudentT::new(*df).expect("validated df");
                        (0..m).map(|_| t.sample(rng)).collect()
                    }
                    Noise::Cauchy => {
                        let c = Cauchy::new(0.0, 1.0).expect("unit scale");
                        (0..m).map(|_| c.sample(rng)).collect()
                    }
                };
                DVector::from_fn(m, |i, _| index[i] + eps[i])
            }
            ModelKind::SingleIndex { link, .. } => DVector::from_fn(m, |i, _| {
                let u: f64 = rng.random();
                if u <= link.apply(index[i]) {
                    1.0
                } else {
                    0.0
                }
            }),
        };
        (x, y)
    }
}

/// Draws a dataset with iid `N(0, Σ)` rows according to `spec`.
pub fn generate(spec: &ModelSpec) -> Result<Dataset> {
    if spec.n == 0 || spec.p == 0 {
        return Err(Error::InvalidInput("n and p must be >= 1".into()));
    }
    let sampler = Sampler::new(&spec.kind, &spec.covariance, spec.p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (x, y) = sampler.draw(&mut rng, spec.n);
    Dataset::new(x, y)?
        .with_sigma(sampler.sigma.clone())?
        .with_seed_info(SeedInfo { seed: spec.seed, model: spec.kind.tag() })
        .with_truth(sampler.truth.clone())
}

/// `k` entries of magnitude `amplitude` with random signs at random
/// positions.
pub fn sparse_coefficients(p: usize, k: usize, amplitude: f64, seed: u64) -> Result<DVector<f64>> {
    if k > p {
        return Err(Error::InvalidInput(format!("sparsity {k} exceeds dimension {p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DVector::zeros(p);
    let mut positions = index::sample(&mut rng, p, k).into_vec();
    positions.sort_unstable();
    for j in positions {
        out[j] = if rng.random_bool(0.5) { amplitude } else { -amplitude };
    }
    Ok(out)
}

/// Writes `x_1, ..., x_p, y` with a header row.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (1..=data.p()).map(|j| format!("x_{j}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = data.x.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(data.y[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV written by [`write_csv`]: a header, then `p` feature columns
/// followed by the response.
pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    let width = r.headers()?.len();
    if width < 2 {
        return Err(Error::InvalidInput("data CSV needs at least one feature and y".into()));
    }
    let mut values = Vec::new();
    let mut n = 0;
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != width {
            return Err(Error::InvalidInput(format!("row {} has {} fields, expected {width}", n + 1, rec.len())));
        }
        for field in rec.iter() {
            values.push(parse_field(field)?);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidInput("data CSV has no rows".into()));
    }
    let all = DMatrix::from_row_slice(n, width, &values);
    let x = all.columns(0, width - 1).into_owned();
    let y = all.column(width - 1).into_owned();
    Dataset::new(x, y)
}

/// Reads a headerless numeric matrix.
pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(rec.iter().map(parse_field).collect::<Result<_>>()?);
    }
    let m = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    if m == 0 || rows.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidInput("matrix CSV is empty or ragged".into()));
    }
    Ok(DMatrix::from_fn(m, k, |i, j| rows[i][j]))
}

fn parse_field(s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::InvalidInput(format!("not a number: '{s}'")))
}
