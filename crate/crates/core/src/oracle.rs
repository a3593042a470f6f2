//! Finite-difference and brute-force references. Nothing here reuses the
//! curvature or risk code: derivatives come from refits through
//! [`solver::fit`], proximal points from grid search, and matrix functions
//! from LU inverses.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, FitResult, LossSpec, PenaltyFamily, PenaltyKind, PenaltySpec};
use crate::solver::{self, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Relative central-difference step; the actual step is
    /// `fd_step * max(1, |input|)`.
    pub fd_step: f64,
    pub n_probes: usize,
    pub tolerance: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { fd_step: 1e-5, n_probes: 200, tolerance: 1e-4 }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(Error::InvalidInput(format!("fd_step must be > 0, got {}", self.fd_step)));
        }
        Ok(())
    }
}

/// Largest probe solver tolerance accepted by the finite-difference oracles.
pub const PROBE_MAX_TOL: f64 = 1e-10;

fn check_probe(cfg: &SolverConfig, probe: &ProbeConfig) -> Result<()> {
    probe.validate()?;
    if cfg.tol > PROBE_MAX_TOL {
        return Err(Error::InvalidInput(format!(
            "probe refits need tol <= {PROBE_MAX_TOL:e}, got {:e}",
            cfg.tol
        )));
    }
    Ok(())
}

fn same_support(penalty: &PenaltySpec, a: &FitResult, b: &FitResult) -> bool {
    penalty.kind() == PenaltyKind::Ridge || (a.active_set == b.active_set && a.active_groups == b.active_groups)
}

/// Central difference of `b_hat` with respect to `x_ij`, from two refits.
///
/// For non-smooth penalties, returns [`Error::SupportChanged`] when the two
/// refits disagree on the active set.
pub fn jacobian_fd(
    data: &Dataset,
    loss: &LossSpec,
    penalty: &PenaltySpec,
    cfg: &SolverConfig,
    probe: &ProbeConfig,
    i: usize,
    j: usize,
) -> Result<DVector<f64>> {
    check_probe(cfg, probe)?;
    if i >= data.n() || j >= data.p() {
        return Err(Error::InvalidInput(format!("probe ({i}, {j}) out of range")));
    }
    let h = probe.fd_step * data.x[(i, j)].abs().max(1.0);
    let shifted = |delta: f64| -> Result<FitResult> {
        let mut d = data.clone();
        d.x[(i, j)] += delta;
        solver::fit(&d, loss, penalty, cfg)
    };
    let plus = shifted(h)?;
    let minus = shifted(-h)?;
    if !same_support(penalty, &plus, &minus) {
        return Err(Error::SupportChanged);
    }
    Ok((plus.b_hat - minus.b_hat) / (2.0 * h))
}

/// Central-difference Jacobian of `y -> X b_hat(y)` for the square loss.
pub fn hat_matrix_fd(data: &Dataset, penalty: &PenaltySpec, cfg: &SolverConfig, probe: &ProbeConfig) -> Result<DMatrix<f64>> {
    check_probe(cfg, probe)?;
    let n = data.n();
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        let h = probe.fd_step * data.y[k].abs().max(1.0);
        let shifted = |delta: f64| -> Result<FitResult> {
            let mut d = data.clone();
            d.y[k] += delta;
            solver::fit(&d, &LossSpec::Square, penalty, cfg)
        };
        let plus = shifted(h)?;
        let minus = shifted(-h)?;
        if !same_support(penalty, &plus, &minus) {
            return Err(Error::SupportChanged);
        }
        out.set_column(k, &((plus.predictions - minus.predictions) / (2.0 * h)));
    }
    Ok(out)
}

/// `|b - v|^2 / (2 step) + R(b)`, evaluated directly.
pub fn prox_objective(penalty: &PenaltySpec, v: &DVector<f64>, step: f64, b: &DVector<f64>) -> f64 {
    (b - v).norm_squared() / (2.0 * step) + penalty.value(b)
}

/// Grid minimizer of the proximal objective.
///
/// Separable penalties are searched coordinate by coordinate. Groups of one
/// or two coordinates get a full zooming grid; larger groups are searched
/// along the ray through `v_G`, which contains the minimizer by rotational
/// symmetry of the group objective.
pub fn prox_bruteforce(penalty: &PenaltySpec, v: &DVector<f64>, step: f64, grid_resolution: f64) -> DVector<f64> {
    let rw = penalty.ridge_weight();
    let res = grid_resolution.max(1e-15);
    let quad = move |b: f64, vj: f64| (b - vj).powi(2) / (2.0 * step) + 0.5 * rw * b * b;
    match penalty.family() {
        PenaltyFamily::Ridge { .. } => v.map(|vj| zoom_1d(|b| quad(b, vj), -vj.abs() - 1.0, vj.abs() + 1.0, res)),
        PenaltyFamily::ElasticNet { lambda, .. } => {
            let lam = *lambda;
            v.map(|vj| zoom_1d(|b| quad(b, vj) + lam * b.abs(), -vj.abs() - 1.0, vj.abs() + 1.0, res))
        }
        PenaltyFamily::GroupLasso { groups, lambdas, .. } => {
            let mut out = DVector::zeros(v.len());
            for (g, &lam) in groups.iter().zip(lambdas) {
                let vg: Vec<f64> = g.iter().map(|&j| v[j]).collect();
                let vn = vg.iter().map(|x| x * x).sum::<f64>().sqrt();
                let group_obj = |b: &[f64]| -> f64 {
                    let bn = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                    b.iter().zip(&vg).map(|(bj, vj)| quad(*bj, *vj)).sum::<f64>() + lam * bn
                };
                let bg: Vec<f64> = match g.len() {
                    1 => vec![zoom_1d(|b| group_obj(&[b]), -vn - 1.0, vn + 1.0, res)],
                    2 => zoom_2d(|a, b| group_obj(&[a, b]), vn + 1.0, res).to_vec(),
                    _ if vn == 0.0 => vec![0.0; g.len()],
                    _ => {
                        let dir: Vec<f64> = vg.iter().map(|x| x / vn).collect();
                        let r = zoom_1d(
                            |r| group_obj(&dir.iter().map(|d| d * r).collect::<Vec<_>>()),
                            0.0,
                            vn + 1.0,
                            res,
                        );
                        dir.iter().map(|d| d * r).collect()
                    }
                };
                for (&j, bj) in g.iter().zip(bg) {
                    out[j] = bj;
                }
            }
            out
        }
    }
}

const GRID: usize = 64;

/// Zooming grid search for a convex function on `[lo, hi]`.
fn zoom_1d(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, res: f64) -> f64 {
    loop {
        let h = (hi - lo) / GRID as f64;
        let mut best_k = 0;
        let mut best_v = f64::INFINITY;
        for k in 0..=GRID {
            let val = f(lo + k as f64 * h);
            if val < best_v {
                best_v = val;
                best_k = k;
            }
        }
        let best = lo + best_k as f64 * h;
        if h <= res {
            return best;
        }
        let (nlo, nhi) = (best - h, best + h);
        if nlo >= nhi || (nlo == lo && nhi == hi) {
            return best;
        }
        lo = nlo;
        hi = nhi;
    }
}

/// Zooming grid search for a convex function on `[-r, r]^2`.
fn zoom_2d(f: impl Fn(f64, f64) -> f64, r: f64, res: f64) -> [f64; 2] {
    let (mut lo, mut hi) = ([-r, -r], [r, r]);
    for _ in 0..200 {
        let h = [(hi[0] - lo[0]) / GRID as f64, (hi[1] - lo[1]) / GRID as f64];
        let mut best = [lo[0], lo[1]];
        let mut best_v = f64::INFINITY;
        for a in 0..=GRID {
            for b in 0..=GRID {
                let pt = [lo[0] + a as f64 * h[0], lo[1] + b as f64 * h[1]];
                let val = f(pt[0], pt[1]);
                if val < best_v {
                    best_v = val;
                    best = pt;
                }
            }
        }
        if h[0].max(h[1]) <= res {
            return best;
        }
        // two cells on each side keeps the minimizer inside when the level
        // sets are elongated
        lo = [best[0] - 2.0 * h[0], best[1] - 2.0 * h[1]];
        hi = [best[0] + 2.0 * h[0], best[1] + 2.0 * h[1]];
    }
    [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0]
}

/// Matrix functions whose Lipschitz constants are probed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixFunction {
    /// `f_i(X) = D_ii e_i' X (X'DX + H)^{-1} X' e_i`.
    Leverage { i: usize },
    /// `F(X) = tr (X'DX + H)^{-1}`.
    TraceInverse,
}

impl MatrixFunction {
    pub fn eval(&self, x: &DMatrix<f64>, d: &DVector<f64>, h_pen: &DMatrix<f64>) -> Result<f64> {
        let m = x.transpose() * DMatrix::from_diagonal(d) * x + h_pen;
        let inv = m
            .try_inverse()
            .ok_or_else(|| Error::SingularSystem("probe matrix is singular".into()))?;
        Ok(match *self {
            MatrixFunction::Leverage { i } => {
                let xi = x.row(i).transpose();
                d[i] * xi.dot(&(&inv * &xi))
            }
            MatrixFunction::TraceInverse => inv.trace(),
        })
    }

    /// Lipschitz constant with respect to the Frobenius norm, for
    /// `D` with entries in `[0, 1]`: `4 |H^{-1}|^{1/2}` for `f_i` and
    /// `2 sqrt(p) |H^{-1}|^{3/2}` for `F`.
    pub fn lipschitz_constant(&self, p: usize, h_inv_opnorm: f64) -> f64 {
        match self {
            MatrixFunction::Leverage { .. } => 4.0 * h_inv_opnorm.sqrt(),
            MatrixFunction::TraceInverse => 2.0 * (p as f64).sqrt() * h_inv_opnorm.powf(1.5),
        }
    }
}

/// Largest observed `|fn(X + eps Δ) - fn(X)| / (eps |Δ|_F)` over
/// `n_probes` Gaussian directions `Δ` drawn from `seed`.
pub fn lipschitz_probe(
    func: MatrixFunction,
    x: &DMatrix<f64>,
    d: &DVector<f64>,
    h_pen: &DMatrix<f64>,
    n_probes: usize,
    eps: f64,
    seed: u64,
) -> Result<f64> {
    if d.len() != x.nrows() || h_pen.nrows() != x.ncols() || h_pen.ncols() != x.ncols() {
        return Err(Error::InvalidInput("dimension mismatch in lipschitz probe".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidInput("eps must be > 0".into()));
    }
    let base = func.eval(x, d, h_pen)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_probes {
        let delta = DMatrix::from_fn(x.nrows(), x.ncols(), |_, _| StandardNormal.sample(&mut rng));
        let dn = delta.norm();
        if dn == 0.0 {
            continue;
        }
        let moved = func.eval(&(x + &delta * eps), d, h_pen)?;
        worst = worst.max((moved - base).abs() / (eps * dn));
    }
    Ok(worst)
}
