//! Deterministic inequalities that every certified fit must satisfy.
//!
//! Slacks account for inexact optimality: a fit certified at tolerance `tol`
//! has a subgradient within `tol * max(1, |s|)` of `s = -X' L'`, which
//! perturbs each strong-convexity argument by that amount times the
//! relevant coefficient norm.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::curvature::{self, AHat};
use crate::error::Result;
use crate::linalg;
use crate::model::{Dataset, FitResult, LossSpec, PenaltySpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl BoundCheck {
    fn new(name: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        Self { name: name.into(), lhs, rhs, holds: lhs <= rhs }
    }
}

pub fn violations(checks: &[BoundCheck]) -> Vec<&BoundCheck> {
    checks.iter().filter(|c| !c.holds).collect()
}

/// `Σ`-dependent factors shared by the checks, through the Cholesky factor
/// `Σ = L L'`: `|Σ^{1/2} v| = |L' v|` and `|M Σ^{-1/2}|_op = |M L^{-T}|_op`.
struct Geometry {
    chol: DMatrix<f64>,
    sigma_inv: DMatrix<f64>,
    /// `|X Σ^{-1/2}|_op`
    x_whitened_opnorm: f64,
    /// `|Σ^{-1/2}|_op`
    inv_sqrt_opnorm: f64,
}

impl Geometry {
    fn new(data: &Dataset, sigma: Option<&DMatrix<f64>>) -> Result<Self> {
        let p = data.p();
        let Some(sigma) = sigma else {
            return Ok(Self {
                chol: DMatrix::identity(p, p),
                sigma_inv: DMatrix::identity(p, p),
                x_whitened_opnorm: linalg::op_norm(&data.x),
                inv_sqrt_opnorm: 1.0,
            });
        };
        let chol = linalg::cholesky_lower(sigma)?;
        // X L^{-T} solves L Z' = X'
        let z = chol
            .solve_lower_triangular(&data.x.transpose())
            .ok_or_else(|| crate::Error::SingularSystem("covariance factor is singular".into()))?;
        Ok(Self {
            sigma_inv: linalg::spd_inverse(sigma)?,
            x_whitened_opnorm: linalg::op_norm(&z),
            inv_sqrt_opnorm: 1.0 / linalg::sym_eigenvalues(sigma).min().sqrt(),
            chol,
        })
    }

    /// `|Σ^{1/2} v|`
    fn norm(&self, v: &DVector<f64>) -> f64 {
        self.chol.tr_mul(v).norm()
    }
}

/// `s = -sum_{l != left_out} x_l L'_l(x_l' b)` and `max_l |L'_l|` for a fit.
fn score(data: &Dataset, loss: &LossSpec, fit: &FitResult) -> (DVector<f64>, f64) {
    let d1 = DVector::from_fn(data.n(), |l, _| {
        if Some(l) == fit.left_out {
            0.0
        } else {
            loss.d1(data.y[l], fit.predictions[l])
        }
    });
    (-data.x.tr_mul(&d1), d1.amax())
}

/// Checks on a single fit: the coefficient norm bound, the operator-norm
/// bound on `A_hat`, the leverage bound, the norm bounds on `A_hat` and
/// `D^{1/2} X A_hat`, and, for the square loss, the spectrum of `H`.
///
/// `sigma` defaults to the dataset's covariance; the isotropic forms are used
/// when neither is known.
pub fn check_fit(
    data: &Dataset,
    loss: &LossSpec,
    penalty: &PenaltySpec,
    fit: &FitResult,
    a: &AHat,
    sigma: Option<&DMatrix<f64>>,
) -> Result<Vec<BoundCheck>> {
    let sigma = sigma.or(data.sigma.as_ref());
    let geo = Geometry::new(data, sigma)?;
    let n = data.n() as f64;
    let mu = penalty.mu_eff();
    let mut out = Vec::new();

    let (s, max_d1) = score(data, loss, fit);
    out.push(b_norm_check("bound_b_hat", &geo, n, mu, &fit.b_hat, &s, max_d1, fit.tol));

    let sa = geo.chol.tr_mul(&a.matrix) * &geo.chol;
    out.push(BoundCheck::new("bound_a_hat", linalg::sym_op_norm(&sa), 1.0 / (n * mu) + 1e-8));

    let lev = curvature::leverages(data, a);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..data.n() {
        let d = fit.curvature_diag[i];
        let xi = data.row(i);
        let lhs = 1.0 / (1.0 - d * lev[i]);
        let rhs = 1.0 + d * xi.dot(&(&geo.sigma_inv * &xi)) / (n * mu) + 1e-8;
        let ok = lhs > 0.0 && lhs.is_finite();
        // report the worst margin
        let margin = if ok { lhs - rhs } else { f64::INFINITY };
        if margin > worst {
            worst = margin;
        }
    }
    if data.n() > 0 {
        out.push(BoundCheck { name: "weight_bounded_from_1".into(), lhs: worst, rhs: 0.0, holds: worst <= 0.0 });
    }

    out.extend(op_norm_checks(data, fit, a)?);

    if *loss == LossSpec::Square {
        let eig = hat_eigenvalue_range(data, a)?;
        out.push(BoundCheck::new("hat_eigen_min", -eig.0, 1e-9));
        out.push(BoundCheck::new("hat_eigen_max", eig.1, 1.0 + 1e-9));
    }
    Ok(out)
}

fn b_norm_check(
    name: &str,
    geo: &Geometry,
    n: f64,
    mu: f64,
    b: &DVector<f64>,
    s: &DVector<f64>,
    max_d1: f64,
    tol: f64,
) -> BoundCheck {
    let lhs = n * mu * geo.norm(b);
    let slack = 10.0 * tol * s.norm().max(1.0) * geo.inv_sqrt_opnorm;
    let rhs = geo.x_whitened_opnorm * n.sqrt() * max_d1 + slack;
    BoundCheck::new(name, lhs, rhs)
}

/// `L' X_S' D X_S L` for the Cholesky factor `A_block = L L'`; it has the
/// nonzero spectrum of `D^{1/2} X A_hat X' D^{1/2}`.
fn whitened_gram(data: &Dataset, d: &DVector<f64>, a: &AHat) -> Result<DMatrix<f64>> {
    let l = linalg::cholesky_lower(&a.block)?;
    let xl = data.x.select_columns(&a.support) * &l;
    let dxl = DMatrix::from_fn(xl.nrows(), xl.ncols(), |i, j| d[i] * xl[(i, j)]);
    Ok(linalg::symmetrize(&xl.tr_mul(&dxl)))
}

/// Smallest and largest eigenvalue of `H = X A_hat X'` (square loss).
pub fn hat_eigenvalue_range(data: &Dataset, a: &AHat) -> Result<(f64, f64)> {
    if a.support.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut eig: Vec<f64> = linalg::sym_eigenvalues(&whitened_gram(data, &DVector::from_element(data.n(), 1.0), a)?)
        .iter()
        .copied()
        .collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    // H is n x n: its spectrum is the top min(n, |S|) of these, padded with zeros
    let n = data.n();
    let lo = if eig.len() < n { eig[eig.len() - 1].min(0.0) } else { eig[n - 1] };
    Ok((lo, eig[0]))
}

/// Norm bounds for `A = A_hat` on its support and the penalty curvature
/// block `H_pen`:
/// `|A| <= |H_pen^{-1}|`, `|D^{1/2} X A X' D^{1/2}| <= 1`,
/// `|D^{1/2} X A| <= |H_pen^{-1}|^{1/2}` and `|D^{1/2} X A^{1/2}| <= 1`.
pub fn op_norm_checks(data: &Dataset, fit: &FitResult, a: &AHat) -> Result<Vec<BoundCheck>> {
    if a.support.is_empty() {
        return Ok(Vec::new());
    }
    let h_inv = a.penalty_inverse_opnorm();
    let d = &fit.curvature_diag;
    let xs = data.x.select_columns(&a.support);
    let dxa = DMatrix::from_fn(xs.nrows(), xs.ncols(), |i, j| d[i].sqrt() * xs[(i, j)]) * &a.block;
    let gram_top = linalg::sym_op_norm(&whitened_gram(data, d, a)?);
    let rel = 1.0 + 1e-9;
    Ok(vec![
        BoundCheck::new("op_norm_a_hat", linalg::sym_op_norm(&a.block), h_inv * rel),
        BoundCheck::new("op_norm_dxaxd", gram_top, 1.0 + 1e-9),
        BoundCheck::new("op_norm_dxa", linalg::op_norm(&dxa), h_inv.sqrt() * rel),
        BoundCheck::new("op_norm_dxa_sqrt", gram_top.sqrt(), 1.0 + 1e-9),
    ])
}

/// Checks tying leave-one-out fits to a full fit: the proximity bound
/// `n mu |Σ^{1/2}(b_hat - b^i)|^2 <= |x_i| |L'_i(x_i' b_hat)| |b_hat - b^i|`
/// and the norm bound on `b^i`. Shared factors are computed once.
pub struct LooChecker<'a> {
    data: &'a Dataset,
    loss: &'a LossSpec,
    mu: f64,
    full: &'a FitResult,
    s_full_norm: f64,
    geo: Geometry,
}

impl<'a> LooChecker<'a> {
    pub fn new(
        data: &'a Dataset,
        loss: &'a LossSpec,
        penalty: &PenaltySpec,
        full: &'a FitResult,
        sigma: Option<&DMatrix<f64>>,
    ) -> Result<Self> {
        let geo = Geometry::new(data, sigma.or(data.sigma.as_ref()))?;
        let (s_full, _) = score(data, loss, full);
        Ok(Self { data, loss, mu: penalty.mu_eff(), full, s_full_norm: s_full.norm(), geo })
    }

    pub fn check(&self, loo: &FitResult) -> Result<Vec<BoundCheck>> {
        let i = loo
            .left_out
            .ok_or_else(|| crate::Error::InvalidInput("fit is not a leave-one-out fit".into()))?;
        let (data, full) = (self.data, self.full);
        let n = data.n() as f64;
        let (s_loo, max_loo) = score(data, self.loss, loo);
        let diff = &full.b_hat - &loo.b_hat;
        let dn = diff.norm();
        let lhs = n * self.mu * self.geo.norm(&diff).powi(2);
        let d1 = self.loss.d1(data.y[i], full.predictions[i]);
        let slack = 10.0 * dn * (full.tol * self.s_full_norm.max(1.0) + loo.tol * s_loo.norm().max(1.0));
        let rhs = data.row(i).norm() * d1.abs() * dn + slack;
        Ok(vec![
            BoundCheck::new("loo_bound", lhs, rhs),
            b_norm_check("bound_b_i", &self.geo, n, self.mu, &loo.b_hat, &s_loo, max_loo, loo.tol),
        ])
    }
}

/// One-off form of [`LooChecker::check`].
pub fn check_leave_one_out(
    data: &Dataset,
    loss: &LossSpec,
    penalty: &PenaltySpec,
    full: &FitResult,
    loo: &FitResult,
    sigma: Option<&DMatrix<f64>>,
) -> Result<Vec<BoundCheck>> {
    LooChecker::new(data, loss, penalty, full, sigma)?.check(loo)
}
