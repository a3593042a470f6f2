//! Curvature matrix `A_hat`, hat matrix and one-step-Newton leave-one-out
//! predictions.
//!
//! For every penalty family `A_hat` is zero outside `S x S`, where `S` is
//! the active set of the fit (all coordinates for ridge), and on `S x S` it
//! is the inverse of
//!
//! ```text
//! X_S' D X_S + n nu I + sum_{k active} (lambda_k / |b_G|) (I_G - b_G b_G' / |b_G|^2)
//! ```
//!
//! with the group term present only for the group-lasso.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{group_norm, Dataset, FitResult, LossSpec, PenaltyFamily, PenaltyKind, PenaltySpec};

#[derive(Clone, Debug, PartialEq)]
pub struct AHat {
    /// Dense `p x p` matrix.
    pub matrix: DMatrix<f64>,
    /// Sorted indices of the block where `matrix` may be nonzero.
    pub support: Vec<usize>,
    /// `matrix` restricted to `support`.
    pub block: DMatrix<f64>,
    /// Penalty curvature on `support`: `n nu I` plus the group angular terms.
    pub penalty_curvature: DMatrix<f64>,
    pub penalty_kind: PenaltyKind,
}

impl AHat {
    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.block.trace()
    }

    /// `tr[Σ A_hat]`.
    pub fn trace_with(&self, sigma: &DMatrix<f64>) -> f64 {
        let s = &self.support;
        let mut acc = 0.0;
        for (a, &j) in s.iter().enumerate() {
            for (b, &k) in s.iter().enumerate() {
                acc += sigma[(k, j)] * self.block[(a, b)];
            }
        }
        acc
    }

    /// `|H_pen^{-1}|_op` on the support (0 when the support is empty).
    pub fn penalty_inverse_opnorm(&self) -> f64 {
        if self.support.is_empty() {
            return 0.0;
        }
        1.0 / linalg::sym_eigenvalues(&self.penalty_curvature).min()
    }
}

/// Builds `A_hat` from a fit. `D` is read from `fit.curvature_diag`.
pub fn a_hat(data: &Dataset, penalty: &PenaltySpec, fit: &FitResult) -> Result<AHat> {
    let p = data.p();
    let support: Vec<usize> = match penalty.kind() {
        PenaltyKind::Ridge => (0..p).collect(),
        PenaltyKind::ElasticNet | PenaltyKind::GroupLasso => fit.active_set.clone(),
    };
    let s = support.len();
    let mut pen_curv = DMatrix::identity(s, s) * penalty.ridge_weight();

    if let PenaltyFamily::GroupLasso { groups, lambdas, .. } = penalty.family() {
        let mut pos = vec![usize::MAX; p];
        for (a, &j) in support.iter().enumerate() {
            pos[j] = a;
        }
        for &k in fit.active_groups.as_deref().unwrap_or(&[]) {
            let g = &groups[k];
            let norm = group_norm(&fit.b_hat, g);
            let coef = lambdas[k] / norm;
            for &j in g {
                for &l in g {
                    let proj = if j == l { 1.0 } else { 0.0 } - fit.b_hat[j] * fit.b_hat[l] / (norm * norm);
                    pen_curv[(pos[j], pos[l])] += coef * proj;
                }
            }
        }
    }

    let xs = data.x.select_columns(&support);
    let weighted = DMatrix::from_fn(xs.nrows(), s, |i, a| xs[(i, a)] * fit.curvature_diag[i]);
    let hessian = weighted.tr_mul(&xs) + &pen_curv;
    let block = linalg::spd_inverse(&linalg::symmetrize(&hessian))?;

    let mut matrix = DMatrix::zeros(p, p);
    for (a, &j) in support.iter().enumerate() {
        for (b, &k) in support.iter().enumerate() {
            matrix[(j, k)] = block[(a, b)];
        }
    }
    Ok(AHat {
        matrix,
        support,
        block,
        penalty_curvature: pen_curv,
        penalty_kind: penalty.kind(),
    })
}

/// `x_i' A_hat x_i` for every row.
pub fn leverages(data: &Dataset, a: &AHat) -> DVector<f64> {
    if a.support.is_empty() {
        return DVector::zeros(data.n());
    }
    let xs = data.x.select_columns(&a.support);
    let xa = &xs * &a.block;
    DVector::from_fn(data.n(), |i, _| xa.row(i).dot(&xs.row(i)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct HatMatrix {
    pub matrix: DMatrix<f64>,
    pub trace: f64,
}

/// `H = X A_hat X'`, the Jacobian of the fitted values in `y` under the
/// square loss.
pub fn hat_matrix(data: &Dataset, loss: &LossSpec, a: &AHat) -> Result<HatMatrix> {
    if *loss != LossSpec::Square {
        return Err(Error::WrongLoss);
    }
    let n = data.n();
    if a.support.is_empty() {
        return Ok(HatMatrix { matrix: DMatrix::zeros(n, n), trace: 0.0 });
    }
    let xs = data.x.select_columns(&a.support);
    let matrix = linalg::symmetrize(&(&xs * &a.block * xs.transpose()));
    let trace = matrix.trace();
    Ok(HatMatrix { matrix, trace })
}

/// One Newton step toward the leave-one-out solution, evaluated at `x_i`:
/// `x_i' b_hat + L'_i h_i / (1 - h_i D_ii)` with `h_i = x_i' A_hat x_i`.
pub fn newton_loo_prediction(data: &Dataset, loss: &LossSpec, fit: &FitResult, a: &AHat, i: usize) -> Result<f64> {
    if i >= data.n() {
        return Err(Error::InvalidInput(format!("index {i} out of range")));
    }
    let xi = data.row(i);
    let h = xi.dot(&(&a.matrix * &xi));
    newton_from_leverage(data, loss, fit, i, h)
}

pub(crate) fn newton_from_leverage(data: &Dataset, loss: &LossSpec, fit: &FitResult, i: usize, h: f64) -> Result<f64> {
    let t = fit.predictions[i];
    let denom = 1.0 - h * fit.curvature_diag[i];
    if denom <= 1e-12 {
        return Err(Error::DegenerateLeverage { index: i, denominator: denom });
    }
    Ok(t + loss.d1(data.y[i], t) * h / denom)
}

/// Closed-form `∂ b_hat / ∂ x_ij = A_hat (-e_j L'_i - x_i D_ii b_hat_j)`.
pub fn derivative_formula(data: &Dataset, loss: &LossSpec, fit: &FitResult, a: &AHat, i: usize, j: usize) -> DVector<f64> {
    let li = loss.d1(data.y[i], fit.predictions[i]);
    let mut rhs = data.row(i) * (-fit.curvature_diag[i] * fit.b_hat[j]);
    rhs[j] -= li;
    &a.matrix * rhs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PenaltyFamily;
    use crate::solver::{fit, SolverConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let beta = DVector::from_fn(p, |j, _| if j < 3 { 1.0 } else { 0.0 });
        let noise = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let y = &x * beta + noise;
        Dataset::new(x, y).unwrap()
    }

    fn one_point() -> (Dataset, PenaltySpec, FitResult) {
        let data = Dataset::new(DMatrix::from_element(1, 1, 2.0), DVector::from_element(1, 3.0)).unwrap();
        let pen = PenaltySpec::new(PenaltyFamily::Ridge { nu: 4.0 }, 1, 1).unwrap();
        let f = fit(&data, &LossSpec::Square, &pen, &SolverConfig::with_tol(1e-13)).unwrap();
        (data, pen, f)
    }

    #[test]
    fn scalar_ridge() {
        let (data, pen, f) = one_point();
        let a = a_hat(&data, &pen, &f).unwrap();
        assert!((a.matrix[(0, 0)] - 0.125).abs() < 1e-15);
        let h = hat_matrix(&data, &LossSpec::Square, &a).unwrap();
        assert!((h.matrix[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((h.trace - 0.5).abs() < 1e-15);
        // quadratic objective: the Newton step lands on the exact LOO fit, b^0 = 0
        let pred = newton_loo_prediction(&data, &LossSpec::Square, &f, &a, 0).unwrap();
        assert!(pred.abs() < 1e-12);
    }

    #[test]
    fn hat_matrix_requires_square_loss() {
        let (data, pen, f) = one_point();
        let a = a_hat(&data, &pen, &f).unwrap();
        assert!(matches!(hat_matrix(&data, &LossSpec::Logistic, &a), Err(Error::WrongLoss)));
    }

    #[test]
    fn empty_support_gives_zero() {
        let data = gaussian(20, 5, 1);
        let pen = PenaltySpec::new(PenaltyFamily::ElasticNet { lambda: 1e4, nu: 1.0 }, 20, 5).unwrap();
        let f = fit(&data, &LossSpec::Square, &pen, &SolverConfig::default()).unwrap();
        assert!(f.active_set.is_empty());
        let a = a_hat(&data, &pen, &f).unwrap();
        assert_eq!(a.matrix, DMatrix::zeros(5, 5));
        assert_eq!(leverages(&data, &a), DVector::zeros(20));
        let h = hat_matrix(&data, &LossSpec::Square, &a).unwrap();
        assert_eq!(h.trace, 0.0);
    }

    #[test]
    fn zero_design_gives_zero_hat_matrix() {
        let data = Dataset::new(DMatrix::zeros(3, 2), DVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        let pen = PenaltySpec::new(PenaltyFamily::Ridge { nu: 1.0 }, 3, 2).unwrap();
        let f = fit(&data, &LossSpec::Square, &pen, &SolverConfig::default()).unwrap();
        let a = a_hat(&data, &pen, &f).unwrap();
        let h = hat_matrix(&data, &LossSpec::Square, &a).unwrap();
        assert_eq!(h.matrix, DMatrix::zeros(3, 3));
    }

    #[test]
    fn group_angular_term_vanishes_along_b_hat() {
        let data = gaussian(10, 3, 4);
        let pen = PenaltySpec::new(
            PenaltyFamily::GroupLasso { groups: vec![vec![0, 1, 2]], lambdas: vec![2.0], nu: 0.5 },
            10,
            3,
        )
        .unwrap();
        let d = DVector::from_fn(10, |i, _| if i % 3 == 0 { 0.0 } else { 1.0 });
        let f = FitResult {
            b_hat: DVector::from_vec(vec![0.7, 0.0, 0.0]),
            predictions: data.x.column(0) * 0.7,
            curvature_diag: d.clone(),
            active_set: vec![0, 1, 2],
            active_groups: Some(vec![0]),
            kkt_residual: 0.0,
            tol: 1.0,
            certified: true,
            iterations: 0,
            objective: 0.0,
            objective_trace: vec![],
            left_out: None,
        };
        let a = a_hat(&data, &pen, &f).unwrap();
        let inv = linalg::spd_inverse(&a.block).unwrap();
        let x0 = data.x.column(0);
        let expected: f64 = (0..10).map(|i| x0[i] * d[i] * x0[i]).sum::<f64>() + pen.ridge_weight();
        assert!((inv[(0, 0)] - expected).abs() < 1e-9 * expected);
        // orthogonal directions pick up lambda / |b_G|
        let x1 = data.x.column(1);
        let e11: f64 = (0..10).map(|i| x1[i] * d[i] * x1[i]).sum::<f64>() + pen.ridge_weight() + 2.0 / 0.7;
        assert!((inv[(1, 1)] - e11).abs() < 1e-9 * e11);
    }

    #[test]
    fn sherman_morrison_matches_direct_solve() {
        let data = gaussian(40, 15, 8);
        let loss = LossSpec::huber(0.8).unwrap();
        let pen = PenaltySpec::new(PenaltyFamily::Ridge { nu: 0.3 }, 40, 15).unwrap();
        let f = fit(&data, &loss, &pen, &SolverConfig::with_tol(1e-11)).unwrap();
        let a = a_hat(&data, &pen, &f).unwrap();
        let lev = leverages(&data, &a);
        for i in 0..40 {
            let xi = data.row(i);
            let mut m = DMatrix::identity(15, 15) * pen.ridge_weight();
            for k in (0..40).filter(|&k| k != i) {
                let xk = data.row(k);
                m += &xk * xk.transpose() * f.curvature_diag[k];
            }
            let direct = xi.dot(&m.lu().solve(&xi).unwrap());
            let sm = lev[i] / (1.0 - lev[i] * f.curvature_diag[i]);
            assert!((direct - sm).abs() <= 1e-8 * direct.abs());
            let newton = newton_loo_prediction(&data, &loss, &f, &a, i).unwrap();
            let via_direct = f.predictions[i] + direct * loss.d1(data.y[i], f.predictions[i]);
            assert!((newton - via_direct).abs() < 1e-8);
        }
    }

    #[test]
    fn huber_linear_branch_has_unit_denominator() {
        let data = gaussian(30, 5, 12);
        let loss = LossSpec::huber(0.2).unwrap();
        let pen = PenaltySpec::new(PenaltyFamily::Ridge { nu: 0.5 }, 30, 5).unwrap();
        let f = fit(&data, &loss, &pen, &SolverConfig::default()).unwrap();
        let a = a_hat(&data, &pen, &f).unwrap();
        let lev = leverages(&data, &a);
        let i = (0..30).find(|&i| f.curvature_diag[i] == 0.0).expect("some residual beyond threshold");
        let pred = newton_loo_prediction(&data, &loss, &f, &a, i).unwrap();
        let expected = f.predictions[i] + loss.d1(data.y[i], f.predictions[i]) * lev[i];
        assert!((pred - expected).abs() < 1e-12);
    }

    #[test]
    fn restriction_is_limit_of_large_penalty_off_support() {
        let data = gaussian(50, 10, 3);
        let loss = LossSpec::huber(1.0).unwrap();
        let pen = PenaltySpec::new(PenaltyFamily::ElasticNet { lambda: 6.0, nu: 0.5 }, 50, 10).unwrap();
        let f = fit(&data, &loss, &pen, &SolverConfig::with_tol(1e-11)).unwrap();
        assert!(!f.active_set.is_empty() && f.active_set.len() < 10);
        let a = a_hat(&data, &pen, &f).unwrap();
        let t = 1e10;
        let mut m = DMatrix::identity(10, 10) * pen.ridge_weight();
        for i in 0..50 {
            let xi = data.row(i);
            m += &xi * xi.transpose() * f.curvature_diag[i];
        }
        for j in (0..10).filter(|j| !f.active_set.contains(j)) {
            m[(j, j)] += t;
        }
        let lim = m.try_inverse().unwrap();
        assert!((lim - &a.matrix).amax() < 1e-6);
    }

    #[test]
    fn degenerate_leverage_is_reported() {
        let (data, _, mut f) = one_point();
        let a = AHat {
            matrix: DMatrix::from_element(1, 1, 0.25),
            support: vec![0],
            block: DMatrix::from_element(1, 1, 0.25),
            penalty_curvature: DMatrix::from_element(1, 1, 4.0),
            penalty_kind: PenaltyKind::Ridge,
        };
        f.curvature_diag[0] = 1.0;
        // h = 4 * 0.25 = 1, so 1 - h D = 0
        assert!(matches!(
            newton_loo_prediction(&data, &LossSpec::Square, &f, &a, 0),
            Err(Error::DegenerateLeverage { index: 0, .. })
        ));
    }
}
