use alocv_core::{curvature, risk, solver};
use alocv_core::{Dataset, LossSpec, PenaltyFamily, PenaltySpec, SolverConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn loss_strategy() -> impl Strategy<Value = LossSpec> {
    prop_oneof![
        Just(LossSpec::Square),
        (0.3f64..3.0).prop_map(|m| LossSpec::Huber { threshold: m }),
        Just(LossSpec::Logistic),
    ]
}

fn family_strategy(p: usize) -> impl Strategy<Value = PenaltyFamily> {
    let nu = 0.05f64..2.0;
    prop_oneof![
        nu.clone().prop_map(|nu| PenaltyFamily::Ridge { nu }),
        (0.0f64..2.0, nu.clone()).prop_map(|(lambda, nu)| PenaltyFamily::ElasticNet { lambda, nu }),
        (1usize..=3, 0.0f64..2.0, nu).prop_map(move |(size, lambda, nu)| PenaltyFamily::contiguous_groups(p, size, lambda, nu)),
    ]
}

/// Design, response and penalty; binary responses for the logistic loss.
fn problem() -> impl Strategy<Value = (Dataset, LossSpec, PenaltySpec)> {
    (6usize..20, 2usize..8, loss_strategy()).prop_flat_map(|(n, p, loss)| {
        (
            proptest::collection::vec(-2.0f64..2.0, n * p),
            proptest::collection::vec(-3.0f64..3.0, n),
            family_strategy(p),
        )
            .prop_map(move |(xs, ys, fam)| {
                let x = DMatrix::from_vec(n, p, xs);
                let y = DVector::from_iterator(
                    n,
                    ys.into_iter().map(|v| if loss == LossSpec::Logistic { f64::from(v > 0.0) } else { v }),
                );
                let data = Dataset::new(x, y).unwrap();
                let pen = PenaltySpec::for_dataset(fam, &data).unwrap();
                (data, loss, pen)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prox_output_satisfies_optimality(
        p in 2usize..9,
        seed in proptest::collection::vec(-4.0f64..4.0, 9),
        step in 0.01f64..5.0,
        fam_pick in 0usize..3,
        lambda in 0.0f64..3.0,
        nu in 0.05f64..2.0,
    ) {
        let fam = match fam_pick {
            0 => PenaltyFamily::Ridge { nu },
            1 => PenaltyFamily::ElasticNet { lambda, nu },
            _ => PenaltyFamily::contiguous_groups(p, 2, lambda, nu),
        };
        let pen = PenaltySpec::new(fam, 7, p).unwrap();
        let v = DVector::from_column_slice(&seed[..p]);
        let u = solver::prox(&pen, &v, step).unwrap();
        // (v - u) / step must be a subgradient of R at u
        let s = (&v - &u) / step;
        let dist = solver::subgradient_distance(&pen, &u, &s);
        prop_assert!(dist <= 1e-10 * (1.0 + s.norm()), "distance {dist}");
    }

    #[test]
    fn loss_derivatives_are_consistent(loss in loss_strategy(), y in -3.0f64..3.0, t in -5.0f64..5.0) {
        let y = if loss == LossSpec::Logistic { f64::from(y > 0.0) } else { y };
        let (v, d1, d2) = loss.eval(y, t).unwrap();
        let h = 1e-6;
        let fd = (loss.value(y, t + h) - loss.value(y, t - h)) / (2.0 * h);
        prop_assert!((fd - d1).abs() <= 1e-5, "d1 {d1} vs {fd}");
        prop_assert!((0.0..=loss.max_curvature()).contains(&d2));
        // convexity: tangent line lies below
        for dt in [-1.0, -0.1, 0.3, 2.0] {
            prop_assert!(loss.value(y, t + dt) >= v + d1 * dt - 1e-12);
        }
        // the derivative is 1-Lipschitz
        let d1b = loss.d1(y, t + 0.7);
        prop_assert!((d1b - d1).abs() <= 0.7 + 1e-12);
        if loss.is_lipschitz() {
            prop_assert!(d1.abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn certified_fits_meet_kkt_and_minimize((data, loss, pen) in problem(), dir in proptest::collection::vec(-1.0f64..1.0, 8)) {
        let cfg = SolverConfig::with_tol(1e-10);
        let fit = solver::fit(&data, &loss, &pen, &cfg).unwrap();
        prop_assert!(fit.certified);
        prop_assert!(fit.kkt_residual <= cfg.tol);
        prop_assert!((solver::kkt_residual(&data, &loss, &pen, &fit.b_hat) - fit.kkt_residual).abs() <= 1e-12);
        let p = data.p();
        let d = DVector::from_column_slice(&dir[..p]);
        let base = solver::objective(&data, &loss, &pen, &fit.b_hat, None);
        for eps in [1e-3, 1e-1] {
            let moved = solver::objective(&data, &loss, &pen, &(&fit.b_hat + &d * eps), None);
            prop_assert!(moved >= base - 1e-7 * (1.0 + base.abs()), "{moved} < {base}");
        }
    }

    #[test]
    fn weight_identity_matches_remainder((data, loss, pen) in problem(), scale in 0.2f64..3.0) {
        let fit = solver::fit(&data, &loss, &pen, &SolverConfig::with_tol(1e-10)).unwrap();
        let a = curvature::a_hat(&data, &pen, &fit).unwrap();
        let p = data.p();
        let sigma = DMatrix::identity(p, p) * scale;
        let terms = risk::alo_terms(&data, &loss, &fit, &a).unwrap();
        let diag = risk::rem_diagnostics(&data, &fit, &a, &sigma);
        for i in 0..data.n() {
            let lhs = terms.weights[i] - diag.trace;
            let rhs = diag.rem[i] / terms.denominators[i];
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()), "row {i}: {lhs} vs {rhs}");
        }
    }
}
