use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use wdrc::estimator::{posterior_cov, predict, update, BeliefState};
use wdrc::harness::{histogram, paired_comparison};
use wdrc::oracle::experiment_plant;
use wdrc::psd::{bures_sq, gelbrich_dist_sq, psd_sqrt};
use wdrc::riccati::{backward_pass, check_penalty, find_min_feasible_lambda, lqg_riccati};
use wdrc::worst_case::{cov_objective, solve_worst_case_cov, CovObjectiveContext, SolverOptions};
use wdrc::{LinearSystem, MomentPair, NominalDistribution, SymMatrix};

fn matrix(r: usize, c: usize, scale: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-scale..scale, r * c).prop_map(move |v| DMatrix::from_row_slice(r, c, &v))
}

fn psd(n: usize, scale: f64, ridge: f64) -> impl Strategy<Value = SymMatrix> {
    matrix(n, n, scale).prop_map(move |f| SymMatrix::new(&f * f.transpose() + DMatrix::identity(n, n) * ridge).unwrap())
}

fn system(n: usize, ny: usize) -> impl Strategy<Value = LinearSystem> {
    (matrix(n, n, 1.2), matrix(n, 1, 1.0), matrix(ny, n, 2.0), psd(ny, 0.5, 1e-2))
        .prop_map(|(a, b, c, m)| LinearSystem::new(a, b, c, m).unwrap())
}

fn sized_system() -> impl Strategy<Value = (LinearSystem, SymMatrix, SymMatrix)> {
    (1usize..=3)
        .prop_flat_map(|n| (Just(n), 1..=n))
        .prop_flat_map(|(n, ny)| (system(n, ny), psd(n, 1.0, 0.0), psd(n, 0.3, 0.0)))
}

fn nominal(horizon: usize) -> NominalDistribution {
    let cov = SymMatrix::from_rows(&[vec![0.01, 0.005], vec![0.005, 0.01]]).unwrap();
    NominalDistribution::stage_invariant(MomentPair::new(DVector::from_column_slice(&[0.01, 0.02]), cov).unwrap(), horizon)
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    SymMatrix::new(m.clone()).unwrap().min_eigenvalue()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_is_psd_and_below_prior((sys, g, w) in sized_system()) {
        let n = sys.nx();
        let b = BeliefState { mean: DVector::zeros(n), cov: g };
        let prior = predict(&b, &DVector::zeros(1), &DVector::zeros(n), &w, &sys).unwrap();
        let post = update(&prior, &DVector::zeros(sys.ny()), &sys).unwrap();
        let scale = prior.cov.as_matrix().norm().max(1.0);
        prop_assert!(post.cov.min_eigenvalue() >= -1e-9 * scale);
        prop_assert!(min_eig(&(prior.cov.as_matrix() - post.cov.as_matrix())) >= -1e-9 * scale);
    }

    #[test]
    fn joseph_matches_information_form((sys, g, _w) in sized_system()) {
        let (v, _) = posterior_cov(&g, &sys).unwrap();
        let gm = g.as_matrix();
        let s = &sys.c * gm * sys.c.transpose() + sys.m.as_matrix();
        let standard = gm - gm * sys.c.transpose() * s.try_inverse().unwrap() * &sys.c * gm;
        prop_assert!((v.as_matrix() - standard).norm() <= 1e-9 * gm.norm().max(1.0));
    }

    #[test]
    fn psd_sqrt_squares_back(a in psd(3, 1.0, 0.0)) {
        let r = psd_sqrt(&a).unwrap();
        prop_assert!(r.min_eigenvalue() >= -1e-9);
        prop_assert!((r.as_matrix() * r.as_matrix() - a.as_matrix()).norm() <= 1e-9 * a.as_matrix().norm().max(1.0));
    }

    #[test]
    fn bures_is_a_symmetric_squared_metric(a in psd(2, 1.0, 1e-3), b in psd(2, 1.0, 1e-3), c in psd(2, 1.0, 1e-3)) {
        let ab = bures_sq(&a, &b).unwrap();
        prop_assert!(ab >= -1e-9);
        prop_assert!((ab - bures_sq(&b, &a).unwrap()).abs() <= 1e-8 * (1.0 + ab));
        prop_assert!(bures_sq(&a, &a).unwrap().abs() <= 1e-8);
        let d = |x: &SymMatrix, y: &SymMatrix| bures_sq(x, y).unwrap().max(0.0).sqrt();
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-6);
    }

    #[test]
    fn gelbrich_splits_into_mean_and_covariance(m in matrix(2, 1, 1.0), a in psd(2, 1.0, 1e-3), b in psd(2, 1.0, 1e-3)) {
        let p = MomentPair::new(DVector::from_column_slice(m.as_slice()), a.clone()).unwrap();
        let q = MomentPair::new(DVector::zeros(2), b.clone()).unwrap();
        let g = gelbrich_dist_sq(&p, &q).unwrap();
        prop_assert!((g - m.norm_squared() - bures_sq(&a, &b).unwrap()).abs() <= 1e-10 * (1.0 + g));
    }

    #[test]
    fn feasibility_is_monotone_in_lambda(lambda in 0.5f64..50.0, factor in 1.0f64..10.0) {
        let (sys, cost) = experiment_plant(0.2, 20);
        let lo = check_penalty(&sys, &cost, lambda).unwrap();
        let hi = check_penalty(&sys, &cost, lambda * factor).unwrap();
        prop_assert!(!lo.feasible || hi.feasible);
    }

    #[test]
    fn value_matrices_are_psd_and_ordered(extra in 0.01f64..5.0, factor in 1.0f64..10.0) {
        let (sys, cost) = experiment_plant(0.2, 20);
        let nom = nominal(20);
        let l1 = find_min_feasible_lambda(&sys, &cost).unwrap() * (1.0 + extra);
        let robust = backward_pass(&sys, &cost, &nom, l1).unwrap();
        let milder = backward_pass(&sys, &cost, &nom, l1 * factor).unwrap();
        let lq = lqg_riccati(&sys, &cost, &nom).unwrap();
        for t in 0..=20 {
            let scale = robust.p[t].as_matrix().norm().max(1.0);
            prop_assert!(robust.p[t].min_eigenvalue() >= -1e-9 * scale);
            prop_assert!(min_eig(&(robust.p[t].as_matrix() - milder.p[t].as_matrix())) >= -1e-8 * scale);
            prop_assert!(min_eig(&(milder.p[t].as_matrix() - lq.p[t].as_matrix())) >= -1e-8 * scale);
        }
    }

    #[test]
    fn worst_case_covariance_is_a_maximizer(extra in 0.1f64..5.0, t in 0usize..19, sigma_hat in psd(2, 0.2, 1e-4), p_bar in psd(2, 0.2, 0.0), probe in psd(2, 0.3, 0.0)) {
        let (sys, cost) = experiment_plant(0.2, 20);
        let nom = nominal(20);
        let lambda = find_min_feasible_lambda(&sys, &cost).unwrap() * (1.0 + extra);
        let sol = backward_pass(&sys, &cost, &nom, lambda).unwrap();
        let ctx = CovObjectiveContext::new(&sol.s[t + 1], &sol.p[t + 1], lambda, &sigma_hat, &p_bar, &sys).unwrap();
        let stage = solve_worst_case_cov(&ctx, &sigma_hat, &SolverOptions::default()).unwrap();
        prop_assert!(stage.cov.min_eigenvalue() >= 0.0);
        let best = cov_objective(&stage.cov, &ctx).unwrap();
        let tol = 1e-7 * (1.0 + best.abs());
        prop_assert!(best >= cov_objective(&sigma_hat, &ctx).unwrap() - tol);
        prop_assert!(best >= cov_objective(&probe, &ctx).unwrap() - tol);
    }

    #[test]
    fn histogram_conserves_counts(a in prop::collection::vec(-5.0f64..5.0, 1..200), b in prop::collection::vec(-5.0f64..5.0, 1..200), bins in 1usize..40) {
        let h = histogram(&[&a, &b], bins).unwrap();
        prop_assert_eq!(h.edges.len(), bins + 1);
        prop_assert_eq!(h.counts[0].iter().sum::<usize>(), a.len());
        prop_assert_eq!(h.counts[1].iter().sum::<usize>(), b.len());
    }

    #[test]
    fn paired_comparison_is_antisymmetric(a in prop::collection::vec(0.0f64..5.0, 3..100), shift in 0.0f64..1.0) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x + shift + 0.01 * (i % 7) as f64).collect();
        let ab = paired_comparison(&a, &b).unwrap();
        let ba = paired_comparison(&b, &a).unwrap();
        prop_assert!((ab.mean_difference + ba.mean_difference).abs() <= 1e-12);
        prop_assert!((ab.mean_z + ba.mean_z).abs() <= 1e-9 * (1.0 + ab.mean_z.abs()));
    }
}
