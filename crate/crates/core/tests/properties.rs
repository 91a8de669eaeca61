use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eio_core::datagen::{generate, sufficient_stats, RngStream};
use eio_core::estimators::{
    eio_fit, plugin_fit, population_fit, reduced_gradient, ridge_fit, ridge_fit_stats, AlternatingMinimizer,
    PopulationStats,
};
use eio_core::experiments::{
    concentration_montecarlo, grid_search, ratio_variance_experiment, variance_ratio, Estimator, ExperimentContext,
    LambdaChoice, SweepPlan, DEGENERATE_FLAG,
};
use eio_core::model::{validate_spec, Dataset, DesignSpec, Hyperparams, Mu, SufficientStats, ValidatedSpec};
use eio_core::theory::{
    bias_leading_term, concentration_bound_cov, concentration_bound_noise, psi_bound, risk_bound_terms,
    variance_leading_term, BoundConfig,
};

fn sine(d: usize) -> ValidatedSpec {
    validate_spec(DesignSpec::sine_default(d)).unwrap()
}

fn stats_for(spec: &ValidatedSpec, n: usize, seed: u64) -> SufficientStats {
    sufficient_stats(&generate(spec, n, RngStream::new(seed, 0)).unwrap(), Some(spec)).unwrap()
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(d, d + 1, |_, _| rng.random::<f64>() - 0.5);
    &m * m.transpose() + DMatrix::identity(d, d) * 0.1
}

fn ctx(spec: ValidatedSpec) -> ExperimentContext {
    let noise = spec.noise_std();
    ExperimentContext::new(spec, Hyperparams::default(), BoundConfig::new(1.0, noise, 0.05).unwrap(), 1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stats_invariant_under_sample_permutation(d in 1usize..8, n in 2usize..40, seed in any::<u64>(), shift in 1usize..40) {
        let spec = sine(d);
        let data = generate(&spec, n, RngStream::new(seed, 0)).unwrap();
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let x = DMatrix::from_fn(d, n, |r, c| data.x()[(r, perm[c])]);
        let y = DVector::from_fn(n, |i, _| data.y()[perm[i]]);
        let a = sufficient_stats(&data, None).unwrap();
        let b = sufficient_stats(&Dataset::new(x, y).unwrap(), None).unwrap();
        prop_assert!((&a.z - &b.z).amax() <= 1e-14);
        prop_assert!((&a.sigma_hat - &b.sigma_hat).amax() <= 1e-14);
    }

    #[test]
    fn objective_trace_nonincreasing(d in 1usize..20, n in 3usize..60, seed in any::<u64>(), mu_exp in 0i32..30, l_exp in -40i32..40) {
        let spec = sine(d);
        let stats = stats_for(&spec, n, seed);
        let fit = eio_fit(&stats, &Hyperparams::new(Mu::Finite(2f64.powi(mu_exp)), 1.3f64.powi(l_exp))).unwrap();
        for w in fit.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs());
        }
        prop_assert!(fit.objective_trace.iter().all(|&f| f >= 0.0));
    }

    #[test]
    fn converged_fit_is_stationary(d in 1usize..10, seed in any::<u64>(), mu in 1.0f64..50.0, lambda in 1e-3f64..1.0) {
        let spec = sine(d);
        let stats = stats_for(&spec, 4 * d + 5, seed);
        let hp = Hyperparams { max_iter: 5000, tol: 1e-13, ..Hyperparams::new(Mu::Finite(mu), lambda) };
        let fit = eio_fit(&stats, &hp).unwrap();
        prop_assert!(fit.converged);
        let (g_theta, g_a) = reduced_gradient(&stats, &hp, &fit.estimate.theta, &fit.estimate.a).unwrap();
        prop_assert!(g_theta.amax() <= 1e-9, "theta gradient {}", g_theta.amax());
        prop_assert!(g_a.amax() <= 1e-9, "A gradient {}", g_a.amax());
    }

    #[test]
    fn large_mu_approaches_plugin(d in 1usize..12, seed in any::<u64>(), lambda in 1e-3f64..10.0) {
        let spec = sine(d);
        let stats = stats_for(&spec, 3 * d + 10, seed);
        let plug = plugin_fit(&stats, lambda).unwrap();
        let fit = eio_fit(&stats, &Hyperparams::new(Mu::Finite(1e7), lambda)).unwrap();
        prop_assert!((fit.theta() - &plug).norm() <= 1e-8 * plug.norm().max(1e-12));
        let inf = eio_fit(&stats, &Hyperparams::new(Mu::Infinite, lambda)).unwrap();
        prop_assert_eq!(inf.theta(), &plug);
    }

    #[test]
    fn ridge_scale_equivariance(d in 1usize..8, n in 2usize..30, seed in any::<u64>(), c in 0.1f64..10.0, tau in 1e-3f64..10.0) {
        let spec = sine(d);
        let data = generate(&spec, n, RngStream::new(seed, 0)).unwrap();
        let base = ridge_fit(&data, tau).unwrap();
        let scaled = Dataset::new(data.x() * c, data.y() * c).unwrap();
        let other = ridge_fit(&scaled, tau * c * c).unwrap();
        prop_assert!((&base - &other).norm() <= 1e-9 * base.norm().max(1.0));
        let stats = sufficient_stats(&data, None).unwrap();
        let via_stats = ridge_fit_stats(&stats, n, tau).unwrap();
        prop_assert!((&base - &via_stats).norm() <= 1e-9 * base.norm().max(1.0));
    }

    #[test]
    fn bias_term_invariant_under_joint_scaling(d in 1usize..8, seed in any::<u64>(), c in 0.2f64..5.0, lambda in 1e-4f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = random_spd(&mut rng, d);
        let theta = DVector::from_fn(d, |_, _| rng.random::<f64>() - 0.5);
        let b = bias_leading_term(&sigma, &theta, lambda).unwrap();
        let scaled = bias_leading_term(&(&sigma * c), &theta, lambda * c * c).unwrap();
        prop_assert!((&b - &scaled).norm() <= 1e-10 * theta.norm().max(1.0));
    }

    #[test]
    fn concentration_bounds_scale_linearly(d in 1usize..8, seed in any::<u64>(), c in 0.1f64..10.0, n in 10usize..5000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = random_spd(&mut rng, d);
        let a = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
        let cfg = BoundConfig::new(1.3, 0.7, 0.1).unwrap();
        let base = concentration_bound_cov(&a, &a, &sigma, &cfg, n).unwrap();
        let scaled = concentration_bound_cov(&(&a * c), &a, &sigma, &cfg, n).unwrap();
        prop_assert!((scaled.value - c * base.value).abs() <= 1e-10 * base.value.max(1e-300) * c);
        prop_assert_eq!(scaled.precondition_met, base.precondition_met);
        let nb = concentration_bound_noise(&a, &sigma, &cfg, n).unwrap();
        let ns = concentration_bound_noise(&(&a * c), &sigma, &cfg, n).unwrap();
        prop_assert!((ns.value - c * nb.value).abs() <= 1e-10 * nb.value.max(1e-300) * c);
        let quad = concentration_bound_cov(&a, &a, &sigma, &cfg, 4 * n).unwrap();
        prop_assert!((quad.value - 0.5 * base.value).abs() <= 1e-12 * base.value.max(1e-300));
    }

    #[test]
    fn psi_scales_inversely_with_n(d in 1usize..6, seed in any::<u64>(), n in 1usize..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = random_spd(&mut rng, d);
        let theta = DVector::from_fn(d, |_, _| rng.random::<f64>() + 0.1);
        let cfg = BoundConfig::new(1.0, 0.5, 0.05).unwrap();
        let p1 = psi_bound(n, &cfg, &sigma, &theta).unwrap();
        let p3 = psi_bound(3 * n, &cfg, &sigma, &theta).unwrap();
        prop_assert!((p1 - 3.0 * p3).abs() <= 1e-12 * p1);
    }
}

#[test]
fn sine_offdiagonal_small_in_most_runs() {
    let d = 10;
    let n = 400;
    let spec = sine(d);
    let runs = 200;
    let mut within = 0;
    for r in 0..runs {
        let stats = sufficient_stats(&generate(&spec, n, RngStream::new(77, r)).unwrap(), None).unwrap();
        let worst = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| stats.sigma_hat[(i, j)].abs())
            .fold(0.0, f64::max);
        if worst <= 5.0 / (n as f64).sqrt() {
            within += 1;
        }
    }
    assert!(within as f64 >= 0.95 * runs as f64, "{within}/{runs}");
}

#[test]
fn moderate_mu_contracts_geometrically() {
    let spec = sine(20);
    let stats = stats_for(&spec, 100, 5);
    let steps: Vec<_> = AlternatingMinimizer::from_stats(&stats, Mu::Finite(1.0), 1e-3)
        .unwrap()
        .take(8)
        .map(Result::unwrap)
        .collect();
    let res: Vec<f64> = steps.iter().skip(1).map(|s| s.residual).collect();
    assert!(res[0] > 0.0);
    let rates: Vec<f64> = res.windows(2).map(|w| w[1] / w[0]).collect();
    assert!(rates.iter().all(|&q| q < 0.9), "{rates:?}");
    assert!(res[res.len() - 1] < 1e-3 * res[0], "{res:?}");
}

#[test]
fn bias_term_matches_eigen_coordinates() {
    let spec = sine(12);
    let lambda = 0.02;
    let b = bias_leading_term(spec.sigma(), spec.theta_circ(), lambda).unwrap();
    // diagonal covariance: coordinatewise -2 lambda theta_k / (s_k^2 + 2 lambda)
    for (k, s) in spec.spectrum().iter().enumerate() {
        let theta = spec.theta_circ()[k];
        assert_relative_eq!(b[k], -2.0 * lambda * theta / (s * s + 2.0 * lambda), max_relative = 1e-12);
    }
}

#[test]
fn variance_term_matches_transcription() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = 4;
    let sigma = random_spd(&mut rng, d);
    let sigma_hat = random_spd(&mut rng, d);
    let u = DVector::from_fn(d, |_, _| rng.random::<f64>() - 0.5);
    let b = DVector::from_fn(d, |_, _| rng.random::<f64>() - 0.5);
    let lambda = 0.3;
    let (zeta, zt) = variance_leading_term(&sigma, &sigma_hat, &u, &b, lambda).unwrap();
    let mut expected = DVector::zeros(d);
    for i in 0..d {
        let mut acc = 0.0;
        for j in 0..d {
            acc += sigma[(i, j)] * u[j];
            for k in 0..d {
                let delta_jk = sigma_hat[(j, k)] - sigma[(j, k)];
                let delta_ij = sigma_hat[(i, j)] - sigma[(i, j)];
                acc -= sigma[(i, j)] * delta_jk * b[k];
                acc -= delta_ij * sigma[(j, k)] * b[k];
            }
        }
        expected[i] = acc;
    }
    assert!((&zeta - &expected).amax() < 1e-13);
    let m = &sigma * &sigma + DMatrix::identity(d, d) * (2.0 * lambda);
    assert!((m * zt - zeta).amax() < 1e-12);
}

#[test]
fn population_bias_matches_leading_term_for_large_mu() {
    let spec = sine(30);
    let pop = PopulationStats::from_spec(&spec);
    for lambda in [1e-3, 1e-2, 1e-1] {
        let theta_star = population_fit(&pop, &Hyperparams::new(Mu::Finite(1e8), lambda))
            .unwrap()
            .estimate
            .theta;
        let b = bias_leading_term(spec.sigma(), spec.theta_circ(), lambda).unwrap();
        assert!((theta_star - spec.theta_circ() - &b).norm() <= 1e-8 * b.norm());
    }
}

#[test]
fn diamond_mu_part_vanishes_as_mu_grows() {
    let spec = sine(20);
    let cfg = BoundConfig::new(1.0, 0.09, 0.05).unwrap();
    let terms: Vec<_> = [1e2, 1e4, 1e6]
        .iter()
        .map(|&mu| risk_bound_terms(500, &cfg, spec.sigma(), spec.theta_circ(), Mu::Finite(mu), 0.01).unwrap())
        .collect();
    assert!(terms[1].diamond_mu < terms[0].diamond_mu / 50.0);
    assert!(terms[2].diamond_mu < terms[1].diamond_mu / 50.0);
    assert_eq!(terms[0].diamond_psi, terms[2].diamond_psi);
}

#[test]
fn single_point_grid_returns_it() {
    let c = ctx(sine(6));
    let mut plan = SweepPlan::new(vec![20], 3, 1);
    plan.lambda_grid = vec![0.01];
    plan.mu_grid = vec![4.0];
    let res = grid_search(&c, &plan, Estimator::Eio, 20).unwrap();
    assert_eq!(res.table.len(), 1);
    assert_eq!(res.best().point.lambda, Some(0.01));
    assert_eq!(res.best().point.mu, Some(Mu::Finite(4.0)));
}

#[test]
fn grid_search_argmin_property() {
    let c = ctx(sine(10));
    let mut plan = SweepPlan::new(vec![30], 6, 2);
    plan.lambda_grid = plan.lambda_grid.iter().copied().step_by(4).collect();
    plan.mu_grid = plan.mu_grid.iter().copied().step_by(3).collect();
    let res = grid_search(&c, &plan, Estimator::Eio, 30).unwrap();
    let best = res.best().risk_mean;
    assert!(res.table.iter().all(|e| best <= e.risk_mean));
    let largest_mu = res
        .table
        .iter()
        .rfind(|e| e.point.lambda == res.best().point.lambda)
        .unwrap();
    assert!(best <= largest_mu.risk_mean + 1e-12);
}

#[test]
fn ridge_tau_opt_in_grid_interior() {
    let d = 10;
    let mut theta = DVector::zeros(d);
    theta[0] = 1.0;
    let spec = validate_spec(DesignSpec::gaussian(vec![1.0; d], None, theta, 1.0)).unwrap();
    let c = ctx(spec);
    let mut plan = SweepPlan::new(vec![500], 20, 3);
    plan.tau_grid = (-20..=40).map(|k| 1.3f64.powi(k)).collect();
    let res = grid_search(&c, &plan, Estimator::Ridge, 500).unwrap();
    assert!(res.best_index > 0 && res.best_index + 1 < res.table.len(), "tau_opt index {}", res.best_index);
}

#[test]
fn grid_search_independent_of_workers() {
    let spec = sine(8);
    let mut plan = SweepPlan::new(vec![25], 7, 9);
    plan.lambda_grid = plan.lambda_grid.iter().copied().step_by(10).collect();
    plan.mu_grid = plan.mu_grid.iter().copied().step_by(10).collect();
    let noise = spec.noise_std();
    let run = |w| {
        let c = ExperimentContext::new(spec.clone(), Hyperparams::default(), BoundConfig::new(1.0, noise, 0.05).unwrap(), w);
        grid_search(&c, &plan, Estimator::Eio, 25).unwrap()
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn noiseless_exact_stats_give_degenerate_ratio() {
    let spec = validate_spec(DesignSpec::sine(5, DVector::from_element(5, 0.5), 0.0)).unwrap();
    let c = ctx(spec.clone());
    let pop = PopulationStats::from_spec(&spec);
    let stats = pop.as_stats();
    for mu in [Mu::Finite(1e3), Mu::Infinite] {
        let hp = Hyperparams::new(mu, 0.01);
        let theta_star = population_fit(&pop, &hp).unwrap().estimate.theta;
        assert_eq!(variance_ratio(&c, &stats, &theta_star, mu, 0.01).unwrap(), None);
    }
}

#[test]
fn ratio_variance_records_are_reproducible() {
    let c = ctx(sine(10));
    let plan = SweepPlan::new(vec![40, 80], 5, 11);
    let lambdas = LambdaChoice::Grid(vec![0.01, 0.1]);
    let a = ratio_variance_experiment(&c, &plan, &lambdas, Mu::Finite(1e8)).unwrap();
    let b = ratio_variance_experiment(&c, &plan, &lambdas, Mu::Finite(1e8)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 4);
    assert!(a.iter().all(|r| r.statistic_sd.unwrap() >= 0.0 && r.flag.is_none()));
    assert_ne!(a[0].flag.as_deref(), Some(DEGENERATE_FLAG));
}

#[test]
fn noiseless_design_has_zero_noise_projection() {
    let spec = validate_spec(DesignSpec::gaussian(vec![1.0; 4], None, DVector::from_element(4, 1.0), 0.0)).unwrap();
    let res = concentration_montecarlo(&ctx(spec), &SweepPlan::new(vec![20, 40], 5, 0)).unwrap();
    for r in res.records.iter().filter(|r| r.stat == "u_norm") {
        assert_eq!(r.median, Some(0.0));
        assert_eq!(r.q90, Some(0.0));
    }
    assert!(res.slopes.iter().all(|(s, _)| s != "u_norm"));
}
