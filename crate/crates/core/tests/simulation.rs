//! Monte Carlo ensembles checked against deterministic moment oracles.

use mflq::ergodic::solve_ergodic_system;
use mflq::finite::{default_steps, integrate_riccati_system};
use mflq::fixtures::{random_valid_model, sb1, sb2};
use mflq::mfsim::{
    estimate_cost, propagate_mean, propagate_moments, propagate_pair_moments, simulate, ClosedLoopSpec, SimOptions,
};
use mflq::turnpike::uniform_grid;
use nalgebra::DVector;

const S2: f64 = std::f64::consts::SQRT_2;

fn scalar(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

#[test]
fn sb1_second_moment_reaches_stationary_value() {
    let model = sb1();
    let erg = solve_ergodic_system(&model, 1e-10).unwrap();
    let spec = ClosedLoopSpec::ergodic(&model, &erg, scalar(0.0)).unwrap();
    let grid = uniform_grid(30.0, 300);
    let mut opts = SimOptions::new(10_000, 7);
    opts.substeps = 10;
    let ens = simulate(&spec, &grid, &opts).unwrap();
    let (m2, se) = ens.sample_second_moment(300);
    // fixed point of M' = -2 sqrt2 M + 1
    let stationary = 1.0 / (2.0 * S2);
    assert!((m2[(0, 0)] - stationary).abs() <= 3.0 * se[(0, 0)], "{} vs {stationary}", m2[(0, 0)]);
}

#[test]
fn sb1_cesaro_cost_matches_ergodic_constant() {
    // Starting at the stationary second moment keeps E f(t) = c0 for all t,
    // so J_T / T has no transient bias; the fine Euler step keeps the
    // discretization bias well below the standard error.
    let model = sb1();
    let erg = solve_ergodic_system(&model, 1e-10).unwrap();
    let x0 = (1.0 / (2.0 * S2)).sqrt();
    let spec = ClosedLoopSpec::ergodic(&model, &erg, scalar(x0)).unwrap();
    let grid = uniform_grid(50.0, 500);
    let mut opts = SimOptions::new(10_000, 11);
    opts.substeps = 100;
    let ens = simulate(&spec, &grid, &opts).unwrap();
    let cost = estimate_cost(&model, &ens);
    assert!(
        (cost.cesaro - erg.c0).abs() <= 3.0 * cost.cesaro_se,
        "{} +- {} vs {}",
        cost.cesaro,
        cost.cesaro_se,
        erg.c0
    );
}

#[test]
fn sb2_cesaro_cost_from_static_optimum() {
    // sigma = 0: every path sits at the fixed point 1/2 with cost 1/2
    let model = sb2();
    let erg = solve_ergodic_system(&model, 1e-10).unwrap();
    let spec = ClosedLoopSpec::ergodic(&model, &erg, scalar(0.5)).unwrap();
    let ens = simulate(&spec, &uniform_grid(50.0, 500), &SimOptions::new(100, 3)).unwrap();
    let cost = estimate_cost(&model, &ens);
    assert!((cost.cesaro - 0.5).abs() <= 3.0 * cost.cesaro_se + 1e-9);
}

#[test]
fn particle_mean_tracks_mean_ode() {
    let (model, _) = random_valid_model(31, 1, 1);
    assert!(model.Abar[(0, 0)] != 0.0);
    let erg = solve_ergodic_system(&model, 1e-10).unwrap();
    let spec = ClosedLoopSpec::ergodic(&model, &erg, scalar(1.5)).unwrap();
    let grid = uniform_grid(2.0, 20);
    let mut opts = SimOptions::new(100_000, 5);
    opts.particle = true;
    opts.substeps = 100;
    let ens = simulate(&spec, &grid, &opts).unwrap();
    let exact = propagate_mean(&spec, &grid).unwrap();
    for k in [4, 8, 12, 16, 20] {
        let (mean, se) = ens.sample_mean(k);
        assert!((mean[0] - exact[k][0]).abs() <= 3.0 * se[0], "t={}: {} vs {}", grid[k], mean[0], exact[k][0]);
    }
}

#[test]
fn moments_within_four_standard_errors_random_models() {
    for seed in [41u64, 42] {
        let (model, _) = random_valid_model(seed, 2, 2);
        let fin = integrate_riccati_system(&model, 5.0, default_steps(5.0)).unwrap();
        let spec = ClosedLoopSpec::finite(&model, &fin, DVector::from_vec(vec![1.0, -0.5])).unwrap();
        let grid = uniform_grid(5.0, 50);
        let mut opts = SimOptions::new(10_000, seed);
        opts.substeps = 20;
        let ens = simulate(&spec, &grid, &opts).unwrap();
        let exact = propagate_moments(&spec, &grid).unwrap();
        for k in [10, 20, 30, 40, 50] {
            let (mean, se_mean) = ens.sample_mean(k);
            let (m2, se_m2) = ens.sample_second_moment(k);
            for i in 0..2 {
                assert!((mean[i] - exact.mean[k][i]).abs() <= 4.0 * se_mean[i]);
                for j in 0..2 {
                    assert!((m2[(i, j)] - exact.second[k][(i, j)]).abs() <= 4.0 * se_m2[(i, j)]);
                }
            }
        }
    }
}

/// Runs both closed loops with the same seed, which drives them with the
/// same Brownian increments, and compares the sample gap with the moment ODE.
fn coupled_gap_check(model: &mflq::MFModel, x0_fin: DVector<f64>, x0_erg: DVector<f64>, horizon: f64, tol: f64) {
    let erg = solve_ergodic_system(model, 1e-10).unwrap();
    let fin = integrate_riccati_system(model, horizon, default_steps(horizon)).unwrap();
    let grid = uniform_grid(horizon, 50);
    let mut opts = SimOptions::new(10_000, 2024);
    opts.substeps = 100;
    let a = simulate(&ClosedLoopSpec::finite(model, &fin, x0_fin.clone()).unwrap(), &grid, &opts).unwrap();
    let b = simulate(&ClosedLoopSpec::ergodic(model, &erg, x0_erg.clone()).unwrap(), &grid, &opts).unwrap();
    let pm = propagate_pair_moments(model, &fin, &erg, &x0_fin, &x0_erg, &grid).unwrap();
    let n = model.n;
    for k in [5, 15, 25, 35, 45] {
        let gaps: Vec<f64> = (0..opts.paths)
            .map(|p| (0..n).map(|i| (a.state(p, k)[i] - b.state(p, k)[i]).powi(2)).sum())
            .collect();
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (gaps.len() - 1) as f64;
        let se = (var / gaps.len() as f64).sqrt();
        let exact = pm.state_gap[k];
        assert!(
            (mean - exact).abs() <= 3.0 * se + tol * exact,
            "t={}: {mean} +- {se} vs {exact}",
            grid[k]
        );
    }
}

#[test]
fn coupled_gap_sb2_matches_moment_ode() {
    // sigma = 0 makes the gap deterministic; only the Euler bias remains,
    // which grows like h * t relative to the gap (h = 1e-3, t <= 9).
    coupled_gap_check(&sb2(), scalar(2.0), scalar(0.0), 10.0, 5e-2);
}

#[test]
fn coupled_gap_multiplicative_noise_matches_moment_ode() {
    let (model, _) = random_valid_model(61, 2, 1);
    coupled_gap_check(&model, DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![-1.0, 0.5]), 4.0, 0.0);
}
