//! Linear-quadratic mean-field stochastic control.
//!
//! Finite-horizon and ergodic Riccati systems, closed-loop moment
//! propagation, Monte Carlo simulation and turnpike diagnostics.

#![allow(non_snake_case)]

pub mod ergodic;
pub mod error;
pub mod finite;
pub mod fixtures;
pub mod linalg;
pub mod mfsim;
pub mod model;
pub mod serde_mat;
pub mod turnpike;

pub use ergodic::{
    bellman_residual, solve_are_pair, solve_ergodic_system, static_optimum, ArePair, ErgodicSolution,
    StaticOptimum,
};
pub use error::{Error, Result};
pub use finite::{integrate_riccati_system, value_function, FiniteHorizonSolution};
pub use linalg::{certify_hurwitz, certify_mean_square, StabilityCertificate};
pub use model::{validate, validate_h1, Gains, MFModel, ValidationReport};
pub use mfsim::{
    estimate_cost, propagate_mean, propagate_moments, propagate_pair_moments, simulate, ClosedLoopSpec, MomentPath,
    SimOptions, TrajectoryEnsemble,
};
pub use turnpike::{
    cesaro_convergence, fit_exponential, gain_convergence, pair_deviation, run_turnpike, TurnpikeConfig, TurnpikeReport,
};
