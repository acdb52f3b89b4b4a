//! Shared inputs for the benchmarks.

use mflq::fixtures::random_valid_model;
use mflq::MFModel;
use nalgebra::DVector;

/// Problem sizes exercised by the dense solvers.
pub const SIZES: [(usize, usize); 3] = [(1, 1), (3, 2), (6, 3)];

/// A reproducible valid model of the given size.
pub fn model(n: usize, m: usize) -> MFModel {
    random_valid_model(1000 + (10 * n + m) as u64, n, m).0
}

pub fn unit_state(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0)
}
