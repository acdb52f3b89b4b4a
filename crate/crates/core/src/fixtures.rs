//! Reference problems used by tests, benchmarks and examples.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::MFModel;

/// Scalar model with `Abar = C = Cbar = D = 0`, `Qbar = S = 0`, `q = r = 0`.
pub fn scalar_model(a: f64, b_gain: f64, b: f64, sigma: f64, q: f64, r: f64) -> MFModel {
    let mut m = MFModel::zeros(1, 1);
    m.A[(0, 0)] = a;
    m.B[(0, 0)] = b_gain;
    m.b[0] = b;
    m.sigma[0] = sigma;
    m.Q[(0, 0)] = q;
    m.R[(0, 0)] = r;
    m
}

/// Scalar benchmark SB1: `A = -1, B = 1, sigma = 1, Q = R = 1`, everything else zero.
///
/// Closed forms: `P = Pi = P1 = sqrt(2) - 1`, `p = p1 = 0`, `theta = 0`, `c0 = sqrt(2) - 1`.
pub fn sb1() -> MFModel {
    scalar_model(-1.0, 1.0, 0.0, 1.0, 1.0, 1.0)
}

/// Scalar benchmark SB2: SB1 with `b = 1`, `sigma = 0`.
///
/// Closed forms: `p = (2 - sqrt(2))/2`, `theta = -p`, `c0 = 1/2`, static optimum `(1/2, -1/2)`.
pub fn sb2() -> MFModel {
    scalar_model(-1.0, 1.0, 1.0, 0.0, 1.0, 1.0)
}

/// SB1 with every non-homogeneous term removed.
pub fn sb1_homogeneous() -> MFModel {
    scalar_model(-1.0, 1.0, 0.0, 0.0, 1.0, 1.0)
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.random_range(-1.0..1.0))
}

fn uniform_vector(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| scale * rng.random_range(-1.0..1.0))
}

/// Random dense model with moderate coefficients. Not guaranteed to satisfy
/// (H1)/(H2); see [`random_valid_model`].
pub fn random_model(seed: u64, n: usize, m: usize) -> MFModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = MFModel::zeros(n, m);
    model.A = uniform_matrix(&mut rng, n, n, 1.0) - DMatrix::identity(n, n) * 0.5;
    model.Abar = uniform_matrix(&mut rng, n, n, 0.5);
    model.B = uniform_matrix(&mut rng, n, m, 1.0);
    model.C = uniform_matrix(&mut rng, n, n, 0.3);
    model.Cbar = uniform_matrix(&mut rng, n, n, 0.3);
    model.D = uniform_matrix(&mut rng, n, m, 0.3);
    model.b = uniform_vector(&mut rng, n, 1.0);
    model.sigma = uniform_vector(&mut rng, n, 1.0);
    let l = uniform_matrix(&mut rng, n, n, 1.0);
    model.Q = &l * l.transpose() + DMatrix::identity(n, n) * 0.5;
    let qb = uniform_matrix(&mut rng, n, n, 0.3);
    model.Qbar = (&qb + qb.transpose()) * 0.5;
    model.S = uniform_matrix(&mut rng, m, n, 0.3);
    let k = uniform_matrix(&mut rng, m, m, 0.5);
    model.R = &k * k.transpose() + DMatrix::identity(m, m);
    model.q = uniform_vector(&mut rng, n, 1.0);
    model.r = uniform_vector(&mut rng, m, 1.0);
    model
}

/// Draws random models from consecutive seeds starting at `seed` until one
/// passes full validation. Returns the model and the seed that produced it.
pub fn random_valid_model(seed: u64, n: usize, m: usize) -> (MFModel, u64) {
    (seed..seed + 1000)
        .map(|s| (random_model(s, n, m), s))
        .find(|(model, _)| {
            crate::model::validate(model, crate::model::DEFAULT_MARGIN, 1e-10).is_ok_and(|r| r.ok())
        })
        .expect("a valid random model within 1000 seeds")
}
