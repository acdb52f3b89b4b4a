//! Closed-loop mean-field dynamics: moment propagation and Monte Carlo.
//!
//! Under a feedback `u = Theta (x - E[X]) + ThetaBar E[X] + theta` the state
//! obeys the linear mean-field SDE
//!
//! ```text
//! dX = (A1 X + A2 E[X] + b1) dt + (C1 X + C2 E[X] + s1) dW
//! A1 = A + B Theta,  A2 = Abar + B (ThetaBar - Theta),  b1 = B theta + b
//! C1 = C + D Theta,  C2 = Cbar + D (ThetaBar - Theta),  s1 = D theta + sigma
//! ```

mod moments;
mod rng;
mod simulate;

pub use moments::{
    expected_running_cost, propagate_mean, propagate_moments, propagate_pair_moments, MomentPath, PairMoments,
    MAX_MOMENT_STEP,
};
pub use rng::{PathRng, RNG_ALGORITHM};
pub use simulate::{estimate_cost, simulate, CostEstimate, EnsembleMetadata, SimOptions, TrajectoryEnsemble};

use nalgebra::{DMatrix, DVector};

use crate::ergodic::ErgodicSolution;
use crate::error::{Error, Result};
use crate::finite::FiniteHorizonSolution;
use crate::model::{Gains, MFModel};

/// Which feedback drives the closed loop.
#[derive(Debug, Clone)]
pub enum Mode {
    /// Time-varying optimal gains; valid on `[0, T]` only.
    Finite(FiniteHorizonSolution),
    /// Constant ergodic gains.
    Ergodic(ErgodicSolution),
}

#[derive(Debug, Clone)]
pub struct ClosedLoopSpec {
    pub model: MFModel,
    pub mode: Mode,
    pub x0: DVector<f64>,
}

impl ClosedLoopSpec {
    pub fn finite(model: &MFModel, sol: &FiniteHorizonSolution, x0: DVector<f64>) -> Result<Self> {
        if sol.model.fingerprint() != model.fingerprint() {
            return Err(Error::ModelMismatch("finite-horizon solution was computed for a different model".into()));
        }
        Self::checked(model, Mode::Finite(sol.clone()), x0)
    }

    pub fn ergodic(model: &MFModel, erg: &ErgodicSolution, x0: DVector<f64>) -> Result<Self> {
        if erg.model_fingerprint != format!("{:016x}", model.fingerprint()) {
            return Err(Error::ModelMismatch("ergodic solution was computed for a different model".into()));
        }
        Self::checked(model, Mode::Ergodic(erg.clone()), x0)
    }

    fn checked(model: &MFModel, mode: Mode, x0: DVector<f64>) -> Result<Self> {
        if x0.len() != model.n {
            return Err(Error::dim("x0", format!("length {}", model.n), format!("length {}", x0.len())));
        }
        Ok(ClosedLoopSpec {
            model: model.clone(),
            mode,
            x0,
        })
    }

    /// Right end of the admissible time interval.
    pub fn horizon(&self) -> Option<f64> {
        match &self.mode {
            Mode::Finite(sol) => Some(sol.horizon),
            Mode::Ergodic(_) => None,
        }
    }

    pub fn gains_at(&self, t: f64) -> Result<Gains> {
        match &self.mode {
            Mode::Finite(sol) => sol.gains_at(t),
            Mode::Ergodic(erg) => {
                if !(t >= 0.0 && t.is_finite()) {
                    return Err(Error::OutOfRange {
                        t,
                        lo: 0.0,
                        hi: f64::INFINITY,
                    });
                }
                Ok(erg.gains())
            }
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self.mode {
            Mode::Finite(_) => "finite",
            Mode::Ergodic(_) => "ergodic",
        }
    }

    /// Checks that `grid` is strictly increasing, starts at a nonnegative time
    /// and stays inside the admissible interval.
    pub fn check_grid(&self, grid: &[f64]) -> Result<()> {
        if grid.is_empty() {
            return Err(Error::InvalidArgument("time grid is empty".into()));
        }
        if grid.iter().any(|t| !t.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("time grid must be finite and strictly increasing".into()));
        }
        let hi = self.horizon().unwrap_or(f64::INFINITY);
        let slack = 1e-12 * hi.max(1.0);
        for &t in [grid[0], grid[grid.len() - 1]].iter() {
            if t < 0.0 || t > hi + slack {
                return Err(Error::OutOfRange { t, lo: 0.0, hi });
            }
        }
        Ok(())
    }

    /// Clamps `t` into the solution interval to absorb grid round-off.
    fn clamp_time(&self, t: f64) -> f64 {
        match self.horizon() {
            Some(h) => t.min(h),
            None => t,
        }
    }

    pub(crate) fn coefficients_at(&self, t: f64) -> Result<Coefficients> {
        let g = self.gains_at(self.clamp_time(t))?;
        Ok(Coefficients::new(&self.model, &g))
    }
}

/// Closed-loop coefficients at a fixed time.
#[derive(Debug, Clone)]
pub(crate) struct Coefficients {
    pub A1: DMatrix<f64>,
    pub A2: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub C1: DMatrix<f64>,
    pub C2: DMatrix<f64>,
    pub s1: DVector<f64>,
}

impl Coefficients {
    pub fn new(model: &MFModel, g: &Gains) -> Self {
        let diff = &g.ThetaBar - &g.Theta;
        Coefficients {
            A1: &model.A + &model.B * &g.Theta,
            A2: &model.Abar + &model.B * &diff,
            b1: &model.B * &g.theta + &model.b,
            C1: &model.C + &model.D * &g.Theta,
            C2: &model.Cbar + &model.D * &diff,
            s1: &model.D * &g.theta + &model.sigma,
        }
    }

    /// Block-diagonal coefficients of two systems driven by the same noise.
    pub fn stack(a: &Coefficients, b: &Coefficients) -> Self {
        let diag = |x: &DMatrix<f64>, y: &DMatrix<f64>| {
            let (n1, n2) = (x.nrows(), y.nrows());
            let mut m = DMatrix::zeros(n1 + n2, n1 + n2);
            m.view_mut((0, 0), (n1, n1)).copy_from(x);
            m.view_mut((n1, n1), (n2, n2)).copy_from(y);
            m
        };
        let cat = |x: &DVector<f64>, y: &DVector<f64>| {
            DVector::from_iterator(x.len() + y.len(), x.iter().chain(y.iter()).copied())
        };
        Coefficients {
            A1: diag(&a.A1, &b.A1),
            A2: diag(&a.A2, &b.A2),
            b1: cat(&a.b1, &b.b1),
            C1: diag(&a.C1, &b.C1),
            C2: diag(&a.C2, &b.C2),
            s1: cat(&a.s1, &b.s1),
        }
    }
}
