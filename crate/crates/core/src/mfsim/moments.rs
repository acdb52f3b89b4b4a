//! Exact first and second moment ODEs of the closed loop.
//!
//! With `c = C2 m + s1`, Itô's formula gives
//!
//! ```text
//! m' = (A1 + A2) m + b1
//! M' = A1 M + M A1' + (A2 m + b1) m' + m (A2 m + b1)'
//!      + C1 M C1' + C1 m c' + c m' C1' + c c'
//! ```
//!
//! where `m = E[X]` and `M = E[X X']`. A pair of systems driven by the same
//! Brownian motion is handled by stacking it into one system with
//! block-diagonal coefficients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ClosedLoopSpec, Coefficients};
use crate::ergodic::ErgodicSolution;
use crate::error::{Error, Result};
use crate::finite::FiniteHorizonSolution;
use crate::linalg::{sym_eig_min, symmetrize};
use crate::model::{Gains, MFModel};
use crate::serde_mat::{self, fmt_f64};

/// Largest RK4 step used between grid points.
pub const MAX_MOMENT_STEP: f64 = 0.01;

fn mean_rhs(c: &Coefficients, m: &DVector<f64>) -> DVector<f64> {
    (&c.A1 + &c.A2) * m + &c.b1
}

fn second_rhs(c: &Coefficients, m: &DVector<f64>, M: &DMatrix<f64>) -> DMatrix<f64> {
    let drift = &c.A2 * m + &c.b1;
    let noise = &c.C2 * m + &c.s1;
    let c1m = &c.C1 * m;
    let a1m = &c.A1 * M;
    let c1M = &c.C1 * M * c.C1.transpose();
    let out = &a1m + a1m.transpose() + &drift * m.transpose() + m * drift.transpose() + c1M
        + &c1m * noise.transpose()
        + &noise * c1m.transpose()
        + &noise * noise.transpose();
    symmetrize(&out)
}

/// RK4 integration of `(m, M)` over `grid` with coefficients `coeff(t)`.
fn integrate(
    grid: &[f64],
    coeff: impl Fn(f64) -> Result<Coefficients>,
    m0: DVector<f64>,
    with_second: bool,
) -> Result<(Vec<DVector<f64>>, Vec<DMatrix<f64>>)> {
    let mut m = m0;
    let mut M = &m * m.transpose();
    let mut means = Vec::with_capacity(grid.len());
    let mut seconds = Vec::with_capacity(if with_second { grid.len() } else { 0 });
    means.push(m.clone());
    if with_second {
        seconds.push(M.clone());
    }
    for w in grid.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let substeps = ((t1 - t0) / MAX_MOMENT_STEP).ceil().max(1.0) as usize;
        let h = (t1 - t0) / substeps as f64;
        for j in 0..substeps {
            let t = t0 + j as f64 * h;
            let (c0, ch, c1) = (coeff(t)?, coeff(t + 0.5 * h)?, coeff(if j + 1 == substeps { t1 } else { t + h })?);
            let km1 = mean_rhs(&c0, &m);
            let m2 = &m + &km1 * (0.5 * h);
            let km2 = mean_rhs(&ch, &m2);
            let m3 = &m + &km2 * (0.5 * h);
            let km3 = mean_rhs(&ch, &m3);
            let m4 = &m + &km3 * h;
            let km4 = mean_rhs(&c1, &m4);
            if with_second {
                let kM1 = second_rhs(&c0, &m, &M);
                let kM2 = second_rhs(&ch, &m2, &(&M + &kM1 * (0.5 * h)));
                let kM3 = second_rhs(&ch, &m3, &(&M + &kM2 * (0.5 * h)));
                let kM4 = second_rhs(&c1, &m4, &(&M + &kM3 * h));
                M = symmetrize(&(&M + (kM1 + kM2 * 2.0 + kM3 * 2.0 + kM4) * (h / 6.0)));
            }
            m += (km1 + km2 * 2.0 + km3 * 2.0 + km4) * (h / 6.0);
        }
        if m.iter().any(|x| !x.is_finite()) || (with_second && M.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidArgument(format!("moment propagation overflowed at t = {t1}")));
        }
        means.push(m.clone());
        if with_second {
            seconds.push(M.clone());
        }
    }
    Ok((means, seconds))
}

/// Mean path `E[X(t)]` on `grid`, starting from `spec.x0` at `grid[0]`.
pub fn propagate_mean(spec: &ClosedLoopSpec, grid: &[f64]) -> Result<Vec<DVector<f64>>> {
    spec.check_grid(grid)?;
    Ok(integrate(grid, |t| spec.coefficients_at(t), spec.x0.clone(), false)?.0)
}

/// First and second moments from the deterministic start `spec.x0`.
pub fn propagate_moments(spec: &ClosedLoopSpec, grid: &[f64]) -> Result<MomentPath> {
    spec.check_grid(grid)?;
    let (mean, second) = integrate(grid, |t| spec.coefficients_at(t), spec.x0.clone(), true)?;
    Ok(MomentPath {
        grid: grid.to_vec(),
        mean,
        second,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentPath {
    pub grid: Vec<f64>,
    #[serde(with = "serde_mat::vectors")]
    pub mean: Vec<DVector<f64>>,
    #[serde(with = "serde_mat::matrices")]
    pub second: Vec<DMatrix<f64>>,
}

impl MomentPath {
    pub fn covariance(&self, k: usize) -> DMatrix<f64> {
        &self.second[k] - &self.mean[k] * self.mean[k].transpose()
    }

    /// Smallest covariance eigenvalue over the grid.
    pub fn min_covariance_eig(&self) -> f64 {
        (0..self.grid.len())
            .map(|k| sym_eig_min(&self.covariance(k)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Columns `t, mean_i, second_i_j` (row-major).
    pub fn to_csv(&self) -> String {
        let n = self.mean.first().map_or(0, |m| m.len());
        let mut cols = vec!["t".to_string()];
        cols.extend((0..n).map(|i| format!("mean_{i}")));
        cols.extend((0..n).flat_map(|i| (0..n).map(move |j| format!("second_{i}_{j}"))));
        let mut out = cols.join(",");
        out.push('\n');
        for (k, t) in self.grid.iter().enumerate() {
            let mut row = vec![fmt_f64(*t)];
            row.extend(self.mean[k].iter().map(|x| fmt_f64(*x)));
            row.extend((0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| fmt_f64(self.second[k][(i, j)])));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Moments of the pair `Z = (X_T, Xbar)` driven by the same noise, with the
/// derived gap series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMoments {
    pub path: MomentPath,
    /// `E|X_T(t) - Xbar(t)|^2`
    pub state_gap: Vec<f64>,
    /// `E|u_T(t) - ubar(t)|^2`
    pub control_gap: Vec<f64>,
}

impl PairMoments {
    pub fn mean_finite(&self, k: usize) -> DVector<f64> {
        let n = self.path.mean[k].len() / 2;
        self.path.mean[k].rows(0, n).into_owned()
    }

    pub fn mean_ergodic(&self, k: usize) -> DVector<f64> {
        let n = self.path.mean[k].len() / 2;
        self.path.mean[k].rows(n, n).into_owned()
    }

    /// Columns `t, state_gap, control_gap, mean_finite_i, mean_ergodic_i`.
    pub fn to_csv(&self) -> String {
        let n = self.path.mean.first().map_or(0, |m| m.len() / 2);
        let mut cols = vec!["t".to_string(), "state_gap".into(), "control_gap".into()];
        cols.extend((0..n).map(|i| format!("mean_finite_{i}")));
        cols.extend((0..n).map(|i| format!("mean_ergodic_{i}")));
        let mut out = cols.join(",");
        out.push('\n');
        for (k, t) in self.path.grid.iter().enumerate() {
            let mut row = vec![fmt_f64(*t), fmt_f64(self.state_gap[k]), fmt_f64(self.control_gap[k])];
            row.extend(self.path.mean[k].iter().map(|x| fmt_f64(*x)));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Propagates the coupled pair (finite-horizon optimal state, ergodic optimal
/// state) and evaluates the state and control gaps exactly from the moments.
pub fn propagate_pair_moments(
    model: &MFModel,
    finite: &FiniteHorizonSolution,
    erg: &ErgodicSolution,
    x0_finite: &DVector<f64>,
    x0_erg: &DVector<f64>,
    grid: &[f64],
) -> Result<PairMoments> {
    let fin_spec = ClosedLoopSpec::finite(model, finite, x0_finite.clone())
        .map_err(|e| rename_x0(e, "x0_finite"))?;
    let erg_spec = ClosedLoopSpec::ergodic(model, erg, x0_erg.clone()).map_err(|e| rename_x0(e, "x0_erg"))?;
    fin_spec.check_grid(grid)?;
    let n = model.n;
    let z0 = DVector::from_iterator(2 * n, x0_finite.iter().chain(x0_erg.iter()).copied());
    let coeff = |t: f64| -> Result<Coefficients> {
        Ok(Coefficients::stack(&fin_spec.coefficients_at(t)?, &erg_spec.coefficients_at(t)?))
    };
    let (mean, second) = integrate(grid, coeff, z0, true)?;
    let path = MomentPath {
        grid: grid.to_vec(),
        mean,
        second,
    };

    let g_erg = erg.gains();
    let mut state_gap = Vec::with_capacity(grid.len());
    let mut control_gap = Vec::with_capacity(grid.len());
    for (k, &t) in grid.iter().enumerate() {
        let M = &path.second[k];
        let z = &path.mean[k];
        let m_fin = z.rows(0, n).into_owned();
        let m_erg = z.rows(n, n).into_owned();

        let mut L = DMatrix::zeros(n, 2 * n);
        L.view_mut((0, 0), (n, n)).fill_with_identity();
        L.view_mut((0, n), (n, n)).copy_from(&(-DMatrix::<f64>::identity(n, n)));
        state_gap.push((&L * M * L.transpose()).trace().max(0.0));

        let g_fin = fin_spec.gains_at(fin_spec.clamp_time(t))?;
        let m_ctrl = g_fin.Theta.nrows();
        let mut K = DMatrix::zeros(m_ctrl, 2 * n);
        K.view_mut((0, 0), (m_ctrl, n)).copy_from(&g_fin.Theta);
        K.view_mut((0, n), (m_ctrl, n)).copy_from(&(-&g_erg.Theta));
        let offset = (&g_fin.ThetaBar - &g_fin.Theta) * &m_fin + &g_fin.theta
            - ((&g_erg.ThetaBar - &g_erg.Theta) * &m_erg + &g_erg.theta);
        let gap = (&K * M * K.transpose()).trace() + 2.0 * offset.dot(&(&K * z)) + offset.norm_squared();
        control_gap.push(gap.max(0.0));
    }
    Ok(PairMoments {
        path,
        state_gap,
        control_gap,
    })
}

fn rename_x0(e: Error, name: &str) -> Error {
    match e {
        Error::Dimension { field, expected, found } if field == "x0" => Error::Dimension {
            field: name.to_string(),
            expected,
            found,
        },
        other => other,
    }
}

/// `E f(X, E[X], u)` for `u = Theta X + (ThetaBar - Theta) m + theta` given
/// `m = E[X]` and `M = E[X X']`.
pub fn expected_running_cost(model: &MFModel, g: &Gains, m: &DVector<f64>, M: &DMatrix<f64>) -> f64 {
    let k = (&g.ThetaBar - &g.Theta) * m + &g.theta;
    let th = &g.Theta;
    let xu = M * th.transpose() + m * k.transpose();
    let uu = th * M * th.transpose() + th * m * k.transpose() + &k * m.transpose() * th.transpose() + &k * k.transpose();
    let mean_u = th * m + &k;
    (&model.Q * M).trace()
        + 2.0 * (&model.S * &xu).trace()
        + (&model.R * uu).trace()
        + 2.0 * model.q.dot(m)
        + 2.0 * model.r.dot(&mean_u)
        + m.dot(&(&model.Qbar * m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ergodic::solve_ergodic_system;
    use crate::finite::integrate_riccati_system;
    use crate::fixtures::{random_valid_model, sb1, sb1_homogeneous, sb2};

    const S2: f64 = std::f64::consts::SQRT_2;

    fn ergodic_spec(model: &MFModel, x0: f64) -> ClosedLoopSpec {
        let erg = solve_ergodic_system(model, 1e-10).unwrap();
        ClosedLoopSpec::ergodic(model, &erg, DVector::from_element(model.n, x0)).unwrap()
    }

    fn uniform(t_end: f64, points: usize) -> Vec<f64> {
        (0..points).map(|k| t_end * k as f64 / (points - 1) as f64).collect()
    }

    #[test]
    fn sb1_zero_start_mean_stays_zero() {
        let mean = propagate_mean(&ergodic_spec(&sb1(), 0.0), &uniform(10.0, 11)).unwrap();
        assert!(mean.iter().all(|m| m[0] == 0.0));
    }

    #[test]
    fn sb2_mean_relaxes_at_closed_loop_rate() {
        let grid = uniform(8.0, 17);
        let mean = propagate_mean(&ergodic_spec(&sb2(), 2.0), &grid).unwrap();
        for (t, m) in grid.iter().zip(&mean) {
            let exact = 0.5 + 1.5 * (-S2 * t).exp();
            assert!((m[0] - exact).abs() < 1e-9, "t={t}");
        }
        let fixed = propagate_mean(&ergodic_spec(&sb2(), 0.5), &grid).unwrap();
        assert!(fixed.iter().all(|m| (m[0] - 0.5).abs() < 1e-12));
    }

    #[test]
    fn sb1_second_moment_closed_form() {
        let grid = uniform(5.0, 11);
        let path = propagate_moments(&ergodic_spec(&sb1(), 0.0), &grid).unwrap();
        for (k, t) in grid.iter().enumerate() {
            let exact = (1.0 - (-2.0 * S2 * t).exp()) / (2.0 * S2);
            assert!((path.second[k][(0, 0)] - exact).abs() < 1e-9);
        }
    }

    #[test]
    fn long_run_boundedness_and_stationarity() {
        for model in [sb1(), sb2()] {
            let spec = ergodic_spec(&model, 1.0);
            let grid = uniform(200.0, 401);
            let path = propagate_moments(&spec, &grid).unwrap();
            let last = path.grid.len() - 1;
            let stat = path.second[last][(0, 0)];
            for (k, t) in grid.iter().enumerate() {
                if *t >= 20.0 {
                    assert!(path.second[k][(0, 0)] <= 1.1 * stat);
                }
            }
            let k100 = 200;
            assert!((path.mean[k100][0] - path.mean[last][0]).abs() <= 1e-6);
            assert!((path.covariance(k100)[(0, 0)] - path.covariance(last)[(0, 0)]).abs() <= 1e-6);
        }
    }

    #[test]
    fn covariance_stays_psd_random_finite() {
        let (model, _) = random_valid_model(3, 3, 2);
        let fin = integrate_riccati_system(&model, 5.0, 1000).unwrap();
        let spec = ClosedLoopSpec::finite(&model, &fin, DVector::from_element(3, 0.7)).unwrap();
        let path = propagate_moments(&spec, &uniform(5.0, 51)).unwrap();
        assert!(path.min_covariance_eig() >= -1e-9);
    }

    #[test]
    fn expected_cost_matches_ergodic_constant_at_stationarity() {
        for model in [sb1(), sb2()] {
            let erg = solve_ergodic_system(&model, 1e-10).unwrap();
            let spec = ClosedLoopSpec::ergodic(&model, &erg, DVector::zeros(1)).unwrap();
            let path = propagate_moments(&spec, &uniform(60.0, 7)).unwrap();
            let k = path.grid.len() - 1;
            let cost = expected_running_cost(&model, &erg.gains(), &path.mean[k], &path.second[k]);
            assert!((cost - erg.c0).abs() < 1e-9, "{cost} vs {}", erg.c0);
        }
    }

    #[test]
    fn pair_gap_identical_start_is_zero() {
        let model = sb1_homogeneous();
        let fin = integrate_riccati_system(&model, 5.0, 500).unwrap();
        let erg = solve_ergodic_system(&model, 1e-10).unwrap();
        let x = DVector::from_element(1, 1.0);
        let pm = propagate_pair_moments(&model, &fin, &erg, &x, &x, &uniform(5.0, 11)).unwrap();
        assert_eq!(pm.state_gap[0], 0.0);
        // the controls differ only through the gain gap at t = 0
        let dtheta = fin.Theta[0][(0, 0)] - erg.Theta[(0, 0)];
        assert!((pm.control_gap[0] - dtheta * dtheta).abs() < 1e-15);
    }

    #[test]
    fn pair_gap_away_from_terminal_layer() {
        // Finite gains equal the ergodic ones up to e^{-2 sqrt2 (T-t)}, so for
        // t <= 5 the gap is the deterministic (1 - 0)^2 e^{-2 sqrt2 t}.
        let model = sb1();
        let fin = integrate_riccati_system(&model, 20.0, 4000).unwrap();
        let erg = solve_ergodic_system(&model, 1e-10).unwrap();
        let grid = uniform(20.0, 41);
        let pm = propagate_pair_moments(&model, &fin, &erg, &DVector::from_element(1, 1.0), &DVector::zeros(1), &grid)
            .unwrap();
        let p = S2 - 1.0;
        for (k, t) in grid.iter().enumerate().take(11) {
            let exact = (-2.0 * S2 * t).exp();
            // RK4 at step 0.01 on the rate 2 sqrt2 leaves ~1e-8 relative error
            assert!((pm.state_gap[k] - exact).abs() < 1e-7 * exact, "t={t}");
            assert!((pm.control_gap[k] - p * p * exact).abs() < 1e-7 * exact);
        }
    }

    #[test]
    fn pair_gap_turnpike_shape() {
        let model = sb1();
        let fin = integrate_riccati_system(&model, 20.0, 4000).unwrap();
        let erg = solve_ergodic_system(&model, 1e-10).unwrap();
        let grid = uniform(20.0, 41);
        let x = DVector::from_element(1, 1.0);
        let pm = propagate_pair_moments(&model, &fin, &erg, &x, &x, &grid).unwrap();
        let (mid, late) = (pm.state_gap[20], pm.state_gap[39]);
        assert!(mid <= 1e-6);
        assert!(late >= 1e3 * mid);
    }

    #[test]
    fn pair_dimension_error_names_argument() {
        let model = sb1();
        let fin = integrate_riccati_system(&model, 2.0, 200).unwrap();
        let erg = solve_ergodic_system(&model, 1e-10).unwrap();
        let err = propagate_pair_moments(&model, &fin, &erg, &DVector::zeros(1), &DVector::zeros(2), &[0.0, 1.0])
            .unwrap_err();
        assert!(err.to_string().contains("x0_erg"));
    }

    #[test]
    fn csv_shapes() {
        let path = propagate_moments(&ergodic_spec(&sb1(), 0.0), &uniform(1.0, 3)).unwrap();
        let csv = path.to_csv();
        assert_eq!(csv.lines().next().unwrap(), "t,mean_0,second_0_0");
        assert_eq!(csv.lines().count(), 4);
    }
}
