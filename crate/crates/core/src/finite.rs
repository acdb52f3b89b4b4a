//! Backward integration of the finite-horizon Riccati system.
//!
//! With `tau = T - t` the six components obey `dY/dtau = F(Y)`:
//!
//! ```text
//! P'   = Q(P) - S(P)' R(P)^-1 S(P)
//! Pi'  = Qhat(P,Pi) - Shat(P,Pi)' R(P)^-1 Shat(P,Pi)
//! P1'  = (A + B Theta)' P1 + P1 (Ahat + B ThetaBar) + C'P Chat + Q - P B ThetaBar
//!        + Theta' (D'P Chat + S)
//! p'   = (Ahat + B ThetaBar)' p + (Chat + D ThetaBar)' P sigma + ThetaBar' r + Pi b + q
//! p1'  = (A + B Theta)' p1 + P b + C'P sigma + q + (P1 - P)(B theta + b)
//!        + Theta' (D'P sigma + r)
//! p0'  = 2 p'b + sigma'P sigma - g' R(P)^-1 g,     g = B'p + D'P sigma + r
//! ```
//!
//! with all components zero at `tau = 0`. The gains are recomputed from the
//! current `(P, Pi, p)` at every Runge-Kutta stage.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, symmetrize};
use crate::model::{validate_h1, Gains, MFModel, DEFAULT_MARGIN};
use crate::serde_mat::fmt_f64;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RiccatiState {
    pub P: DMatrix<f64>,
    pub Pi: DMatrix<f64>,
    pub P1: DMatrix<f64>,
    pub p: DVector<f64>,
    pub p1: DVector<f64>,
    pub p0: f64,
}

impl RiccatiState {
    pub fn zeros(n: usize) -> Self {
        RiccatiState {
            P: DMatrix::zeros(n, n),
            Pi: DMatrix::zeros(n, n),
            P1: DMatrix::zeros(n, n),
            p: DVector::zeros(n),
            p1: DVector::zeros(n),
            p0: 0.0,
        }
    }

    /// `self + h * d`
    pub fn step(&self, h: f64, d: &RiccatiState) -> Self {
        RiccatiState {
            P: &self.P + &d.P * h,
            Pi: &self.Pi + &d.Pi * h,
            P1: &self.P1 + &d.P1 * h,
            p: &self.p + &d.p * h,
            p1: &self.p1 + &d.p1 * h,
            p0: self.p0 + d.p0 * h,
        }
    }

    fn is_finite(&self) -> bool {
        let m = |x: &DMatrix<f64>| x.iter().all(|v| v.is_finite());
        let v = |x: &DVector<f64>| x.iter().all(|v| v.is_finite());
        m(&self.P) && m(&self.Pi) && m(&self.P1) && v(&self.p) && v(&self.p1) && self.p0.is_finite()
    }
}

/// Right-hand side `dY/dtau` of the backward system, plus the gains at `Y`.
pub(crate) fn vector_field(model: &MFModel, y: &RiccatiState) -> Result<(RiccatiState, Gains), String> {
    let g = model.gains(&y.P, &y.Pi, &y.p)?;
    let f = model.functionals(&y.P, &y.Pi);
    let d = model.derived();
    let (B, D) = (&model.B, &model.D);
    let Dt = D.transpose();
    let P = &y.P;
    let Psigma = P * &model.sigma;

    // S(P)' R^-1 S(P) = -S(P)' Theta, and likewise for the hat pair.
    let dP = &f.q_of_p + f.s_of_p.transpose() * &g.Theta;
    let dPi = &f.qhat_of_p_pi + f.shat_of_p_pi.transpose() * &g.ThetaBar;

    let closed = &model.A + B * &g.Theta;
    let closed_mean = &d.Ahat + B * &g.ThetaBar;
    let dP1 = closed.transpose() * &y.P1
        + &y.P1 * &closed_mean
        + model.C.transpose() * P * &d.Chat
        + &model.Q
        - P * B * &g.ThetaBar
        + g.Theta.transpose() * (&Dt * P * &d.Chat + &model.S);

    let dp = closed_mean.transpose() * &y.p
        + (&d.Chat + D * &g.ThetaBar).transpose() * &Psigma
        + g.ThetaBar.transpose() * &model.r
        + &y.Pi * &model.b
        + &model.q;

    let dp1 = closed.transpose() * &y.p1
        + P * &model.b
        + model.C.transpose() * &Psigma
        + &model.q
        + (&y.P1 - P) * (B * &g.theta + &model.b)
        + g.Theta.transpose() * (&Dt * &Psigma + &model.r);

    let offset = model.control_offset_term(P, &y.p);
    // g' R^-1 g = -g' theta
    let dp0 = 2.0 * y.p.dot(&model.b) + model.sigma.dot(&Psigma) + offset.dot(&g.theta);

    Ok((
        RiccatiState {
            P: symmetrize(&dP),
            Pi: symmetrize(&dPi),
            P1: dP1,
            p: dp,
            p1: dp1,
            p0: dp0,
        },
        g,
    ))
}

/// One classical RK4 step of size `h` in backward time.
pub(crate) fn rk4_step(model: &MFModel, y: &RiccatiState, h: f64) -> Result<RiccatiState, String> {
    let (k1, _) = vector_field(model, y)?;
    let (k2, _) = vector_field(model, &y.step(0.5 * h, &k1))?;
    let (k3, _) = vector_field(model, &y.step(0.5 * h, &k2))?;
    let (k4, _) = vector_field(model, &y.step(h, &k3))?;
    let mut next = y.step(h / 6.0, &k1);
    next = next.step(h / 3.0, &k2);
    next = next.step(h / 3.0, &k3);
    next = next.step(h / 6.0, &k4);
    next.P = symmetrize(&next.P);
    next.Pi = symmetrize(&next.Pi);
    if !next.is_finite() {
        return Err("non-finite values".into());
    }
    Ok(next)
}

/// Default number of steps for horizon `T`.
pub fn default_steps(horizon: f64) -> usize {
    200.max((100.0 * horizon).ceil() as usize)
}

#[derive(Debug, Clone)]
pub struct FiniteOptions {
    pub steps: usize,
    /// Reject `steps < 10 T`.
    pub enforce_step_guard: bool,
    pub margin: f64,
}

impl FiniteOptions {
    pub fn new(steps: usize) -> Self {
        FiniteOptions {
            steps,
            enforce_step_guard: true,
            margin: DEFAULT_MARGIN,
        }
    }
}

/// Solution of the finite-horizon Riccati system on a uniform grid.
#[derive(Debug, Clone)]
pub struct FiniteHorizonSolution {
    pub model: MFModel,
    pub horizon: f64,
    pub step: f64,
    pub grid: Vec<f64>,
    pub P: Vec<DMatrix<f64>>,
    pub Pi: Vec<DMatrix<f64>>,
    pub P1: Vec<DMatrix<f64>>,
    pub p: Vec<DVector<f64>>,
    pub p1: Vec<DVector<f64>>,
    pub p0: Vec<f64>,
    pub Theta: Vec<DMatrix<f64>>,
    pub ThetaBar: Vec<DMatrix<f64>>,
    pub theta: Vec<DVector<f64>>,
}

pub fn integrate_riccati_system(model: &MFModel, horizon: f64, steps: usize) -> Result<FiniteHorizonSolution> {
    integrate_riccati_system_with(model, horizon, &FiniteOptions::new(steps))
}

pub fn integrate_riccati_system_with(
    model: &MFModel,
    horizon: f64,
    opts: &FiniteOptions,
) -> Result<FiniteHorizonSolution> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    let steps = opts.steps;
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be positive".into()));
    }
    if opts.enforce_step_guard && (steps as f64) < 10.0 * horizon {
        return Err(Error::InvalidArgument(format!(
            "steps = {steps} is below the guard 10*T = {}",
            10.0 * horizon
        )));
    }
    let h1 = validate_h1(model, opts.margin)?;
    if !h1.ok {
        return Err(Error::H1Violation(h1.messages.join("; ")));
    }

    let n = model.n;
    let h = horizon / steps as f64;
    let grid: Vec<f64> = (0..=steps).map(|k| k as f64 * h).collect();
    let mut states = vec![RiccatiState::zeros(n); steps + 1];
    let mut y = RiccatiState::zeros(n);
    for k in (0..steps).rev() {
        y = rk4_step(model, &y, h).map_err(|reason| Error::RiccatiBreakdown { t: grid[k], reason })?;
        states[k] = y.clone();
    }

    let mut sol = FiniteHorizonSolution {
        model: model.clone(),
        horizon,
        step: h,
        grid,
        P: Vec::with_capacity(steps + 1),
        Pi: Vec::with_capacity(steps + 1),
        P1: Vec::with_capacity(steps + 1),
        p: Vec::with_capacity(steps + 1),
        p1: Vec::with_capacity(steps + 1),
        p0: Vec::with_capacity(steps + 1),
        Theta: Vec::with_capacity(steps + 1),
        ThetaBar: Vec::with_capacity(steps + 1),
        theta: Vec::with_capacity(steps + 1),
    };
    for (k, s) in states.into_iter().enumerate() {
        let g = model
            .gains(&s.P, &s.Pi, &s.p)
            .map_err(|reason| Error::RiccatiBreakdown { t: sol.grid[k], reason })?;
        sol.P.push(s.P);
        sol.Pi.push(s.Pi);
        sol.P1.push(s.P1);
        sol.p.push(s.p);
        sol.p1.push(s.p1);
        sol.p0.push(s.p0);
        sol.Theta.push(g.Theta);
        sol.ThetaBar.push(g.ThetaBar);
        sol.theta.push(g.theta);
    }
    Ok(sol)
}

impl FiniteHorizonSolution {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Grid index and interpolation weight for `t`; weight is exactly zero on grid points.
    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let (lo, hi) = (0.0, self.horizon);
        if !(t >= lo && t <= hi) {
            return Err(Error::OutOfRange { t, lo, hi });
        }
        let last = self.grid.len() - 1;
        let x = t / self.step;
        let nearest = (x.round() as usize).min(last);
        if (t - self.grid[nearest]).abs() <= 1e-12 * self.horizon.max(1.0) {
            return Ok((nearest, 0.0));
        }
        let k = (x.floor() as usize).min(last - 1);
        Ok((k, ((t - self.grid[k]) / self.step).clamp(0.0, 1.0)))
    }

    /// Gains at `t`, linearly interpolated between grid points.
    pub fn gains_at(&self, t: f64) -> Result<Gains> {
        let (k, w) = self.locate(t)?;
        if w == 0.0 {
            return Ok(Gains {
                Theta: self.Theta[k].clone(),
                ThetaBar: self.ThetaBar[k].clone(),
                theta: self.theta[k].clone(),
            });
        }
        Ok(Gains {
            Theta: &self.Theta[k] * (1.0 - w) + &self.Theta[k + 1] * w,
            ThetaBar: &self.ThetaBar[k] * (1.0 - w) + &self.ThetaBar[k + 1] * w,
            theta: &self.theta[k] * (1.0 - w) + &self.theta[k + 1] * w,
        })
    }

    /// Largest asymmetry of `P` and `Pi` over the grid.
    pub fn max_asymmetry(&self) -> f64 {
        self.P
            .iter()
            .chain(&self.Pi)
            .map(asymmetry)
            .fold(0.0, f64::max)
    }

    /// Largest residual of the gain identities `R(P) Theta + S(P) = 0` etc. over the grid.
    pub fn gain_identity_residual(&self) -> f64 {
        let m = &self.model;
        (0..self.len())
            .map(|k| {
                let f = m.functionals(&self.P[k], &self.Pi[k]);
                let r1 = crate::linalg::max_abs(&(&f.r_of_p * &self.Theta[k] + &f.s_of_p));
                let r2 = crate::linalg::max_abs(&(&f.r_of_p * &self.ThetaBar[k] + &f.shat_of_p_pi));
                let off = m.control_offset_term(&self.P[k], &self.p[k]);
                let r3 = (&f.r_of_p * &self.theta[k] + off).amax();
                r1.max(r2).max(r3)
            })
            .fold(0.0, f64::max)
    }

    /// Simpson quadrature of `sigma'P sigma + 2 p'b - theta' R(P) theta` over the grid.
    pub fn p0_quadrature(&self) -> f64 {
        let m = &self.model;
        let integrand: Vec<f64> = (0..self.len())
            .map(|k| {
                let P = &self.P[k];
                let rp = &m.R + m.D.transpose() * P * &m.D;
                m.sigma.dot(&(P * &m.sigma)) + 2.0 * self.p[k].dot(&m.b)
                    - self.theta[k].dot(&(rp * &self.theta[k]))
            })
            .collect();
        simpson(&self.grid, &integrand)
    }

    pub fn csv_header(&self) -> String {
        let (n, m) = (self.model.n, self.model.m);
        let mut cols = vec!["t".to_string()];
        let mat = |name: &str, r: usize, c: usize, cols: &mut Vec<String>| {
            for i in 0..r {
                for j in 0..c {
                    cols.push(format!("{name}_{i}_{j}"));
                }
            }
        };
        let vec = |name: &str, len: usize, cols: &mut Vec<String>| {
            for i in 0..len {
                cols.push(format!("{name}_{i}"));
            }
        };
        mat("P", n, n, &mut cols);
        mat("Pi", n, n, &mut cols);
        mat("P1", n, n, &mut cols);
        vec("p", n, &mut cols);
        vec("p1", n, &mut cols);
        cols.push("p0".into());
        mat("Theta", m, n, &mut cols);
        mat("ThetaBar", m, n, &mut cols);
        vec("theta", m, &mut cols);
        cols.join(",")
    }

    /// One row per grid point; matrices vectorized row-major.
    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for k in 0..self.len() {
            let mut row = vec![fmt_f64(self.grid[k])];
            let push_mat = |m: &DMatrix<f64>, row: &mut Vec<String>| {
                for r in m.row_iter() {
                    row.extend(r.iter().map(|x| fmt_f64(*x)));
                }
            };
            push_mat(&self.P[k], &mut row);
            push_mat(&self.Pi[k], &mut row);
            push_mat(&self.P1[k], &mut row);
            row.extend(self.p[k].iter().map(|x| fmt_f64(*x)));
            row.extend(self.p1[k].iter().map(|x| fmt_f64(*x)));
            row.push(fmt_f64(self.p0[k]));
            push_mat(&self.Theta[k], &mut row);
            push_mat(&self.ThetaBar[k], &mut row);
            row.extend(self.theta[k].iter().map(|x| fmt_f64(*x)));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

pub(crate) fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

/// Composite Simpson rule on a uniform grid. An odd number of intervals
/// closes with the 3/8 rule on the last three; fewer than two intervals
/// falls back to the trapezoid.
pub(crate) fn simpson(grid: &[f64], values: &[f64]) -> f64 {
    let intervals = grid.len().saturating_sub(1);
    if intervals < 2 {
        return trapezoid(grid, values);
    }
    let h = (grid[intervals] - grid[0]) / intervals as f64;
    let (pairs, tail) = if intervals % 2 == 0 { (intervals, 0) } else { (intervals - 3, 3) };
    let mut sum = 0.0;
    for k in (0..pairs).step_by(2) {
        sum += h / 3.0 * (values[k] + 4.0 * values[k + 1] + values[k + 2]);
    }
    if tail == 3 {
        let k = pairs;
        sum += 3.0 * h / 8.0 * (values[k] + 3.0 * values[k + 1] + 3.0 * values[k + 2] + values[k + 3]);
    }
    sum
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    /// `<Pi(0)x, x> + 2<p(0), x> + p0(0)`
    pub value: f64,
    pub p0: f64,
    /// Independent Simpson estimate of `p0(0)`.
    pub p0_quadrature: f64,
    /// Quadrature agrees with the integrated `p0(0)` to 1e-6 relative.
    pub consistent: bool,
}

/// Finite-horizon value `V_T(x)`.
pub fn value_function(sol: &FiniteHorizonSolution, x: &DVector<f64>) -> Result<ValueFunction> {
    if x.len() != sol.model.n {
        return Err(Error::dim("x", format!("length {}", sol.model.n), format!("length {}", x.len())));
    }
    let p0 = sol.p0[0];
    let value = x.dot(&(&sol.Pi[0] * x)) + 2.0 * sol.p[0].dot(x) + p0;
    let p0_quadrature = sol.p0_quadrature();
    let consistent = (p0 - p0_quadrature).abs() <= 1e-6 * p0.abs().max(1e-12) || (p0 - p0_quadrature).abs() < 1e-12;
    if !consistent {
        log::warn!("p0(0) = {p0} disagrees with its quadrature {p0_quadrature}");
    }
    Ok(ValueFunction {
        value,
        p0,
        p0_quadrature,
        consistent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{random_valid_model, sb1, sb1_homogeneous, sb2};

    /// Closed form of `P' = P^2 + 2P - 1`, `P(T) = 0`: with `tau = T - t`,
    /// `P = sqrt(2) tanh(sqrt(2) tau + atanh(1/sqrt(2))) - 1`.
    pub(crate) fn sb1_closed_form(tau: f64) -> f64 {
        let s2 = 2f64.sqrt();
        s2 * (s2 * tau + (1.0 / s2).atanh()).tanh() - 1.0
    }

    #[test]
    fn simpson_is_exact_on_cubics() {
        for intervals in [2usize, 3, 7, 10] {
            let grid: Vec<f64> = (0..=intervals).map(|k| 2.0 * k as f64 / intervals as f64).collect();
            let vals: Vec<f64> = grid.iter().map(|t| t * t * t - t + 1.0).collect();
            assert!((simpson(&grid, &vals) - 4.0).abs() < 1e-13, "{intervals}");
        }
    }

    #[test]
    fn closed_form_oracle_solves_the_ode() {
        // central differences on the oracle itself
        for &tau in &[0.01, 0.3, 1.0, 4.0] {
            let h = 1e-5;
            let d = (sb1_closed_form(tau + h) - sb1_closed_form(tau - h)) / (2.0 * h);
            let p = sb1_closed_form(tau);
            assert!((d - (1.0 - 2.0 * p - p * p)).abs() < 1e-6, "tau={tau}");
        }
        assert!(sb1_closed_form(0.0).abs() < 1e-15);
    }

    #[test]
    fn sb1_matches_closed_form() {
        let sol = integrate_riccati_system(&sb1(), 10.0, 2000).unwrap();
        for (k, t) in sol.grid.iter().enumerate() {
            assert!((sol.P[k][(0, 0)] - sb1_closed_form(10.0 - t)).abs() < 1e-6);
        }
    }

    #[test]
    fn terminal_values_are_zero() {
        let (model, _) = random_valid_model(3, 2, 2);
        let sol = integrate_riccati_system(&model, 2.0, 200).unwrap();
        let last = sol.len() - 1;
        assert_eq!(sol.grid[last], 2.0);
        assert_eq!(crate::linalg::max_abs(&sol.P[last]), 0.0);
        assert_eq!(crate::linalg::max_abs(&sol.Pi[last]), 0.0);
        assert_eq!(crate::linalg::max_abs(&sol.P1[last]), 0.0);
        assert_eq!(sol.p[last].amax(), 0.0);
        assert_eq!(sol.p1[last].amax(), 0.0);
        assert_eq!(sol.p0[last], 0.0);
    }

    #[test]
    fn mean_field_free_components_coincide() {
        let sol = integrate_riccati_system(&sb1(), 10.0, 1000).unwrap();
        for k in 0..sol.len() {
            assert!((sol.Pi[k][(0, 0)] - sol.P[k][(0, 0)]).abs() < 1e-9);
            assert!((sol.P1[k][(0, 0)] - sol.P[k][(0, 0)]).abs() < 1e-9);
        }
    }

    #[test]
    fn gains_examples() {
        let s = 2f64.sqrt() - 1.0;
        let sol = integrate_riccati_system(&sb1(), 20.0, 2000).unwrap();
        let g = sol.gains_at(0.0).unwrap();
        assert!((g.Theta[(0, 0)] + s).abs() < 1e-5);
        assert!((g.ThetaBar[(0, 0)] + s).abs() < 1e-5);
        assert!(g.theta[0].abs() < 1e-5);

        let mut model = sb1();
        model.r[0] = 0.7;
        model.R[(0, 0)] = 2.0;
        let sol = integrate_riccati_system(&model, 5.0, 500).unwrap();
        let g = sol.gains_at(5.0).unwrap();
        assert_eq!(g.Theta[(0, 0)], 0.0);
        assert_eq!(g.ThetaBar[(0, 0)], 0.0);
        assert!((g.theta[0] + 0.35).abs() < 1e-15);

        let sol = integrate_riccati_system(&sb2(), 20.0, 2000).unwrap();
        let g = sol.gains_at(0.0).unwrap();
        assert!((g.theta[0] + (2.0 - 2f64.sqrt()) / 2.0).abs() < 1e-6);
    }

    #[test]
    fn gains_interpolate_and_reject_out_of_range() {
        let sol = integrate_riccati_system(&sb1(), 4.0, 400).unwrap();
        let mid = sol.gains_at(0.5 * (sol.grid[10] + sol.grid[11])).unwrap();
        let expect = 0.5 * (sol.Theta[10][(0, 0)] + sol.Theta[11][(0, 0)]);
        assert!((mid.Theta[(0, 0)] - expect).abs() < 1e-15);
        assert_eq!(sol.gains_at(sol.grid[37]).unwrap().Theta, sol.Theta[37]);
        assert!(matches!(sol.gains_at(-0.1), Err(Error::OutOfRange { .. })));
        assert!(matches!(sol.gains_at(4.0001), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn value_function_examples() {
        let sol = integrate_riccati_system(&sb1(), 10.0, 2000).unwrap();
        let v = value_function(&sol, &DVector::zeros(1)).unwrap();
        assert!(v.consistent);
        let integral_p = trapezoid(&sol.grid, &sol.P.iter().map(|p| p[(0, 0)]).collect::<Vec<_>>());
        assert!((v.value - integral_p).abs() < 1e-5);

        let sol = integrate_riccati_system(&sb1_homogeneous(), 5.0, 500).unwrap();
        let x = DVector::from_element(1, 1.7);
        let v = value_function(&sol, &x).unwrap();
        assert_eq!(v.p0, 0.0);
        assert!((v.value - sol.Pi[0][(0, 0)] * 1.7 * 1.7).abs() < 1e-15);
        assert!(v.value >= 0.0);

        let gap = |t: f64| {
            let sol = integrate_riccati_system(&sb2(), t, default_steps(t)).unwrap();
            (value_function(&sol, &DVector::zeros(1)).unwrap().value / t - 0.5).abs()
        };
        let ratio = gap(20.0) / gap(10.0);
        assert!((ratio - 0.5).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn step_guard_and_h1_precondition() {
        assert!(matches!(
            integrate_riccati_system(&sb1(), 10.0, 50),
            Err(Error::InvalidArgument(_))
        ));
        let mut opts = FiniteOptions::new(50);
        opts.enforce_step_guard = false;
        assert!(integrate_riccati_system_with(&sb1(), 10.0, &opts).is_ok());
        let mut bad = sb1();
        bad.Q[(0, 0)] = 0.0;
        assert!(matches!(integrate_riccati_system(&bad, 1.0, 100), Err(Error::H1Violation(_))));
    }

    #[test]
    fn invariants_on_random_model() {
        let (model, _) = random_valid_model(40, 3, 2);
        let sol = integrate_riccati_system(&model, 6.0, 600).unwrap();
        assert!(sol.max_asymmetry() <= 1e-12);
        assert!(sol.gain_identity_residual() <= 1e-10);
        let delta = crate::linalg::sym_eig_min(&model.R) - 1e-9;
        for k in 0..sol.len() {
            assert!(crate::linalg::sym_eig_min(&sol.P[k]) >= -1e-12);
            assert!(crate::linalg::sym_eig_min(&sol.Pi[k]) >= -1e-12);
            let rp = &model.R + model.D.transpose() * &sol.P[k] * &model.D;
            assert!(crate::linalg::sym_eig_min(&rp) >= delta);
        }
    }

    #[test]
    fn csv_layout() {
        let sol = integrate_riccati_system(&sb1(), 1.0, 200).unwrap();
        let csv = sol.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,P_0_0,Pi_0_0,P1_0_0,p_0,p1_0,p0,Theta_0_0,ThetaBar_0_0,theta_0"
        );
        assert_eq!(lines.count(), 201);
    }
}
