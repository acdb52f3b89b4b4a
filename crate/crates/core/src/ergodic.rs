//! The ergodic (infinite-horizon average cost) problem.
//!
//! The stabilizing pair `(P, Pi)` is found by running the backward Riccati
//! flow until it saturates and then polishing with Newton (Kleinman)
//! iterations. `P1` then solves a Sylvester equation, `p` and `p1` solve
//! linear systems and `c0` is explicit:
//!
//! ```text
//! c0 = 2 p'b + sigma'P sigma - g' R(P)^-1 g,   g = B'p + D'P sigma + r
//! ```

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finite::{vector_field, RiccatiState};
use crate::linalg::{
    certify_hurwitz, certify_mean_square, max_abs, solve_lyapunov, solve_stochastic_lyapunov, solve_sylvester,
    symmetrize, StabilityCertificate,
};
use crate::model::{validate_h1, Gains, MFModel, DEFAULT_MARGIN};
use crate::serde_mat;

#[derive(Debug, Clone)]
pub struct AreOptions {
    pub tol: f64,
    /// Give up when the backward flow has not saturated by this pseudo-time.
    pub max_pseudo_horizon: f64,
    pub initial_step: f64,
    pub max_newton_iterations: usize,
    pub margin: f64,
}

impl AreOptions {
    pub fn new(tol: f64) -> Self {
        AreOptions {
            tol,
            max_pseudo_horizon: 400.0,
            initial_step: 0.01,
            max_newton_iterations: 20,
            margin: DEFAULT_MARGIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArePair {
    pub P: DMatrix<f64>,
    pub Pi: DMatrix<f64>,
    /// Pseudo-time at which the backward flow saturated.
    pub pseudo_horizon: f64,
    pub newton_iterations: usize,
    pub residual_p: f64,
    pub residual_pi: f64,
    pub warnings: Vec<String>,
}

fn riccati_residual_p(model: &MFModel, P: &DMatrix<f64>) -> Result<DMatrix<f64>, String> {
    let g = model.gains(P, P, &DVector::zeros(model.n))?;
    let f = model.functionals(P, P);
    Ok(symmetrize(&(&f.q_of_p + f.s_of_p.transpose() * &g.Theta)))
}

fn riccati_residual_pi(model: &MFModel, P: &DMatrix<f64>, Pi: &DMatrix<f64>) -> Result<DMatrix<f64>, String> {
    let g = model.gains(P, Pi, &DVector::zeros(model.n))?;
    let f = model.functionals(P, Pi);
    Ok(symmetrize(&(&f.qhat_of_p_pi + f.shat_of_p_pi.transpose() * &g.ThetaBar)))
}

/// Above this multiple of the coefficient scale the backward flow is treated as divergent.
const DIVERGENCE_BOUND: f64 = 1e10;

fn residual_scale(model: &MFModel) -> f64 {
    1.0 + model.coefficient_scale()
}

/// Runs the `(P, Pi)` part of the backward flow from zero until `|dP/dtau|`
/// and `|dPi/dtau|` fall below `threshold(P, Pi)`.
fn saturate(model: &MFModel, opts: &AreOptions, h: f64) -> Result<(RiccatiState, f64), Error> {
    let n = model.n;
    let scale = residual_scale(model);
    let mut y = RiccatiState::zeros(n);
    let mut tau = 0.0;
    let mut last_derivative = f64::INFINITY;
    while tau < opts.max_pseudo_horizon {
        let (d, _) = pair_field(model, &y).map_err(|reason| Error::RiccatiBreakdown { t: -tau, reason })?;
        let size = max_abs(&d.P).max(max_abs(&d.Pi));
        last_derivative = size;
        let threshold = 0.1 * opts.tol * (scale + max_abs(&y.P).max(max_abs(&y.Pi)));
        if size < threshold {
            return Ok((y, tau));
        }
        // Unbounded growth: the flow will not saturate.
        if max_abs(&y.P).max(max_abs(&y.Pi)) > DIVERGENCE_BOUND * scale {
            return Err(Error::NoStabilizingSolution {
                horizon: tau,
                derivative: size,
            });
        }
        y = rk4_pair(model, &y, h).map_err(|reason| Error::RiccatiBreakdown { t: -tau, reason })?;
        tau += h;
    }
    Err(Error::NoStabilizingSolution {
        horizon: opts.max_pseudo_horizon,
        derivative: last_derivative,
    })
}

/// Backward flow restricted to `(P, Pi)`.
fn pair_field(model: &MFModel, y: &RiccatiState) -> Result<(RiccatiState, Gains), String> {
    let g = model.gains(&y.P, &y.Pi, &y.p)?;
    let f = model.functionals(&y.P, &y.Pi);
    let mut d = RiccatiState::zeros(model.n);
    d.P = symmetrize(&(&f.q_of_p + f.s_of_p.transpose() * &g.Theta));
    d.Pi = symmetrize(&(&f.qhat_of_p_pi + f.shat_of_p_pi.transpose() * &g.ThetaBar));
    Ok((d, g))
}

fn rk4_pair(model: &MFModel, y: &RiccatiState, h: f64) -> Result<RiccatiState, String> {
    let (k1, _) = pair_field(model, y)?;
    let (k2, _) = pair_field(model, &y.step(0.5 * h, &k1))?;
    let (k3, _) = pair_field(model, &y.step(0.5 * h, &k2))?;
    let (k4, _) = pair_field(model, &y.step(h, &k3))?;
    let mut next = y.step(h / 6.0, &k1).step(h / 3.0, &k2).step(h / 3.0, &k3).step(h / 6.0, &k4);
    next.P = symmetrize(&next.P);
    next.Pi = symmetrize(&next.Pi);
    if next.P.iter().chain(next.Pi.iter()).any(|x| !x.is_finite()) {
        return Err("non-finite values".into());
    }
    Ok(next)
}

/// One Kleinman step for `P`: the cost matrix of the current feedback.
fn kleinman_p(model: &MFModel, P: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let g = model
        .gains(P, P, &DVector::zeros(model.n))
        .map_err(|reason| Error::RiccatiBreakdown { t: 0.0, reason })?;
    let th = &g.Theta;
    let closed = &model.A + &model.B * th;
    let noise = &model.C + &model.D * th;
    let w = &model.Q + th.transpose() * &model.R * th + th.transpose() * &model.S + model.S.transpose() * th;
    solve_stochastic_lyapunov(&closed, &noise, &w)
}

/// One Kleinman step for `Pi` with `P` held fixed.
fn kleinman_pi(model: &MFModel, P: &DMatrix<f64>, Pi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let g = model
        .gains(P, Pi, &DVector::zeros(model.n))
        .map_err(|reason| Error::RiccatiBreakdown { t: 0.0, reason })?;
    let d = model.derived();
    let tb = &g.ThetaBar;
    let rp = &model.R + model.D.transpose() * P * &model.D;
    let cross = model.D.transpose() * P * &d.Chat + &model.S;
    let closed = &d.Ahat + &model.B * tb;
    let w = d.Chat.transpose() * P * &d.Chat + &d.Qhat + tb.transpose() * rp * tb + tb.transpose() * &cross
        + cross.transpose() * tb;
    solve_lyapunov(&closed, &w)
}

/// Damped Newton polish. Returns the polished matrix and the iteration count,
/// or `None` when the first step already fails to reduce the residual.
fn polish(
    start: DMatrix<f64>,
    max_iter: usize,
    target: f64,
    residual: impl Fn(&DMatrix<f64>) -> Option<f64>,
    newton: impl Fn(&DMatrix<f64>) -> Result<DMatrix<f64>>,
) -> Option<(DMatrix<f64>, usize)> {
    let mut x = start;
    let mut res = residual(&x)?;
    let mut iterations = 0;
    while iterations < max_iter && res > target {
        let Ok(next) = newton(&x) else { break };
        let delta = next - &x;
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha > 1.0 / 1024.0 {
            let trial = symmetrize(&(&x + &delta * alpha));
            if let Some(r) = residual(&trial) {
                if r < res {
                    accepted = Some((trial, r));
                    break;
                }
            }
            alpha *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((trial, r)) => {
                x = trial;
                res = r;
            }
            None => break,
        }
    }
    Some((x, iterations))
}

/// Stabilizing solutions of the two algebraic Riccati equations.
pub fn solve_are_pair(model: &MFModel, tol: f64) -> Result<ArePair> {
    solve_are_pair_with(model, &AreOptions::new(tol))
}

pub fn solve_are_pair_with(model: &MFModel, opts: &AreOptions) -> Result<ArePair> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("tol must be positive".into()));
    }
    let h1 = validate_h1(model, opts.margin)?;
    if !h1.ok {
        return Err(Error::H1Violation(h1.messages.join("; ")));
    }

    let mut h = opts.initial_step;
    let mut attempt = 0;
    let (sat, tau) = loop {
        match saturate(model, opts, h) {
            Err(Error::RiccatiBreakdown { .. }) if attempt < 8 => {
                attempt += 1;
                h *= 0.5;
            }
            other => break other?,
        }
    };

    let scale = residual_scale(model);
    let target = 1e-3 * opts.tol * scale;
    let mut warnings = Vec::new();

    let res_p = |P: &DMatrix<f64>| riccati_residual_p(model, P).ok().map(|r| max_abs(&r));
    let (P, it_p) = match polish(sat.P.clone(), opts.max_newton_iterations, target, res_p, |P| {
        kleinman_p(model, P)
    }) {
        Some(v) => v,
        None => {
            warnings.push("Newton polish of P failed; using saturation value".into());
            (sat.P.clone(), 0)
        }
    };
    let res_pi = |Pi: &DMatrix<f64>| riccati_residual_pi(model, &P, Pi).ok().map(|r| max_abs(&r));
    let (Pi, it_pi) = match polish(sat.Pi.clone(), opts.max_newton_iterations, target, res_pi, |Pi| {
        kleinman_pi(model, &P, Pi)
    }) {
        Some(v) => v,
        None => {
            warnings.push("Newton polish of Pi failed; using saturation value".into());
            (sat.Pi.clone(), 0)
        }
    };

    let residual_p = res_p(&P).unwrap_or(f64::INFINITY);
    let residual_pi = riccati_residual_pi(model, &P, &Pi).map_or(f64::INFINITY, |r| max_abs(&r));
    if residual_p > opts.tol * scale || residual_pi > opts.tol * scale {
        return Err(Error::NoStabilizingSolution {
            horizon: tau,
            derivative: residual_p.max(residual_pi),
        });
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(ArePair {
        P,
        Pi,
        pseudo_horizon: tau,
        newton_iterations: it_p + it_pi,
        residual_p,
        residual_pi,
        warnings,
    })
}

/// Max-norm residuals of the algebraic system at a computed solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErgodicResiduals {
    pub riccati_p: f64,
    pub riccati_pi: f64,
    pub sylvester_p1: f64,
    pub linear_p: f64,
    pub linear_p1: f64,
    pub c0: f64,
    pub gains: f64,
}

impl ErgodicResiduals {
    pub fn max(&self) -> f64 {
        [
            self.riccati_p,
            self.riccati_pi,
            self.sylvester_p1,
            self.linear_p,
            self.linear_p1,
            self.c0,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicSolution {
    #[serde(with = "serde_mat::matrix")]
    pub P: DMatrix<f64>,
    #[serde(with = "serde_mat::matrix")]
    pub Pi: DMatrix<f64>,
    #[serde(with = "serde_mat::matrix")]
    pub P1: DMatrix<f64>,
    #[serde(with = "serde_mat::vector")]
    pub p: DVector<f64>,
    #[serde(with = "serde_mat::vector")]
    pub p1: DVector<f64>,
    pub c0: f64,
    #[serde(with = "serde_mat::matrix")]
    pub Theta: DMatrix<f64>,
    #[serde(with = "serde_mat::matrix")]
    pub ThetaBar: DMatrix<f64>,
    #[serde(with = "serde_mat::vector")]
    pub theta: DVector<f64>,
    /// Hurwitz certificate of `Ahat + B ThetaBar`.
    pub cert_mean: StabilityCertificate,
    /// Mean-square certificate of `(A + B Theta, C + D Theta)`.
    pub cert_ms: StabilityCertificate,
    pub residuals: ErgodicResiduals,
    pub model_fingerprint: String,
    pub warnings: Vec<String>,
}

impl ErgodicSolution {
    pub fn gains(&self) -> Gains {
        Gains {
            Theta: self.Theta.clone(),
            ThetaBar: self.ThetaBar.clone(),
            theta: self.theta.clone(),
        }
    }

    /// Closed-loop mean matrix `Ahat + B ThetaBar`.
    pub fn mean_matrix(&self, model: &MFModel) -> DMatrix<f64> {
        &model.A + &model.Abar + &model.B * &self.ThetaBar
    }

    /// Fixed point of the closed-loop mean, `-(Ahat + B ThetaBar)^-1 (B theta + b)`.
    pub fn stationary_mean(&self, model: &MFModel) -> Result<DVector<f64>> {
        let rhs = -(&model.B * &self.theta + &model.b);
        self.mean_matrix(model)
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Certificate("closed-loop mean matrix is singular".into()))
    }

    /// Ergodic value function `V(x, xbar)` with zero constant term.
    pub fn value(&self, x: &DVector<f64>, xbar: &DVector<f64>) -> f64 {
        let y = x - xbar;
        y.dot(&(&self.P * &y)) + xbar.dot(&(&self.Pi * xbar)) + 2.0 * y.dot(&(&self.P1 * xbar))
            + 2.0 * self.p.dot(xbar)
            + 2.0 * self.p1.dot(&y)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serializes")
    }

    pub fn report_text(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "ergodic solution");
        let _ = writeln!(s, "  c0                      = {:.12}", self.c0);
        let _ = writeln!(s, "  residuals (max-norm)");
        let r = &self.residuals;
        let _ = writeln!(s, "    riccati P             = {:.3e}", r.riccati_p);
        let _ = writeln!(s, "    riccati Pi            = {:.3e}", r.riccati_pi);
        let _ = writeln!(s, "    sylvester P1          = {:.3e}", r.sylvester_p1);
        let _ = writeln!(s, "    linear p              = {:.3e}", r.linear_p);
        let _ = writeln!(s, "    linear p1             = {:.3e}", r.linear_p1);
        let _ = writeln!(s, "    c0 identity           = {:.3e}", r.c0);
        let _ = writeln!(s, "    gain identities       = {:.3e}", r.gains);
        let _ = writeln!(s, "  certificates (smallest witness eigenvalue)");
        let _ = writeln!(s, "    hurwitz Ahat+B ThetaBar      = {:.6e}", self.cert_mean.min_eig);
        let _ = writeln!(s, "    mean-square (A+B Theta, C+D Theta) = {:.6e}", self.cert_ms.min_eig);
        for w in &self.warnings {
            let _ = writeln!(s, "  warning: {w}");
        }
        s
    }
}

/// Solves the full algebraic system `{P, Pi, P1, p, p1, c0}` and certifies the gains.
pub fn solve_ergodic_system(model: &MFModel, tol: f64) -> Result<ErgodicSolution> {
    solve_ergodic_system_with(model, &AreOptions::new(tol))
}

pub fn solve_ergodic_system_with(model: &MFModel, opts: &AreOptions) -> Result<ErgodicSolution> {
    let pair = solve_are_pair_with(model, opts)?;
    let (P, Pi) = (pair.P, pair.Pi);
    let n = model.n;
    let d = model.derived();
    let (B, D) = (&model.B, &model.D);
    let Dt = D.transpose();
    let breakdown = |reason| Error::RiccatiBreakdown { t: 0.0, reason };

    let g0 = model.gains(&P, &Pi, &DVector::zeros(n)).map_err(breakdown)?;
    let closed = &model.A + B * &g0.Theta;
    let noise = &model.C + D * &g0.Theta;
    let closed_mean = &d.Ahat + B * &g0.ThetaBar;
    let cert_ms = certify_mean_square(&closed, &noise).map_err(|r| Error::Certificate(r.to_string()))?;
    let cert_mean = certify_hurwitz(&closed_mean).map_err(|r| Error::Certificate(r.to_string()))?;

    let rhs_p1 = model.C.transpose() * &P * &d.Chat + &model.Q - &P * B * &g0.ThetaBar
        + g0.Theta.transpose() * (&Dt * &P * &d.Chat + &model.S);
    let P1 = solve_sylvester(&closed, &closed_mean, &rhs_p1).map_err(|e| {
        Error::Certificate(format!("P1 Sylvester solve failed although both closed loops are certified: {e}"))
    })?;

    let Psigma = &P * &model.sigma;
    let rhs_p = (&d.Chat + D * &g0.ThetaBar).transpose() * &Psigma
        + g0.ThetaBar.transpose() * &model.r
        + &Pi * &model.b
        + &model.q;
    let p = closed_mean
        .transpose()
        .lu()
        .solve(&(-rhs_p))
        .ok_or_else(|| Error::Certificate("closed-loop mean matrix is singular".into()))?;

    let g = model.gains(&P, &Pi, &p).map_err(breakdown)?;
    let rhs_p1_vec = &P * &model.b
        + model.C.transpose() * &Psigma
        + &model.q
        + (&P1 - &P) * (B * &g.theta + &model.b)
        + g.Theta.transpose() * (&Dt * &Psigma + &model.r);
    let p1 = closed
        .transpose()
        .lu()
        .solve(&(-rhs_p1_vec))
        .ok_or_else(|| Error::Certificate("closed-loop matrix A + B Theta is singular".into()))?;

    let offset = model.control_offset_term(&P, &p);
    let c0 = 2.0 * p.dot(&model.b) + model.sigma.dot(&Psigma) + offset.dot(&g.theta);

    // Residuals: the backward vector field vanishes at the algebraic solution.
    let state = RiccatiState {
        P: P.clone(),
        Pi: Pi.clone(),
        P1: P1.clone(),
        p: p.clone(),
        p1: p1.clone(),
        p0: 0.0,
    };
    let (field, _) = vector_field(model, &state).map_err(breakdown)?;
    let f = model.functionals(&P, &Pi);
    let gain_res = max_abs(&(&f.r_of_p * &g.Theta + &f.s_of_p))
        .max(max_abs(&(&f.r_of_p * &g.ThetaBar + &f.shat_of_p_pi)))
        .max((&f.r_of_p * &g.theta + &offset).amax());
    let residuals = ErgodicResiduals {
        riccati_p: max_abs(&field.P),
        riccati_pi: max_abs(&field.Pi),
        sylvester_p1: max_abs(&field.P1),
        linear_p: field.p.amax(),
        linear_p1: field.p1.amax(),
        c0: (field.p0 - c0).abs(),
        gains: gain_res,
    };

    Ok(ErgodicSolution {
        P,
        Pi,
        P1,
        p,
        p1,
        c0,
        Theta: g.Theta,
        ThetaBar: g.ThetaBar,
        theta: g.theta,
        cert_mean,
        cert_ms,
        residuals,
        model_fingerprint: format!("{:016x}", model.fingerprint()),
        warnings: pair.warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticOptimum {
    #[serde(with = "serde_mat::vector")]
    pub xstar: DVector<f64>,
    #[serde(with = "serde_mat::vector")]
    pub ustar: DVector<f64>,
    /// Multiplier of the constraint `Ahat x + B u + b = 0`.
    #[serde(with = "serde_mat::vector")]
    pub multiplier: DVector<f64>,
    pub objective: f64,
    pub constraint_residual: f64,
    /// `|u* - (ThetaBar x* + theta)|`
    pub feedback_identity_residual: f64,
    /// `|x* + (Ahat + B ThetaBar)^-1 (B theta + b)|`
    pub fixed_point_identity_residual: f64,
}

/// Static objective `L(x, u)`, weighted by the ergodic `P`.
pub fn static_objective(model: &MFModel, P: &DMatrix<f64>, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
    let d = model.derived();
    let noise = &d.Chat * x + &model.D * u + &model.sigma;
    x.dot(&(&d.Qhat * x)) + 2.0 * u.dot(&(&model.S * x)) + u.dot(&(&model.R * u)) + 2.0 * model.q.dot(x)
        + 2.0 * model.r.dot(u)
        + noise.dot(&(P * &noise))
}

/// Equality-constrained quadratic program solved through its KKT system.
pub fn static_optimum(model: &MFModel, erg: &ErgodicSolution) -> Result<StaticOptimum> {
    let (n, m) = (model.n, model.m);
    let d = model.derived();
    let P = &erg.P;
    let Dt = model.D.transpose();
    let hxx = (&d.Qhat + d.Chat.transpose() * P * &d.Chat) * 2.0;
    let hux = (&model.S + &Dt * P * &d.Chat) * 2.0;
    let huu = (&model.R + &Dt * P * &model.D) * 2.0;
    let gx = (&model.q + d.Chat.transpose() * (P * &model.sigma)) * 2.0;
    let gu = (&model.r + &Dt * (P * &model.sigma)) * 2.0;

    let size = 2 * n + m;
    let mut kkt = DMatrix::zeros(size, size);
    kkt.view_mut((0, 0), (n, n)).copy_from(&hxx);
    kkt.view_mut((n, 0), (m, n)).copy_from(&hux);
    kkt.view_mut((0, n), (n, m)).copy_from(&hux.transpose());
    kkt.view_mut((n, n), (m, m)).copy_from(&huu);
    kkt.view_mut((n + m, 0), (n, n)).copy_from(&d.Ahat);
    kkt.view_mut((n + m, n), (n, m)).copy_from(&model.B);
    kkt.view_mut((0, n + m), (n, n)).copy_from(&d.Ahat.transpose());
    kkt.view_mut((n, n + m), (m, n)).copy_from(&model.B.transpose());
    let mut rhs = DVector::zeros(size);
    rhs.rows_mut(0, n).copy_from(&(-gx));
    rhs.rows_mut(n, m).copy_from(&(-gu));
    rhs.rows_mut(n + m, n).copy_from(&(-&model.b));

    let z = kkt.lu().solve(&rhs).ok_or(Error::SingularKkt)?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularKkt);
    }
    let xstar = z.rows(0, n).into_owned();
    let ustar = z.rows(n, m).into_owned();
    let multiplier = z.rows(n + m, n).into_owned();

    let constraint_residual = (&d.Ahat * &xstar + &model.B * &ustar + &model.b).amax();
    let feedback_identity_residual = (&ustar - (&erg.ThetaBar * &xstar + &erg.theta)).amax();
    let x_fixed = erg.stationary_mean(model)?;
    let fixed_point_identity_residual = (&xstar - x_fixed).amax();
    Ok(StaticOptimum {
        objective: static_objective(model, P, &xstar, &ustar),
        xstar,
        ustar,
        multiplier,
        constraint_residual,
        feedback_identity_residual,
        fixed_point_identity_residual,
    })
}

/// Left-hand side of the stationary Bellman equation at `(x, xbar)` with the
/// quadratic value function and feedback of `erg`. The measure integral is
/// evaluated at the mean, which is exact for affine drifts.
pub fn bellman_lhs(model: &MFModel, erg: &ErgodicSolution, x: &DVector<f64>, xbar: &DVector<f64>) -> f64 {
    let g = erg.gains();
    let u = g.control(x, xbar);
    let u_mean = g.control(xbar, xbar);
    let drift = &model.A * x + &model.Abar * xbar + &model.B * &u + &model.b;
    let drift_mean = &model.A * xbar + &model.Abar * xbar + &model.B * &u_mean + &model.b;
    let diffusion = &model.C * x + &model.Cbar * xbar + &model.D * &u + &model.sigma;

    let y = x - xbar;
    let p_sym = &erg.P + erg.P.transpose();
    let pi_sym = &erg.Pi + erg.Pi.transpose();
    let grad_x = &p_sym * &y + &erg.P1 * xbar * 2.0 + &erg.p1 * 2.0;
    let grad_xbar = -(&p_sym * &y) + &pi_sym * xbar + erg.P1.transpose() * &y * 2.0 - &erg.P1 * xbar * 2.0
        + &erg.p * 2.0
        - &erg.p1 * 2.0;
    // (1/2) tr(s s' D_x^2 V) with D_x^2 V = P + P'
    let second_order = 0.5 * diffusion.dot(&(&p_sym * &diffusion));

    drift.dot(&grad_x) + second_order + model.running_cost(x, xbar, &u) + drift_mean.dot(&grad_xbar)
}

/// Max over seeded samples in `[-5, 5]^{2n}` of `|LHS - c0|`.
pub fn bellman_residual(model: &MFModel, erg: &ErgodicSolution, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.n;
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let x = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        let xbar = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        worst = worst.max((bellman_lhs(model, erg, &x, &xbar) - erg.c0).abs());
    }
    worst
}
