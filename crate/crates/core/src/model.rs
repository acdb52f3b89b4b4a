//! Problem data for the mean-field LQ problem and checks of the standing assumptions.
//!
//! State equation (one-dimensional Brownian motion `W`):
//!
//! ```text
//! dX = (A X + Abar E[X] + B u + b) dt + (C X + Cbar E[X] + D u + sigma) dW
//! ```
//!
//! Running cost:
//!
//! ```text
//! f(x, xbar, u) = x'Qx + 2u'Sx + u'Ru + 2q'x + 2r'u + xbar'Qbar xbar
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, asymmetry, symmetrize, sym_eig_min};
use crate::serde_mat;

/// Default positivity margin for "positive definite" checks.
pub const DEFAULT_MARGIN: f64 = 1e-9;
/// Asymmetry below this is treated as round-off and removed silently.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Asymmetry above this is rejected as a user error.
pub const SYMMETRY_REJECT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MFModel {
    pub n: usize,
    pub m: usize,
    #[serde(with = "serde_mat::matrix")]
    pub A: DMatrix<f64>,
    #[serde(with = "serde_mat::matrix")]
    pub Abar: DMatrix<f64>,
    #[serde(with = "serde_mat::matrix")]
    pub B: DMatrix<f64>,
    #[serde(with = "serde_mat::matrix")]
    pub C: DMatrix<f64>,
    #[serde(with = "serde_mat::matrix")]
    pub Cbar: DMatrix<f64>,
    #[serde(with = "serde_mat::matrix")]
    pub D: DMatrix<f64>,
    #[serde(with = "serde_mat::vector")]
    pub b: DVector<f64>,
    #[serde(with = "serde_mat::vector")]
    pub sigma: DVector<f64>,
    #[serde(with = "serde_mat::matrix")]
    pub Q: DMatrix<f64>,
    #[serde(with = "serde_mat::matrix")]
    pub Qbar: DMatrix<f64>,
    #[serde(with = "serde_mat::matrix")]
    pub S: DMatrix<f64>,
    #[serde(with = "serde_mat::matrix")]
    pub R: DMatrix<f64>,
    #[serde(with = "serde_mat::vector")]
    pub q: DVector<f64>,
    #[serde(with = "serde_mat::vector")]
    pub r: DVector<f64>,
}

/// `Ahat = A + Abar`, `Chat = C + Cbar`, `Qhat = Q + Qbar`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedForms {
    pub Ahat: DMatrix<f64>,
    pub Chat: DMatrix<f64>,
    pub Qhat: DMatrix<f64>,
}

/// The shorthand functionals evaluated at a pair `(P, Pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Functionals {
    /// `PA + A'P + C'PC + Q`
    pub q_of_p: DMatrix<f64>,
    /// `Pi Ahat + Ahat' Pi + Chat' P Chat + Qhat`
    pub qhat_of_p_pi: DMatrix<f64>,
    /// `B'P + D'PC + S`
    pub s_of_p: DMatrix<f64>,
    /// `B'Pi + D'P Chat + S`
    pub shat_of_p_pi: DMatrix<f64>,
    /// `R + D'PD`
    pub r_of_p: DMatrix<f64>,
}

/// Feedback law `u = Theta (x - xbar) + ThetaBar xbar + theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    #[serde(with = "serde_mat::matrix")]
    pub Theta: DMatrix<f64>,
    #[serde(with = "serde_mat::matrix")]
    pub ThetaBar: DMatrix<f64>,
    #[serde(with = "serde_mat::vector")]
    pub theta: DVector<f64>,
}

impl Gains {
    pub fn control(&self, x: &DVector<f64>, xbar: &DVector<f64>) -> DVector<f64> {
        &self.Theta * (x - xbar) + &self.ThetaBar * xbar + &self.theta
    }
}

impl MFModel {
    /// All-zero model of the given dimensions.
    pub fn zeros(n: usize, m: usize) -> Self {
        let z = |r, c| DMatrix::zeros(r, c);
        MFModel {
            n,
            m,
            A: z(n, n),
            Abar: z(n, n),
            B: z(n, m),
            C: z(n, n),
            Cbar: z(n, n),
            D: z(n, m),
            b: DVector::zeros(n),
            sigma: DVector::zeros(n),
            Q: z(n, n),
            Qbar: z(n, n),
            S: z(m, n),
            R: z(m, m),
            q: DVector::zeros(n),
            r: DVector::zeros(m),
        }
    }

    /// Parses a problem document and normalizes it. Returns the model and any
    /// symmetrization warnings.
    pub fn from_json_str(text: &str) -> Result<(Self, Vec<String>)> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut model: MFModel = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Parse {
                path: if path.is_empty() { ".".into() } else { path },
                message: e.into_inner().to_string(),
            }
        })?;
        let warnings = model.normalize()?;
        Ok((model, warnings))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    /// Checks dimensions and symmetrizes `Q`, `Qbar`, `R`.
    pub fn normalize(&mut self) -> Result<Vec<String>> {
        self.check_dimensions()?;
        let mut warnings = Vec::new();
        for (name, mat) in [("Q", &mut self.Q), ("Qbar", &mut self.Qbar), ("R", &mut self.R)] {
            let asym = asymmetry(mat);
            if asym > SYMMETRY_REJECT {
                return Err(Error::NotSymmetric {
                    field: name.into(),
                    asymmetry: asym,
                });
            }
            if asym > SYMMETRY_TOL {
                let msg = format!("`{name}` symmetrized (max asymmetry {asym:.3e})");
                log::warn!("{msg}");
                warnings.push(msg);
            }
            *mat = symmetrize(mat);
        }
        Ok(warnings)
    }

    pub fn check_dimensions(&self) -> Result<()> {
        let (n, m) = (self.n, self.m);
        if n == 0 {
            return Err(Error::dim("n", "positive integer", 0));
        }
        if m == 0 {
            return Err(Error::dim("m", "positive integer", 0));
        }
        let mats: [(&str, &DMatrix<f64>, (usize, usize)); 10] = [
            ("A", &self.A, (n, n)),
            ("Abar", &self.Abar, (n, n)),
            ("B", &self.B, (n, m)),
            ("C", &self.C, (n, n)),
            ("Cbar", &self.Cbar, (n, n)),
            ("D", &self.D, (n, m)),
            ("Q", &self.Q, (n, n)),
            ("Qbar", &self.Qbar, (n, n)),
            ("S", &self.S, (m, n)),
            ("R", &self.R, (m, m)),
        ];
        for (name, mat, (r, c)) in mats {
            if mat.shape() != (r, c) {
                return Err(Error::dim(name, format!("{r}x{c}"), format!("{}x{}", mat.nrows(), mat.ncols())));
            }
        }
        let vecs: [(&str, &DVector<f64>, usize); 4] = [
            ("b", &self.b, n),
            ("sigma", &self.sigma, n),
            ("q", &self.q, n),
            ("r", &self.r, m),
        ];
        for (name, v, len) in vecs {
            if v.len() != len {
                return Err(Error::dim(name, format!("length {len}"), format!("length {}", v.len())));
            }
        }
        let all_finite = self
            .coefficient_slices()
            .iter()
            .all(|s| s.iter().all(|x| x.is_finite()));
        if !all_finite {
            return Err(Error::InvalidArgument("coefficients must be finite".into()));
        }
        Ok(())
    }

    fn coefficient_slices(&self) -> [&[f64]; 14] {
        [
            self.A.as_slice(),
            self.Abar.as_slice(),
            self.B.as_slice(),
            self.C.as_slice(),
            self.Cbar.as_slice(),
            self.D.as_slice(),
            self.b.as_slice(),
            self.sigma.as_slice(),
            self.Q.as_slice(),
            self.Qbar.as_slice(),
            self.S.as_slice(),
            self.R.as_slice(),
            self.q.as_slice(),
            self.r.as_slice(),
        ]
    }

    /// Largest absolute coefficient; used to scale residual tolerances.
    pub fn coefficient_scale(&self) -> f64 {
        self.coefficient_slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0, |acc: f64, x| acc.max(x.abs()))
    }

    /// FNV-1a hash over dimensions and coefficient bit patterns.
    pub fn fingerprint(&self) -> u64 {
        const PRIME: u64 = 0x100000001b3;
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |x: u64| {
            for byte in x.to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(PRIME);
            }
        };
        eat(self.n as u64);
        eat(self.m as u64);
        for s in self.coefficient_slices() {
            for x in s {
                eat(x.to_bits());
            }
        }
        h
    }

    /// True when `b = sigma = q = r = 0`.
    pub fn is_homogeneous(&self) -> bool {
        [&self.b, &self.sigma, &self.q, &self.r]
            .iter()
            .all(|v| v.iter().all(|x| *x == 0.0))
    }

    pub fn derived(&self) -> DerivedForms {
        DerivedForms {
            Ahat: &self.A + &self.Abar,
            Chat: &self.C + &self.Cbar,
            Qhat: &self.Q + &self.Qbar,
        }
    }

    pub fn functionals(&self, P: &DMatrix<f64>, Pi: &DMatrix<f64>) -> Functionals {
        let DerivedForms { Ahat, Chat, Qhat } = self.derived();
        let Dt = self.D.transpose();
        let q_of_p = P * &self.A + self.A.transpose() * P + self.C.transpose() * P * &self.C + &self.Q;
        let qhat_of_p_pi = Pi * &Ahat + Ahat.transpose() * Pi + Chat.transpose() * P * &Chat + Qhat;
        Functionals {
            q_of_p: symmetrize(&q_of_p),
            qhat_of_p_pi: symmetrize(&qhat_of_p_pi),
            s_of_p: self.B.transpose() * P + &Dt * P * &self.C + &self.S,
            shat_of_p_pi: self.B.transpose() * Pi + &Dt * P * Chat + &self.S,
            r_of_p: symmetrize(&(&self.R + &Dt * P * &self.D)),
        }
    }

    /// `B'p + D'P sigma + r`, the affine part of the control first-order condition.
    pub fn control_offset_term(&self, P: &DMatrix<f64>, p: &DVector<f64>) -> DVector<f64> {
        self.B.transpose() * p + self.D.transpose() * (P * &self.sigma) + &self.r
    }

    /// Gains `Theta = -R(P)^-1 S(P)`, `ThetaBar = -R(P)^-1 Shat(P,Pi)`,
    /// `theta = -R(P)^-1 (B'p + D'P sigma + r)`.
    ///
    /// Fails when `R(P)` is not positive definite.
    pub fn gains(&self, P: &DMatrix<f64>, Pi: &DMatrix<f64>, p: &DVector<f64>) -> Result<Gains, String> {
        let f = self.functionals(P, Pi);
        let chol = f
            .r_of_p
            .clone()
            .cholesky()
            .ok_or_else(|| "R + D'PD is not positive definite".to_string())?;
        Ok(Gains {
            Theta: -chol.solve(&f.s_of_p),
            ThetaBar: -chol.solve(&f.shat_of_p_pi),
            theta: -chol.solve(&self.control_offset_term(P, p)),
        })
    }

    /// Running cost `f(x, xbar, u)`.
    pub fn running_cost(&self, x: &DVector<f64>, xbar: &DVector<f64>, u: &DVector<f64>) -> f64 {
        x.dot(&(&self.Q * x))
            + 2.0 * u.dot(&(&self.S * x))
            + u.dot(&(&self.R * u))
            + 2.0 * self.q.dot(x)
            + 2.0 * self.r.dot(u)
            + xbar.dot(&(&self.Qbar * xbar))
    }
}

/// Outcome of the (H1) check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H1Report {
    pub ok: bool,
    pub r_min_eig: f64,
    /// Smallest eigenvalues of `Q - S'R^-1 S` and `Q + Qbar - S'R^-1 S`;
    /// absent when `R` is not positive definite.
    pub min_eigs: Option<(f64, f64)>,
    pub messages: Vec<String>,
}

pub fn validate_h1(model: &MFModel, margin: f64) -> Result<H1Report> {
    model.check_dimensions()?;
    for (name, mat) in [("Q", &model.Q), ("Qbar", &model.Qbar), ("R", &model.R)] {
        let asym = asymmetry(mat);
        if asym > SYMMETRY_REJECT {
            return Err(Error::NotSymmetric {
                field: name.into(),
                asymmetry: asym,
            });
        }
    }
    let r_sym = symmetrize(&model.R);
    let r_min_eig = sym_eig_min(&r_sym);
    let mut messages = Vec::new();
    if !(r_min_eig > margin) {
        messages.push(format!(
            "R is not positive definite: smallest eigenvalue {r_min_eig:.6e} <= margin {margin:.1e}"
        ));
        return Ok(H1Report {
            ok: false,
            r_min_eig,
            min_eigs: None,
            messages,
        });
    }
    let chol = r_sym.cholesky().expect("R positive definite");
    let s_rinv_s = model.S.transpose() * chol.solve(&model.S);
    let plain = symmetrize(&model.Q) - &s_rinv_s;
    let with_mean = symmetrize(&(&model.Q + &model.Qbar)) - &s_rinv_s;
    let e1 = sym_eig_min(&plain);
    let e2 = sym_eig_min(&with_mean);
    if !(e1 > margin) {
        messages.push(format!(
            "Q - S'R^-1 S is not positive definite: smallest eigenvalue {e1:.6e} <= margin {margin:.1e}"
        ));
    }
    if !(e2 > margin) {
        messages.push(format!(
            "Q + Qbar - S'R^-1 S is not positive definite: smallest eigenvalue {e2:.6e} <= margin {margin:.1e}"
        ));
    }
    Ok(H1Report {
        ok: e1 > margin && e2 > margin,
        r_min_eig,
        min_eigs: Some((e1, e2)),
        messages,
    })
}

/// Full assumption report: (H1) on the data, (H2) certified on the computed ergodic gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub h1_ok: bool,
    pub h1_min_eigs: Option<(f64, f64)>,
    pub r_min_eig: f64,
    pub h2_ode_ok: bool,
    #[serde(with = "serde_mat::opt_matrix")]
    pub h2_ode_gain: Option<DMatrix<f64>>,
    pub h2_sde_ok: bool,
    #[serde(with = "serde_mat::opt_matrix")]
    pub h2_sde_gain: Option<DMatrix<f64>>,
    pub messages: Vec<String>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.h1_ok && self.h2_ode_ok && self.h2_sde_ok
    }
}

/// Checks (H1), then solves the ergodic system and certifies both stabilizers.
pub fn validate(model: &MFModel, margin: f64, tol: f64) -> Result<ValidationReport> {
    let h1 = validate_h1(model, margin)?;
    let mut report = ValidationReport {
        h1_ok: h1.ok,
        h1_min_eigs: h1.min_eigs,
        r_min_eig: h1.r_min_eig,
        h2_ode_ok: false,
        h2_ode_gain: None,
        h2_sde_ok: false,
        h2_sde_gain: None,
        messages: h1.messages,
    };
    if !h1.ok {
        report.messages.push("(H2) not checked because (H1) failed".into());
        return Ok(report);
    }
    match crate::ergodic::solve_ergodic_system(model, tol) {
        Ok(erg) => {
            report.h2_ode_ok = true;
            report.h2_ode_gain = Some(erg.ThetaBar.clone());
            report.h2_sde_ok = true;
            report.h2_sde_gain = Some(erg.Theta.clone());
        }
        Err(e) => {
            let DerivedForms { Ahat, .. } = model.derived();
            report.messages.push(format!("(H2) could not be certified: {e}"));
            // Report which half failed when the ARE pair itself is available.
            if let Ok(pair) = crate::ergodic::solve_are_pair(model, tol) {
                let g = model.gains(&pair.P, &pair.Pi, &DVector::zeros(model.n));
                if let Ok(g) = g {
                    report.h2_ode_ok = linalg::certify_hurwitz(&(Ahat + &model.B * &g.ThetaBar)).is_ok();
                    report.h2_sde_ok = linalg::certify_mean_square(
                        &(&model.A + &model.B * &g.Theta),
                        &(&model.C + &model.D * &g.Theta),
                    )
                    .is_ok();
                    if report.h2_ode_ok {
                        report.h2_ode_gain = Some(g.ThetaBar);
                    }
                    if report.h2_sde_ok {
                        report.h2_sde_gain = Some(g.Theta);
                    }
                }
            }
        }
    }
    Ok(report)
}
