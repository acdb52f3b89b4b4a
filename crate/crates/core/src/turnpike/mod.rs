//! Turnpike experiments: convergence of finite-horizon quantities to their
//! ergodic counterparts, the two-sided deviation profile of the optimal pair
//! and the Cesàro limit of the value.

mod fit;

pub use fit::{fit_exponential, fit_two_sided, ExpFit, FitRefusal, TwoSidedFit, FIT_FLOOR, MIN_FIT_POINTS};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ergodic::{solve_ergodic_system, ErgodicSolution};
use crate::error::{Error, Result};
use crate::finite::{default_steps, integrate_riccati_system, value_function, FiniteHorizonSolution};
use crate::linalg::frobenius;
use crate::mfsim::propagate_pair_moments;
use crate::model::MFModel;
use crate::serde_mat::{self, fmt_f64};

/// Fraction of the horizon used by one-sided fits; the terminal layer beyond it is excluded.
pub const ONE_SIDED_WINDOW: f64 = 0.8;

/// Outcome of fitting one named series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitEntry {
    pub quantity: String,
    pub fit: Option<ExpFit>,
    pub refusal: Option<FitRefusal>,
}

impl FitEntry {
    fn new(quantity: &str, result: std::result::Result<ExpFit, FitRefusal>) -> Self {
        let (fit, refusal) = match result {
            Ok(f) => (Some(f), None),
            Err(r) => (None, Some(r)),
        };
        FitEntry {
            quantity: quantity.into(),
            fit,
            refusal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSidedEntry {
    pub quantity: String,
    pub fit: Option<TwoSidedFit>,
    pub refusal: Option<FitRefusal>,
}

/// Names of the gain-gap series, in the order of [`GainConvergence::series`].
pub const GAIN_SERIES: [&str; 6] = ["P_gap", "Pi_gap", "Theta_gap", "ThetaBar_gap", "theta_gap", "p_gap"];

/// Frobenius-norm gaps between finite-horizon and ergodic quantities on the
/// finite-horizon grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainConvergence {
    pub horizon: f64,
    pub grid: Vec<f64>,
    pub P_gap: Vec<f64>,
    pub Pi_gap: Vec<f64>,
    pub Theta_gap: Vec<f64>,
    pub ThetaBar_gap: Vec<f64>,
    pub theta_gap: Vec<f64>,
    pub p_gap: Vec<f64>,
    /// Fits against `s = T - t` over `t in [0, 0.8 T]`.
    pub fits: Vec<FitEntry>,
}

impl GainConvergence {
    pub fn series(&self) -> [(&'static str, &Vec<f64>); 6] {
        let [a, b, c, d, e, f] = GAIN_SERIES;
        [
            (a, &self.P_gap),
            (b, &self.Pi_gap),
            (c, &self.Theta_gap),
            (d, &self.ThetaBar_gap),
            (e, &self.theta_gap),
            (f, &self.p_gap),
        ]
    }

    pub fn fit(&self, quantity: &str) -> Option<&ExpFit> {
        self.fits.iter().find(|f| f.quantity == quantity)?.fit.as_ref()
    }
}

fn check_same_model(finite: &FiniteHorizonSolution, erg: &ErgodicSolution) -> Result<()> {
    if format!("{:016x}", finite.model.fingerprint()) != erg.model_fingerprint {
        return Err(Error::ModelMismatch(
            "finite-horizon and ergodic solutions come from different models".into(),
        ));
    }
    Ok(())
}

pub fn gain_convergence(finite: &FiniteHorizonSolution, erg: &ErgodicSolution) -> Result<GainConvergence> {
    check_same_model(finite, erg)?;
    let vec_gap = |a: &DVector<f64>, b: &DVector<f64>| (a - b).norm();
    let horizon = finite.horizon;
    let mut out = GainConvergence {
        horizon,
        grid: finite.grid.clone(),
        P_gap: finite.P.iter().map(|x| frobenius(&(x - &erg.P))).collect(),
        Pi_gap: finite.Pi.iter().map(|x| frobenius(&(x - &erg.Pi))).collect(),
        Theta_gap: finite.Theta.iter().map(|x| frobenius(&(x - &erg.Theta))).collect(),
        ThetaBar_gap: finite.ThetaBar.iter().map(|x| frobenius(&(x - &erg.ThetaBar))).collect(),
        theta_gap: finite.theta.iter().map(|x| vec_gap(x, &erg.theta)).collect(),
        p_gap: finite.p.iter().map(|x| vec_gap(x, &erg.p)).collect(),
        fits: Vec::new(),
    };
    let window = ((1.0 - ONE_SIDED_WINDOW) * horizon, horizon);
    out.fits = out
        .series()
        .iter()
        .map(|(name, values)| {
            let pts: Vec<(f64, f64)> = out.grid.iter().map(|t| horizon - t).zip(values.iter().copied()).collect();
            FitEntry::new(name, fit_exponential(&pts, window))
        })
        .collect();
    Ok(out)
}

/// Second-moment deviation of the optimal pair, with two-sided fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDeviation {
    pub horizon: f64,
    pub grid: Vec<f64>,
    pub state_gap: Vec<f64>,
    pub control_gap: Vec<f64>,
    #[serde(with = "serde_mat::vectors")]
    pub mean_finite: Vec<DVector<f64>>,
    #[serde(with = "serde_mat::vectors")]
    pub mean_ergodic: Vec<DVector<f64>>,
    pub midpoint_t: f64,
    pub midpoint_state_gap: f64,
    pub midpoint_control_gap: f64,
    pub fits: Vec<TwoSidedEntry>,
}

impl PairDeviation {
    pub fn fit(&self, quantity: &str) -> Option<&TwoSidedFit> {
        self.fits.iter().find(|f| f.quantity == quantity)?.fit.as_ref()
    }

    /// Value of the state gap at the grid point nearest `t`.
    pub fn state_gap_at(&self, t: f64) -> f64 {
        self.state_gap[nearest(&self.grid, t)]
    }

    pub fn control_gap_at(&self, t: f64) -> f64 {
        self.control_gap[nearest(&self.grid, t)]
    }
}

fn nearest(grid: &[f64], t: f64) -> usize {
    grid.iter()
        .enumerate()
        .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
        .map_or(0, |(k, _)| k)
}

/// Uniform grid on `[0, T]` with `intervals + 1` points.
pub fn uniform_grid(horizon: f64, intervals: usize) -> Vec<f64> {
    (0..=intervals).map(|k| horizon * k as f64 / intervals as f64).collect()
}

pub fn pair_deviation(
    model: &MFModel,
    finite: &FiniteHorizonSolution,
    erg: &ErgodicSolution,
    x0_finite: &DVector<f64>,
    x0_erg: &DVector<f64>,
    grid: &[f64],
) -> Result<PairDeviation> {
    check_same_model(finite, erg)?;
    let pm = propagate_pair_moments(model, finite, erg, x0_finite, x0_erg, grid)?;
    let horizon = finite.horizon;
    let mid = nearest(grid, 0.5 * horizon);
    let two_sided = |name: &str, values: &[f64]| {
        let pts: Vec<(f64, f64)> = grid.iter().copied().zip(values.iter().copied()).collect();
        let (fit, refusal) = match fit_two_sided(&pts, horizon) {
            Ok(f) => (Some(f), None),
            Err(r) => (None, Some(r)),
        };
        TwoSidedEntry {
            quantity: name.into(),
            fit,
            refusal,
        }
    };
    let fits = vec![two_sided("state_gap", &pm.state_gap), two_sided("control_gap", &pm.control_gap)];
    Ok(PairDeviation {
        horizon,
        grid: grid.to_vec(),
        midpoint_t: grid[mid],
        midpoint_state_gap: pm.state_gap[mid],
        midpoint_control_gap: pm.control_gap[mid],
        mean_finite: (0..grid.len()).map(|k| pm.mean_finite(k)).collect(),
        mean_ergodic: (0..grid.len()).map(|k| pm.mean_ergodic(k)).collect(),
        state_gap: pm.state_gap,
        control_gap: pm.control_gap,
        fits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CesaroRow {
    pub horizon: f64,
    pub value: f64,
    pub value_over_horizon: f64,
    pub c0: f64,
    pub gap: f64,
    /// `T * gap`, bounded when the value differs from `c0 T` by O(1).
    pub scaled_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CesaroTable {
    pub rows: Vec<CesaroRow>,
    /// Gaps are non-increasing along the horizon ladder.
    pub monotone: bool,
    /// `max T gap <= 2 median T gap`; absent with fewer than two horizons.
    pub bounded: Option<bool>,
    pub scaled_gap_max: f64,
    pub scaled_gap_median: f64,
    /// Limit of `V_T / T` assuming `c + K / T` through the last two rows.
    pub extrapolated: Option<f64>,
    pub warnings: Vec<String>,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `V_T(x) / T` against the ergodic constant over a ladder of horizons.
///
/// Each horizon is an independent solve with the default step count and runs
/// in parallel; rows keep the order of `horizons`.
pub fn cesaro_convergence(model: &MFModel, erg: &ErgodicSolution, x: &DVector<f64>, horizons: &[f64]) -> Result<CesaroTable> {
    if horizons.is_empty() {
        return Err(Error::InvalidArgument("horizon list is empty".into()));
    }
    if horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("horizons must be strictly ascending".into()));
    }
    if format!("{:016x}", model.fingerprint()) != erg.model_fingerprint {
        return Err(Error::ModelMismatch("ergodic solution comes from a different model".into()));
    }
    let values = horizons
        .par_iter()
        .map(|&t| {
            let sol = integrate_riccati_system(model, t, default_steps(t))?;
            Ok(value_function(&sol, x)?.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    let c0 = erg.c0;
    let rows: Vec<CesaroRow> = horizons
        .iter()
        .zip(&values)
        .map(|(&t, &v)| {
            let gap = (v / t - c0).abs();
            CesaroRow {
                horizon: t,
                value: v,
                value_over_horizon: v / t,
                c0,
                gap,
                scaled_gap: t * gap,
            }
        })
        .collect();
    let scaled: Vec<f64> = rows.iter().map(|r| r.scaled_gap).collect();
    let scaled_gap_max = scaled.iter().copied().fold(0.0, f64::max);
    let scaled_gap_median = median(&scaled);
    let mut warnings = Vec::new();
    let bounded = if rows.len() < 2 {
        warnings.push("single horizon: boundedness of T*gap not checked".to_string());
        None
    } else {
        Some(scaled_gap_max <= 2.0 * scaled_gap_median)
    };
    let monotone = rows.windows(2).all(|w| w[1].gap <= w[0].gap);
    let extrapolated = (rows.len() >= 2).then(|| {
        let (a, b) = (&rows[rows.len() - 2], &rows[rows.len() - 1]);
        (b.horizon * b.value_over_horizon - a.horizon * a.value_over_horizon) / (b.horizon - a.horizon)
    });
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(CesaroTable {
        rows,
        monotone,
        bounded,
        scaled_gap_max,
        scaled_gap_median,
        extrapolated,
        warnings,
    })
}

/// Parameters of a full turnpike experiment.
#[derive(Debug, Clone)]
pub struct TurnpikeConfig {
    pub horizon: f64,
    pub steps: usize,
    pub x0_finite: DVector<f64>,
    pub x0_erg: DVector<f64>,
    /// Horizons of the Cesàro ladder; empty skips it.
    pub horizons: Vec<f64>,
    pub tol: f64,
    /// Intervals of the pair-deviation grid.
    pub report_intervals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnpikeReport {
    pub model_fingerprint: String,
    pub horizon: f64,
    pub steps: usize,
    pub x0_finite: Vec<f64>,
    pub x0_erg: Vec<f64>,
    pub c0: f64,
    pub gains: GainConvergence,
    pub pair: PairDeviation,
    pub cesaro: Option<CesaroTable>,
    pub warnings: Vec<String>,
}

pub fn run_turnpike(model: &MFModel, cfg: &TurnpikeConfig) -> Result<TurnpikeReport> {
    for (name, x) in [("x0_finite", &cfg.x0_finite), ("x0_erg", &cfg.x0_erg)] {
        if x.len() != model.n {
            return Err(Error::dim(name, format!("length {}", model.n), format!("length {}", x.len())));
        }
    }
    let erg = solve_ergodic_system(model, cfg.tol)?;
    let finite = integrate_riccati_system(model, cfg.horizon, cfg.steps)?;
    let gains = gain_convergence(&finite, &erg)?;
    let grid = uniform_grid(cfg.horizon, cfg.report_intervals.max(1));
    let pair = pair_deviation(model, &finite, &erg, &cfg.x0_finite, &cfg.x0_erg, &grid)?;
    let cesaro = if cfg.horizons.is_empty() {
        None
    } else {
        Some(cesaro_convergence(model, &erg, &cfg.x0_finite, &cfg.horizons)?)
    };
    let mut warnings = erg.warnings.clone();
    if let Some(c) = &cesaro {
        warnings.extend(c.warnings.iter().cloned());
    }
    Ok(TurnpikeReport {
        model_fingerprint: erg.model_fingerprint.clone(),
        horizon: cfg.horizon,
        steps: cfg.steps,
        x0_finite: cfg.x0_finite.iter().copied().collect(),
        x0_erg: cfg.x0_erg.iter().copied().collect(),
        c0: erg.c0,
        gains,
        pair,
        cesaro,
        warnings,
    })
}

fn two_column_csv(grid: &[f64], values: &[f64]) -> String {
    let mut out = String::from("t,value\n");
    for (t, v) in grid.iter().zip(values) {
        out.push_str(&fmt_f64(*t));
        out.push(',');
        out.push_str(&fmt_f64(*v));
        out.push('\n');
    }
    out
}

impl TurnpikeReport {
    /// True when any number in the report is NaN or infinite.
    pub fn has_non_finite(&self) -> bool {
        let json = serde_json::to_value(self).expect("report serializes");
        fn walk(v: &serde_json::Value) -> bool {
            match v {
                serde_json::Value::Null => true,
                serde_json::Value::Array(a) => a.iter().any(walk),
                serde_json::Value::Object(o) => o
                    .iter()
                    .any(|(k, v)| !(v.is_null() && matches!(k.as_str(), "fit" | "refusal" | "flag" | "bounded" | "extrapolated" | "cesaro")) && walk(v)),
                _ => false,
            }
        }
        walk(&json)
    }

    /// File names produced by [`TurnpikeReport::series_csv`].
    pub fn series_file_names(with_cesaro: bool) -> Vec<String> {
        let mut names: Vec<String> = GAIN_SERIES.iter().map(|n| format!("{n}.csv")).collect();
        names.push("state_gap.csv".into());
        names.push("control_gap.csv".into());
        if with_cesaro {
            names.push("cesaro.csv".into());
        }
        names
    }

    /// One `(file name, CSV)` pair per series, each with columns `t, value`
    /// (`cesaro.csv` has one row per horizon instead).
    pub fn series_csv(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .gains
            .series()
            .iter()
            .map(|(name, values)| (format!("{name}.csv"), two_column_csv(&self.gains.grid, values)))
            .collect();
        out.push(("state_gap.csv".into(), two_column_csv(&self.pair.grid, &self.pair.state_gap)));
        out.push(("control_gap.csv".into(), two_column_csv(&self.pair.grid, &self.pair.control_gap)));
        if let Some(c) = &self.cesaro {
            let mut s = String::from("T,value_over_T,c0,gap,scaled_gap\n");
            for r in &c.rows {
                s.push_str(&[r.horizon, r.value_over_horizon, r.c0, r.gap, r.scaled_gap].map(fmt_f64).join(","));
                s.push('\n');
            }
            out.push(("cesaro.csv".into(), s));
        }
        out
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn report_text(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "turnpike report (T = {}, c0 = {:.12})", self.horizon, self.c0);
        let _ = writeln!(s, "one-sided fits against T - t, window t in [0, {:.2}]", ONE_SIDED_WINDOW * self.horizon);
        for f in &self.gains.fits {
            match (&f.fit, &f.refusal) {
                (Some(fit), _) => {
                    let _ = writeln!(
                        s,
                        "  {:<13} K = {:.4e}  lambda = {:.6}  R2 = {:.6}{}",
                        f.quantity,
                        fit.k,
                        fit.lambda,
                        fit.r2,
                        fit.flag.as_deref().map(|x| format!("  [{x}]")).unwrap_or_default()
                    );
                }
                (None, Some(r)) => {
                    let _ = writeln!(s, "  {:<13} no fit: {r}", f.quantity);
                }
                _ => {}
            }
        }
        let _ = writeln!(s, "pair deviation (midpoint t = {})", self.pair.midpoint_t);
        let _ = writeln!(s, "  state gap   {:.4e}", self.pair.midpoint_state_gap);
        let _ = writeln!(s, "  control gap {:.4e}", self.pair.midpoint_control_gap);
        for f in &self.pair.fits {
            match (&f.fit, &f.refusal) {
                (Some(fit), _) => {
                    let (w1, w2) = fit.layer_widths();
                    let _ = writeln!(
                        s,
                        "  {:<13} lambda1 = {:.6}  lambda2 = {:.6}  widths = ({:.4}, {:.4})  R2 = {:.6}",
                        f.quantity, fit.lambda1, fit.lambda2, w1, w2, fit.r2
                    );
                }
                (None, Some(r)) => {
                    let _ = writeln!(s, "  {:<13} no fit: {r}", f.quantity);
                }
                _ => {}
            }
        }
        if let Some(c) = &self.cesaro {
            let _ = writeln!(s, "Cesaro table");
            let _ = writeln!(s, "  {:>10} {:>20} {:>12} {:>12}", "T", "V_T/T", "gap", "T*gap");
            for r in &c.rows {
                let _ = writeln!(
                    s,
                    "  {:>10} {:>20.14} {:>12.4e} {:>12.4e}",
                    r.horizon, r.value_over_horizon, r.gap, r.scaled_gap
                );
            }
            let _ = writeln!(s, "  monotone: {}  bounded: {:?}", c.monotone, c.bounded);
            if let Some(e) = c.extrapolated {
                let _ = writeln!(s, "  extrapolated limit: {e:.12}");
            }
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}
