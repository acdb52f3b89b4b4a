//! Exponential rate fits.

use serde::{Deserialize, Serialize};

/// Values at or below this level are treated as round-off and excluded.
pub const FIT_FLOOR: f64 = 1e-13;
/// Minimum number of usable points for a one-sided fit.
pub const MIN_FIT_POINTS: usize = 5;

/// `value ~ k exp(-lambda s)`, fitted by least squares on `ln value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub k: f64,
    pub lambda: f64,
    /// Coefficient of determination of the log-linear fit. Zero for a flat series.
    pub r2: f64,
    pub points: usize,
    pub window: (f64, f64),
    /// Set when `r2` carries no information (flat series).
    pub flag: Option<String>,
}

impl ExpFit {
    pub fn predict(&self, s: f64) -> f64 {
        self.k * (-self.lambda * s).exp()
    }
}

/// Reason a fit was not attempted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRefusal {
    pub points: usize,
    pub required: usize,
    pub reason: String,
}

impl std::fmt::Display for FitRefusal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({} usable points, {} required)", self.reason, self.points, self.required)
    }
}

/// Ordinary least squares of `ln v` against `s` over points with `s` in `window`
/// and `v > FIT_FLOOR`.
pub fn fit_exponential(series: &[(f64, f64)], window: (f64, f64)) -> Result<ExpFit, FitRefusal> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(s, v)| *s >= window.0 && *s <= window.1 && *v > FIT_FLOOR && v.is_finite() && s.is_finite())
        .map(|&(s, v)| (s, v.ln()))
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(FitRefusal {
            points: pts.len(),
            required: MIN_FIT_POINTS,
            reason: format!("too few values above {FIT_FLOOR:e} in the fit window"),
        });
    }
    let n = pts.len() as f64;
    let sx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let sy = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - sx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - sx) * (p.1 - sy)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - sy).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(FitRefusal {
            points: pts.len(),
            required: MIN_FIT_POINTS,
            reason: "all fit points share one abscissa".into(),
        });
    }
    let slope = sxy / sxx;
    let intercept = sy - slope * sx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let flat = syy <= 1e-24 * n;
    let (r2, flag) = if flat {
        (0.0, Some("flat series: R^2 undefined, reported as 0".to_string()))
    } else {
        ((1.0 - ss_res / syy).clamp(0.0, 1.0), None)
    };
    Ok(ExpFit {
        k: intercept.exp(),
        lambda: if flat { 0.0 } else { -slope },
        r2,
        points: pts.len(),
        window,
        flag,
    })
}

/// `value ~ k1 exp(-lambda1 t) + k2 exp(-lambda2 (T - t))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSidedFit {
    pub k1: f64,
    pub lambda1: f64,
    pub k2: f64,
    pub lambda2: f64,
    /// R^2 of `ln value` against `ln` of the model.
    pub r2: f64,
    pub points: usize,
    pub iterations: usize,
    pub horizon: f64,
}

impl TwoSidedFit {
    pub fn predict(&self, t: f64) -> f64 {
        self.k1 * (-self.lambda1 * t).exp() + self.k2 * (-self.lambda2 * (self.horizon - t)).exp()
    }

    /// Boundary-layer widths `1/lambda1` and `1/lambda2`.
    pub fn layer_widths(&self) -> (f64, f64) {
        (1.0 / self.lambda1, 1.0 / self.lambda2)
    }
}

/// Levenberg–Marquardt fit of the two-exponential profile in log space.
///
/// Parameters are `(ln k1, ln lambda1, ln k2, ln lambda2)`, which keeps the
/// amplitudes and rates positive. The start comes from one-sided fits on the
/// first and last thirds of the horizon.
pub fn fit_two_sided(series: &[(f64, f64)], horizon: f64) -> Result<TwoSidedFit, FitRefusal> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, v)| *v > FIT_FLOOR && v.is_finite() && t.is_finite())
        .map(|&(t, v)| (t, v.ln()))
        .collect();
    if pts.len() < 2 * MIN_FIT_POINTS {
        return Err(FitRefusal {
            points: pts.len(),
            required: 2 * MIN_FIT_POINTS,
            reason: format!("too few values above {FIT_FLOOR:e} for a two-sided fit"),
        });
    }
    let third = horizon / 3.0;
    let left = fit_exponential(series, (0.0, third));
    let mirrored: Vec<(f64, f64)> = series.iter().map(|&(t, v)| (horizon - t, v)).collect();
    let right = fit_exponential(&mirrored, (0.0, third));
    let start = |f: Result<ExpFit, FitRefusal>| match f {
        Ok(f) if f.lambda > 0.0 && f.k.is_finite() && f.k > 0.0 => (f.k.ln(), f.lambda.ln()),
        _ => (pts[0].1.max(pts[pts.len() - 1].1), 0.0),
    };
    let (a1, l1) = start(left);
    let (a2, l2) = start(right);
    let mut theta = [a1, l1, a2, l2];

    let residuals = |th: &[f64; 4]| -> Option<Vec<f64>> {
        let out: Vec<f64> = pts
            .iter()
            .map(|&(t, y)| {
                let g = (th[0] - th[1].exp() * t).exp() + (th[2] - th[3].exp() * (horizon - t)).exp();
                g.ln() - y
            })
            .collect();
        out.iter().all(|r| r.is_finite()).then_some(out)
    };
    let cost = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();

    let Some(mut res) = residuals(&theta) else {
        return Err(FitRefusal {
            points: pts.len(),
            required: 2 * MIN_FIT_POINTS,
            reason: "two-sided fit could not be initialized".into(),
        });
    };
    let mut current = cost(&res);
    let mut mu = 1e-3;
    let mut iterations = 0;
    for _ in 0..500 {
        iterations += 1;
        // Jacobian of ln g with respect to the four parameters.
        let mut jtj = nalgebra::Matrix4::<f64>::zeros();
        let mut jtr = nalgebra::Vector4::<f64>::zeros();
        for (&(t, _), r) in pts.iter().zip(&res) {
            let e1 = (theta[0] - theta[1].exp() * t).exp();
            let e2 = (theta[2] - theta[3].exp() * (horizon - t)).exp();
            let g = e1 + e2;
            let row = nalgebra::Vector4::new(
                e1 / g,
                -e1 * theta[1].exp() * t / g,
                e2 / g,
                -e2 * theta[3].exp() * (horizon - t) / g,
            );
            jtj += row * row.transpose();
            jtr += row * *r;
        }
        let mut improved = false;
        while mu < 1e12 {
            let mut damped = jtj;
            for i in 0..4 {
                damped[(i, i)] += mu * (1.0 + jtj[(i, i)]);
            }
            let Some(step) = damped.lu().solve(&(-jtr)) else {
                mu *= 10.0;
                continue;
            };
            let trial = [theta[0] + step[0], theta[1] + step[1], theta[2] + step[2], theta[3] + step[3]];
            if let Some(r) = residuals(&trial) {
                let c = cost(&r);
                if c < current {
                    let gain = current - c;
                    theta = trial;
                    res = r;
                    current = c;
                    mu = (mu * 0.3).max(1e-12);
                    improved = gain > 1e-15 * (1.0 + current);
                    break;
                }
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }

    let mean = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let sst: f64 = pts.iter().map(|p| (p.1 - mean).powi(2)).sum();
    let r2 = if sst > 0.0 { (1.0 - current / sst).clamp(0.0, 1.0) } else { 0.0 };
    let fit = TwoSidedFit {
        k1: theta[0].exp(),
        lambda1: theta[1].exp(),
        k2: theta[2].exp(),
        lambda2: theta[3].exp(),
        r2,
        points: pts.len(),
        iterations,
        horizon,
    };
    if [fit.k1, fit.lambda1, fit.k2, fit.lambda2].iter().all(|x| x.is_finite() && *x > 0.0) {
        Ok(fit)
    } else {
        Err(FitRefusal {
            points: pts.len(),
            required: 2 * MIN_FIT_POINTS,
            reason: "two-sided fit diverged".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_series_recovered() {
        let s: Vec<(f64, f64)> = (0..10).map(|i| (i as f64 * 0.5, 3.0 * (-2.0 * i as f64 * 0.5).exp())).collect();
        let f = fit_exponential(&s, (0.0, 10.0)).unwrap();
        assert!((f.k - 3.0).abs() < 1e-10);
        assert!((f.lambda - 2.0).abs() < 1e-10);
        assert!((f.r2 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn noisy_series_rate_within_five_percent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s: Vec<(f64, f64)> = (0..40)
            .map(|i| {
                let t = i as f64 * 0.1;
                (t, 3.0 * (-2.0 * t).exp() * (1.0 + 0.01 * rng.random_range(-1.0..1.0)))
            })
            .collect();
        let f = fit_exponential(&s, (0.0, 10.0)).unwrap();
        assert!((f.lambda - 2.0).abs() < 0.1);
    }

    #[test]
    fn constant_series_is_flagged() {
        let s: Vec<(f64, f64)> = (0..8).map(|i| (i as f64, 0.7)).collect();
        let f = fit_exponential(&s, (0.0, 10.0)).unwrap();
        assert_eq!(f.lambda, 0.0);
        assert_eq!(f.r2, 0.0);
        assert!(f.flag.is_some());
        assert!((f.k - 0.7).abs() < 1e-12);
    }

    #[test]
    fn floor_and_window_respected() {
        let s: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, if i < 6 { 1e-14 } else { 1.0 })).collect();
        let err = fit_exponential(&s, (0.0, 100.0)).unwrap_err();
        assert_eq!(err.points, 4);
        let s: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 1.0)).collect();
        assert_eq!(fit_exponential(&s, (0.0, 3.0)).unwrap_err().points, 4);
    }

    #[test]
    fn two_sided_profile_recovered() {
        let horizon = 20.0;
        let s: Vec<(f64, f64)> = (0..=200)
            .map(|i| {
                let t = i as f64 * 0.1;
                (t, 4.0 * (-2.8 * t).exp() + 0.1 * (-1.4 * (horizon - t)).exp())
            })
            .collect();
        let f = fit_two_sided(&s, horizon).unwrap();
        assert!((f.lambda1 - 2.8).abs() < 1e-4, "{f:?}");
        assert!((f.lambda2 - 1.4).abs() < 1e-4, "{f:?}");
        assert!((f.k1 - 4.0).abs() < 1e-3 && (f.k2 - 0.1).abs() < 1e-4);
        assert!(f.r2 > 0.999999);
        let (w1, w2) = f.layer_widths();
        assert!((w1 - 1.0 / 2.8).abs() < 1e-4 && (w2 - 1.0 / 1.4).abs() < 1e-4);
    }
}
