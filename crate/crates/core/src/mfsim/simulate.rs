//! Euler–Maruyama ensembles of the closed loop.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::moments::propagate_mean;
use super::rng::{PathRng, RNG_ALGORITHM};
use super::{ClosedLoopSpec, Coefficients};
use crate::error::{Error, Result};
use crate::finite::trapezoid;
use crate::model::MFModel;
use crate::serde_mat::fmt_f64;

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub paths: usize,
    pub seed: u64,
    /// Euler steps per record interval.
    pub substeps: usize,
    /// Worker threads; `None` uses the rayon default. Results do not depend on it.
    pub threads: Option<usize>,
    /// Use the empirical mean of the ensemble instead of the exact mean.
    pub particle: bool,
}

impl SimOptions {
    pub fn new(paths: usize, seed: u64) -> Self {
        SimOptions {
            paths,
            seed,
            substeps: 1,
            threads: None,
            particle: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMetadata {
    pub seed: u64,
    pub paths: usize,
    pub substeps: usize,
    pub scheme: String,
    pub rng: String,
    /// `exact_mean` or `particle`.
    pub mean_field: String,
    /// `finite` or `ergodic`.
    pub mode: String,
    pub grid: Vec<f64>,
    pub n: usize,
    pub m: usize,
    pub x0: Vec<f64>,
}

/// Per-path states and controls on the record grid, stored flat as
/// `[path][grid index][component]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnsemble {
    pub grid: Vec<f64>,
    pub paths: usize,
    pub n: usize,
    pub m: usize,
    states: Vec<f64>,
    controls: Vec<f64>,
    /// Mean field used at each grid point (exact or empirical).
    pub mean_path: Vec<DVector<f64>>,
    pub metadata: EnsembleMetadata,
}

impl TrajectoryEnsemble {
    pub fn state(&self, path: usize, k: usize) -> &[f64] {
        let i = (path * self.grid.len() + k) * self.n;
        &self.states[i..i + self.n]
    }

    pub fn control(&self, path: usize, k: usize) -> &[f64] {
        let i = (path * self.grid.len() + k) * self.m;
        &self.controls[i..i + self.m]
    }

    /// Sample mean and its standard error at grid index `k`.
    pub fn sample_mean(&self, k: usize) -> (DVector<f64>, DVector<f64>) {
        let (mean, se) = self.sample_stats(k, self.n, |p, out| {
            out.copy_from_slice(self.state(p, k));
        });
        (DVector::from_vec(mean), DVector::from_vec(se))
    }

    /// Sample second moment `E[X X']` and elementwise standard errors at grid index `k`.
    pub fn sample_second_moment(&self, k: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.n;
        let (mean, se) = self.sample_stats(k, n * n, |p, out| {
            let x = self.state(p, k);
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] = x[i] * x[j];
                }
            }
        });
        (DMatrix::from_row_slice(n, n, &mean), DMatrix::from_row_slice(n, n, &se))
    }

    /// Mean and standard error of `len` per-path features, summed in path order.
    fn sample_stats(&self, _k: usize, len: usize, feature: impl Fn(usize, &mut [f64])) -> (Vec<f64>, Vec<f64>) {
        let mut buf = vec![0.0; len];
        let mut sum = vec![0.0; len];
        let mut sumsq = vec![0.0; len];
        for p in 0..self.paths {
            feature(p, &mut buf);
            for i in 0..len {
                sum[i] += buf[i];
                sumsq[i] += buf[i] * buf[i];
            }
        }
        mean_and_se(&sum, &sumsq, self.paths)
    }

    /// Columns `path, t, x_i, u_j`.
    pub fn to_csv(&self) -> String {
        let mut cols = vec!["path".to_string(), "t".into()];
        cols.extend((0..self.n).map(|i| format!("x_{i}")));
        cols.extend((0..self.m).map(|j| format!("u_{j}")));
        let mut out = cols.join(",");
        out.push('\n');
        for p in 0..self.paths {
            for (k, t) in self.grid.iter().enumerate() {
                out.push_str(&p.to_string());
                out.push(',');
                out.push_str(&fmt_f64(*t));
                for v in self.state(p, k).iter().chain(self.control(p, k)) {
                    out.push(',');
                    out.push_str(&fmt_f64(*v));
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn metadata_json(&self) -> String {
        serde_json::to_string_pretty(&self.metadata).expect("metadata serializes")
    }
}

fn mean_and_se(sum: &[f64], sumsq: &[f64], count: usize) -> (Vec<f64>, Vec<f64>) {
    let nf = count as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    let se = sum
        .iter()
        .zip(sumsq)
        .map(|(s, q)| {
            if count < 2 {
                return 0.0;
            }
            let var = ((q - s * s / nf) / (nf - 1.0)).max(0.0);
            (var / nf).sqrt()
        })
        .collect();
    (mean, se)
}

/// `out = x + (A1 x + d) h + (C1 x + e) dw`
#[inline]
fn em_update(x: &[f64], out: &mut [f64], c: &Coefficients, d: &[f64], e: &[f64], h: f64, dw: f64) {
    let n = x.len();
    for i in 0..n {
        let mut drift = d[i];
        let mut diff = e[i];
        for j in 0..n {
            drift += c.A1[(i, j)] * x[j];
            diff += c.C1[(i, j)] * x[j];
        }
        out[i] = x[i] + drift * h + diff * dw;
    }
}

/// Feedback at a record point: `u = Theta x + k` with `k = (ThetaBar - Theta) m + theta`.
struct ControlLaw {
    theta_mat: DMatrix<f64>,
    offset: DVector<f64>,
}

impl ControlLaw {
    fn new(spec: &ClosedLoopSpec, t: f64, mean: &DVector<f64>) -> Result<Self> {
        let g = spec.gains_at(spec.clamp_time(t))?;
        Ok(ControlLaw {
            offset: (&g.ThetaBar - &g.Theta) * mean + &g.theta,
            theta_mat: g.Theta,
        })
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.offset[i] + (0..x.len()).map(|j| self.theta_mat[(i, j)] * x[j]).sum::<f64>();
        }
    }
}

fn substep_times(grid: &[f64], substeps: usize) -> Vec<f64> {
    let mut times = Vec::with_capacity((grid.len() - 1) * substeps + 1);
    for w in grid.windows(2) {
        let h = (w[1] - w[0]) / substeps as f64;
        times.extend((0..substeps).map(|j| w[0] + j as f64 * h));
    }
    times.push(grid[grid.len() - 1]);
    times
}

/// Simulates `opts.paths` independent paths of the closed loop on `grid`.
///
/// Path `i` uses Gaussian stream `i` of the master seed, and every path is
/// written into its own preassigned slot, so the ensemble is bit-identical
/// for any number of worker threads.
pub fn simulate(spec: &ClosedLoopSpec, grid: &[f64], opts: &SimOptions) -> Result<TrajectoryEnsemble> {
    if opts.paths == 0 {
        return Err(Error::InvalidArgument("paths must be at least 1".into()));
    }
    if opts.substeps == 0 {
        return Err(Error::InvalidArgument("substeps must be at least 1".into()));
    }
    spec.check_grid(grid)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let (n, m) = (spec.model.n, spec.model.m);
    let metadata = EnsembleMetadata {
        seed: opts.seed,
        paths: opts.paths,
        substeps: opts.substeps,
        scheme: "euler-maruyama".into(),
        rng: RNG_ALGORITHM.into(),
        mean_field: if opts.particle { "particle" } else { "exact_mean" }.into(),
        mode: spec.mode_name().into(),
        grid: grid.to_vec(),
        n,
        m,
        x0: spec.x0.iter().copied().collect(),
    };
    let (states, controls, mean_path) = pool.install(|| {
        if opts.particle {
            simulate_particles(spec, grid, opts)
        } else {
            simulate_decoupled(spec, grid, opts)
        }
    })?;
    Ok(TrajectoryEnsemble {
        grid: grid.to_vec(),
        paths: opts.paths,
        n,
        m,
        states,
        controls,
        mean_path,
        metadata,
    })
}

type Simulated = (Vec<f64>, Vec<f64>, Vec<DVector<f64>>);

fn simulate_decoupled(spec: &ClosedLoopSpec, grid: &[f64], opts: &SimOptions) -> Result<Simulated> {
    let (n, m) = (spec.model.n, spec.model.m);
    let sub = opts.substeps;
    let times = substep_times(grid, sub);
    let means = propagate_mean(spec, &times)?;
    let constant = matches!(spec.mode, super::Mode::Ergodic(_));

    // Per-substep affine offsets; coefficient matrices are shared when constant.
    let mut coeffs = Vec::new();
    let mut offsets = Vec::with_capacity(times.len() - 1);
    for j in 0..times.len() - 1 {
        if !constant || coeffs.is_empty() {
            coeffs.push(spec.coefficients_at(times[j])?);
        }
        let c = coeffs.last().expect("nonempty");
        let d: Vec<f64> = (&c.A2 * &means[j] + &c.b1).iter().copied().collect();
        let e: Vec<f64> = (&c.C2 * &means[j] + &c.s1).iter().copied().collect();
        offsets.push((coeffs.len() - 1, d, e, times[j + 1] - times[j]));
    }
    let mean_path: Vec<DVector<f64>> = (0..grid.len()).map(|k| means[k * sub].clone()).collect();
    let laws = grid
        .iter()
        .zip(&mean_path)
        .map(|(t, mean)| ControlLaw::new(spec, *t, mean))
        .collect::<Result<Vec<_>>>()?;

    let len = grid.len();
    let mut states = vec![0.0; opts.paths * len * n];
    let mut controls = vec![0.0; opts.paths * len * m];
    let x0: Vec<f64> = spec.x0.iter().copied().collect();
    let outcomes: Vec<Result<()>> = states
        .par_chunks_mut(len * n)
        .zip(controls.par_chunks_mut(len * m))
        .enumerate()
        .map(|(path, (xs, us))| {
            let mut rng = PathRng::new(opts.seed, path as u64);
            let mut x = x0.clone();
            let mut next = vec![0.0; n];
            xs[..n].copy_from_slice(&x);
            laws[0].apply(&x, &mut us[..m]);
            for k in 1..len {
                for j in (k - 1) * sub..k * sub {
                    let (ci, d, e, h) = &offsets[j];
                    let dw = h.sqrt() * rng.normal();
                    em_update(&x, &mut next, &coeffs[*ci], d, e, *h, dw);
                    std::mem::swap(&mut x, &mut next);
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::BlowUp { path, t: grid[k] });
                }
                xs[k * n..(k + 1) * n].copy_from_slice(&x);
                laws[k].apply(&x, &mut us[k * m..(k + 1) * m]);
            }
            Ok(())
        })
        .collect();
    outcomes.into_iter().collect::<Result<Vec<()>>>()?;
    Ok((states, controls, mean_path))
}

fn simulate_particles(spec: &ClosedLoopSpec, grid: &[f64], opts: &SimOptions) -> Result<Simulated> {
    let (n, m) = (spec.model.n, spec.model.m);
    let sub = opts.substeps;
    let len = grid.len();
    let paths = opts.paths;
    let times = substep_times(grid, sub);

    let mut xs: Vec<f64> = (0..paths).flat_map(|_| spec.x0.iter().copied()).collect();
    let mut next = vec![0.0; paths * n];
    let mut rngs: Vec<PathRng> = (0..paths).map(|p| PathRng::new(opts.seed, p as u64)).collect();
    let mut states = vec![0.0; paths * len * n];
    let mut controls = vec![0.0; paths * len * m];
    let mut mean_path = Vec::with_capacity(len);

    let empirical_mean = |xs: &[f64]| {
        let mut mean = DVector::zeros(n);
        for p in 0..paths {
            for i in 0..n {
                mean[i] += xs[p * n + i];
            }
        }
        mean / paths as f64
    };
    let mut record = |k: usize, xs: &[f64], mean: &DVector<f64>| -> Result<()> {
        let law = ControlLaw::new(spec, grid[k], mean)?;
        for p in 0..paths {
            let x = &xs[p * n..(p + 1) * n];
            states[(p * len + k) * n..(p * len + k + 1) * n].copy_from_slice(x);
            law.apply(x, &mut controls[(p * len + k) * m..(p * len + k + 1) * m]);
        }
        mean_path.push(mean.clone());
        Ok(())
    };

    record(0, &xs, &spec.x0)?;
    for k in 1..len {
        for j in (k - 1) * sub..k * sub {
            let mean = empirical_mean(&xs);
            let c = spec.coefficients_at(times[j])?;
            let d: Vec<f64> = (&c.A2 * &mean + &c.b1).iter().copied().collect();
            let e: Vec<f64> = (&c.C2 * &mean + &c.s1).iter().copied().collect();
            let h = times[j + 1] - times[j];
            next.par_chunks_mut(n)
                .zip(xs.par_chunks(n))
                .zip(rngs.par_iter_mut())
                .for_each(|((out, x), rng)| {
                    let dw = h.sqrt() * rng.normal();
                    em_update(x, out, &c, &d, &e, h, dw);
                });
            std::mem::swap(&mut xs, &mut next);
        }
        if let Some(p) = (0..paths).find(|p| xs[p * n..(p + 1) * n].iter().any(|v| !v.is_finite())) {
            return Err(Error::BlowUp { path: p, t: grid[k] });
        }
        let mean = empirical_mean(&xs);
        record(k, &xs, &mean)?;
    }
    Ok((states, controls, mean_path))
}

/// Monte Carlo estimate of `J_T` and the Cesàro mean `J_T / T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub grid: Vec<f64>,
    /// Sample mean of the running cost at each grid point.
    pub running_cost_mean: Vec<f64>,
    pub running_cost_se: Vec<f64>,
    /// Per-path trapezoid integrals of the running cost.
    pub path_costs: Vec<f64>,
    pub total: f64,
    pub total_se: f64,
    pub cesaro: f64,
    pub cesaro_se: f64,
}

/// Trapezoid quadrature of `f(X, E[X], u)` along every path, with `E[X]`
/// taken from the ensemble's mean path.
pub fn estimate_cost(model: &MFModel, ens: &TrajectoryEnsemble) -> CostEstimate {
    let len = ens.grid.len();
    let mut per_time = vec![0.0; ens.paths * len];
    per_time.par_chunks_mut(len).enumerate().for_each(|(p, row)| {
        for (k, v) in row.iter_mut().enumerate() {
            let x = DVector::from_column_slice(ens.state(p, k));
            let u = DVector::from_column_slice(ens.control(p, k));
            *v = model.running_cost(&x, &ens.mean_path[k], &u);
        }
    });
    let path_costs: Vec<f64> = per_time.chunks(len).map(|row| trapezoid(&ens.grid, row)).collect();

    let mut sum = vec![0.0; len];
    let mut sumsq = vec![0.0; len];
    for row in per_time.chunks(len) {
        for k in 0..len {
            sum[k] += row[k];
            sumsq[k] += row[k] * row[k];
        }
    }
    let (running_cost_mean, running_cost_se) = mean_and_se(&sum, &sumsq, ens.paths);
    let total_sum: f64 = path_costs.iter().sum();
    let total_sumsq: f64 = path_costs.iter().map(|c| c * c).sum();
    let (total, total_se) = mean_and_se(&[total_sum], &[total_sumsq], ens.paths);
    let span = ens.grid[len - 1] - ens.grid[0];
    let scale = if span > 0.0 { 1.0 / span } else { 0.0 };
    CostEstimate {
        grid: ens.grid.clone(),
        running_cost_mean,
        running_cost_se,
        path_costs,
        total: total[0],
        total_se: total_se[0],
        cesaro: total[0] * scale,
        cesaro_se: total_se[0] * scale,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ergodic::solve_ergodic_system;
    use crate::finite::integrate_riccati_system;
    use crate::fixtures::{random_valid_model, sb1, sb1_homogeneous, sb2};
    use crate::mfsim::propagate_moments;

    fn grid(t_end: f64, step: f64) -> Vec<f64> {
        let k = (t_end / step).round() as usize;
        (0..=k).map(|i| i as f64 * step).collect()
    }

    fn ergodic(model: &MFModel, x0: f64) -> ClosedLoopSpec {
        let erg = solve_ergodic_system(model, 1e-10).unwrap();
        ClosedLoopSpec::ergodic(model, &erg, DVector::from_element(model.n, x0)).unwrap()
    }

    #[test]
    fn noiseless_paths_follow_the_mean() {
        let (mut model, _) = random_valid_model(11, 2, 2);
        model.C.fill(0.0);
        model.Cbar.fill(0.0);
        model.D.fill(0.0);
        model.sigma.fill(0.0);
        let erg = solve_ergodic_system(&model, 1e-10).unwrap();
        let spec = ClosedLoopSpec::ergodic(&model, &erg, DVector::from_vec(vec![1.0, -1.0])).unwrap();
        let ens = simulate(&spec, &grid(2.0, 0.1), &SimOptions::new(5, 3)).unwrap();
        for k in 0..ens.grid.len() {
            for p in 1..5 {
                assert_eq!(ens.state(p, k), ens.state(0, k));
            }
        }
    }

    #[test]
    fn reproducible_and_thread_independent() {
        let spec = ergodic(&sb1(), 0.5);
        let g = grid(3.0, 0.1);
        let mut opts = SimOptions::new(64, 99);
        opts.threads = Some(1);
        let a = simulate(&spec, &g, &opts).unwrap();
        opts.threads = Some(4);
        let b = simulate(&spec, &g, &opts).unwrap();
        assert_eq!(a, b);
        opts.seed = 100;
        assert_ne!(a, simulate(&spec, &g, &opts).unwrap());
    }

    #[test]
    fn particle_mode_is_thread_independent() {
        let spec = ergodic(&sb2(), 1.0);
        let g = grid(1.0, 0.1);
        let mut opts = SimOptions::new(50, 5);
        opts.particle = true;
        opts.threads = Some(1);
        let a = simulate(&spec, &g, &opts).unwrap();
        opts.threads = Some(3);
        assert_eq!(a, simulate(&spec, &g, &opts).unwrap());
    }

    #[test]
    fn homogeneous_zero_start_has_zero_cost() {
        let spec = ergodic(&sb1_homogeneous(), 0.0);
        let ens = simulate(&spec, &grid(5.0, 0.1), &SimOptions::new(10, 1)).unwrap();
        let cost = estimate_cost(&sb1_homogeneous(), &ens);
        assert_eq!(cost.total, 0.0);
        assert_eq!(cost.cesaro, 0.0);
    }

    #[test]
    fn second_moment_matches_moment_ode_finite_mode() {
        let model = sb2();
        let fin = integrate_riccati_system(&model, 4.0, 800).unwrap();
        let spec = ClosedLoopSpec::finite(&model, &fin, DVector::from_element(1, 1.0)).unwrap();
        let g = grid(4.0, 0.05);
        let mut opts = SimOptions::new(4000, 17);
        opts.substeps = 4;
        let ens = simulate(&spec, &g, &opts).unwrap();
        let exact = propagate_moments(&spec, &g).unwrap();
        for k in [20, 40, 60, 80] {
            let (mean, se) = ens.sample_mean(k);
            // sigma = 0: paths are deterministic, the mean must agree up to the Euler error
            assert!((mean[0] - exact.mean[k][0]).abs() < 2e-3 + 4.0 * se[0]);
        }
    }

    #[test]
    fn blow_up_is_reported() {
        // A huge multiplicative noise coefficient leaves the mean finite but
        // overflows individual paths.
        let erg = solve_ergodic_system(&sb1(), 1e-10).unwrap();
        let mut model = sb1();
        model.C[(0, 0)] = 1e200;
        let spec = ClosedLoopSpec {
            model,
            mode: crate::mfsim::Mode::Ergodic(erg),
            x0: DVector::from_element(1, 1e200),
        };
        let err = simulate(&spec, &grid(1.0, 0.5), &SimOptions::new(3, 1)).unwrap_err();
        assert!(matches!(err, Error::BlowUp { path: 0, .. }), "{err}");
    }

    #[test]
    fn zero_paths_rejected() {
        let spec = ergodic(&sb1(), 0.0);
        assert!(simulate(&spec, &grid(1.0, 0.1), &SimOptions::new(0, 1)).is_err());
    }

    #[test]
    fn csv_and_metadata() {
        let spec = ergodic(&sb1(), 0.0);
        let ens = simulate(&spec, &grid(0.2, 0.1), &SimOptions::new(2, 1)).unwrap();
        let csv = ens.to_csv();
        assert_eq!(csv.lines().next().unwrap(), "path,t,x_0,u_0");
        assert_eq!(csv.lines().count(), 1 + 2 * 3);
        let meta: EnsembleMetadata = serde_json::from_str(&ens.metadata_json()).unwrap();
        assert_eq!(meta, ens.metadata);
    }
}
