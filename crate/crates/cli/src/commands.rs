//! The four subcommands. Each returns the text for stdout or a [`Failure`].

use std::collections::BTreeMap;
use std::fmt::Write as _;

use mflq::ergodic::solve_ergodic_system;
use mflq::finite::{default_steps, integrate_riccati_system, value_function};
use mflq::mfsim::{estimate_cost, simulate, ClosedLoopSpec, EnsembleMetadata, SimOptions};
use mflq::model::DEFAULT_MARGIN;
use mflq::turnpike::{run_turnpike, uniform_grid, TurnpikeConfig, TurnpikeReport};
use mflq::{validate, validate_h1, MFModel, ValidationReport};
use nalgebra::DVector;
use serde::Serialize;

use crate::config::{Format, Mode, RunConfig};
use crate::failure::Failure;
use crate::output::{csv_to_table, OutputDir};

pub fn load_problem(cfg: &RunConfig) -> Result<MFModel, Failure> {
    let path = cfg.problem()?;
    let text = std::fs::read_to_string(path).map_err(|e| Failure {
        code: crate::failure::EXIT_PARSE,
        kind: "io".into(),
        message: format!("cannot read problem {}: {e}", path.display()),
    })?;
    let (model, warnings) = MFModel::from_json_str(&text).map_err(Failure::from_load)?;
    for w in warnings {
        log::warn!("{w}");
    }
    Ok(model)
}

fn fingerprint(model: &MFModel) -> String {
    format!("{:016x}", model.fingerprint())
}

/// Length check for state vectors given on the command line; the error names the flag.
fn state_vector(flag: &str, values: Option<&Vec<f64>>, n: usize) -> Result<Option<DVector<f64>>, Failure> {
    match values {
        None => Ok(None),
        Some(v) if v.len() == n => Ok(Some(DVector::from_column_slice(v))),
        Some(v) => Err(Failure {
            code: crate::failure::EXIT_USAGE,
            kind: "dimension".into(),
            message: format!("dimension mismatch in `{flag}`: expected length {n}, found length {}", v.len()),
        }),
    }
}

/// (H1) gate in front of the solvers; `--force` turns a failure into a warning.
fn require_h1(model: &MFModel, force: bool) -> Result<(), Failure> {
    let h1 = validate_h1(model, DEFAULT_MARGIN).map_err(Failure::from_solver)?;
    if h1.ok {
        return Ok(());
    }
    let message = h1.messages.join("; ");
    if force {
        log::warn!("proceeding despite failed assumption check: {message}");
        Ok(())
    } else {
        Err(Failure::validation(message))
    }
}

fn validation_text(report: &ValidationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "validation {}", if report.ok() { "passed" } else { "FAILED" });
    let _ = writeln!(s, "  smallest eigenvalue of R          = {:.6e}", report.r_min_eig);
    if let Some((e1, e2)) = report.h1_min_eigs {
        let _ = writeln!(s, "  smallest eigenvalue of Q - S'R^-1 S        = {e1:.6e}");
        let _ = writeln!(s, "  smallest eigenvalue of Q + Qbar - S'R^-1 S = {e2:.6e}");
    }
    let yes_no = |b: bool| if b { "certified" } else { "not certified" };
    let _ = writeln!(s, "  (H1) {}", if report.h1_ok { "holds" } else { "fails" });
    let _ = writeln!(s, "  (H2) mean dynamics        {}", yes_no(report.h2_ode_ok));
    let _ = writeln!(s, "  (H2) fluctuation dynamics {}", yes_no(report.h2_sde_ok));
    for m in &report.messages {
        let _ = writeln!(s, "  {m}");
    }
    s
}

pub fn cmd_validate(cfg: &RunConfig) -> Result<String, Failure> {
    let out = match &cfg.output_dir {
        Some(dir) => Some(OutputDir::prepare(dir, &["validation.json".into()], cfg.force)?),
        None => None,
    };
    let model = load_problem(cfg)?;
    let report = validate(&model, DEFAULT_MARGIN, cfg.tol).map_err(Failure::from_load)?;
    if let Some(out) = &out {
        out.write_json("validation.json", &report)?;
    }
    let stdout = match cfg.format {
        Some(Format::Json) => serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
        _ => validation_text(&report),
    };
    if report.ok() {
        Ok(stdout)
    } else {
        print!("{stdout}");
        Err(Failure::validation(report.messages.join("; ")))
    }
}

/// Machine-readable summary written by `solve`.
#[derive(Debug, Serialize)]
struct SolveSummary {
    mode: &'static str,
    model_fingerprint: String,
    tol: f64,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    c0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    x0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
    residuals: BTreeMap<&'static str, f64>,
    warnings: Vec<String>,
}

pub fn cmd_solve(cfg: &RunConfig) -> Result<String, Failure> {
    match cfg.mode {
        Mode::Ergodic => solve_ergodic(cfg),
        Mode::Finite => solve_finite(cfg),
    }
}

fn solve_ergodic(cfg: &RunConfig) -> Result<String, Failure> {
    let names = ["ergodic.json", "summary.json", "report.txt"].map(String::from);
    let out = OutputDir::prepare(cfg.output_dir()?, &names, cfg.force)?;
    let model = load_problem(cfg)?;
    require_h1(&model, cfg.force)?;
    let erg = solve_ergodic_system(&model, cfg.tol).map_err(Failure::from_solver)?;
    let r = &erg.residuals;
    let summary = SolveSummary {
        mode: "ergodic",
        model_fingerprint: erg.model_fingerprint.clone(),
        tol: cfg.tol,
        horizon: None,
        steps: None,
        c0: Some(erg.c0),
        x0: None,
        value: None,
        residuals: BTreeMap::from([
            ("riccati_p", r.riccati_p),
            ("riccati_pi", r.riccati_pi),
            ("sylvester_p1", r.sylvester_p1),
            ("linear_p", r.linear_p),
            ("linear_p1", r.linear_p1),
            ("c0", r.c0),
            ("gains", r.gains),
        ]),
        warnings: erg.warnings.clone(),
    };
    let text = erg.report_text();
    out.write("ergodic.json", &(erg.to_json_string() + "\n"))?;
    out.write_json("summary.json", &summary)?;
    out.write("report.txt", &text)?;
    Ok(text)
}

fn solve_finite(cfg: &RunConfig) -> Result<String, Failure> {
    let horizon = cfg.horizon("in finite mode")?;
    let table = match cfg.format() {
        Format::Csv => "finite.csv",
        Format::Json => "finite.json",
    };
    let names = [table, "summary.json", "report.txt"].map(String::from);
    let out = OutputDir::prepare(cfg.output_dir()?, &names, cfg.force)?;
    let model = load_problem(cfg)?;
    let x0 = state_vector("--x0", cfg.x0.as_ref(), model.n)?.unwrap_or_else(|| DVector::zeros(model.n));
    require_h1(&model, cfg.force)?;
    let steps = cfg.steps.unwrap_or_else(|| default_steps(horizon));
    let sol = integrate_riccati_system(&model, horizon, steps).map_err(Failure::from_solver)?;
    let vf = value_function(&sol, &x0).map_err(Failure::from_solver)?;
    let mut warnings = Vec::new();
    if !vf.consistent {
        warnings.push(format!("p0(0) = {} disagrees with its quadrature {}", vf.p0, vf.p0_quadrature));
    }
    let summary = SolveSummary {
        mode: "finite",
        model_fingerprint: fingerprint(&model),
        tol: cfg.tol,
        horizon: Some(horizon),
        steps: Some(steps),
        c0: None,
        x0: Some(x0.iter().copied().collect()),
        value: Some(vf.value),
        residuals: BTreeMap::from([
            ("asymmetry", sol.max_asymmetry()),
            ("gain_identities", sol.gain_identity_residual()),
            ("p0_quadrature", (vf.p0 - vf.p0_quadrature).abs()),
        ]),
        warnings,
    };
    let mut text = String::new();
    let _ = writeln!(text, "finite-horizon solution (T = {horizon}, {steps} RK4 steps)");
    let _ = writeln!(text, "  V_T(x0)                 = {:.12}", vf.value);
    let _ = writeln!(text, "  p0(0)                   = {:.12}", vf.p0);
    let _ = writeln!(text, "  residuals (max-norm)");
    for (k, v) in &summary.residuals {
        let _ = writeln!(text, "    {k:<21} = {v:.3e}");
    }
    for w in &summary.warnings {
        let _ = writeln!(text, "  warning: {w}");
    }
    let csv = sol.to_csv();
    match cfg.format() {
        Format::Csv => out.write(table, &csv)?,
        Format::Json => out.write_json(table, &csv_to_table(&csv))?,
    }
    out.write_json("summary.json", &summary)?;
    out.write("report.txt", &text)?;
    Ok(text)
}

pub fn cmd_turnpike(cfg: &RunConfig) -> Result<String, Failure> {
    let horizon = cfg.horizon("for the turnpike experiment")?;
    let mut names = vec!["summary.json".to_string(), "report.txt".to_string()];
    if cfg.format() == Format::Csv {
        names.extend(TurnpikeReport::series_file_names(!cfg.horizons.is_empty()));
    }
    let out = OutputDir::prepare(cfg.output_dir()?, &names, cfg.force)?;
    let model = load_problem(cfg)?;
    let x0_finite = state_vector("--x0-finite", cfg.x0_finite.as_ref(), model.n)?
        .ok_or_else(|| Failure::usage("--x0-finite is required"))?;
    let x0_erg = state_vector("--x0-erg", cfg.x0_erg.as_ref(), model.n)?
        .ok_or_else(|| Failure::usage("--x0-erg is required"))?;
    require_h1(&model, cfg.force)?;
    let tcfg = TurnpikeConfig {
        horizon,
        steps: cfg.steps.unwrap_or_else(|| default_steps(horizon)),
        x0_finite,
        x0_erg,
        horizons: cfg.horizons.clone(),
        tol: cfg.tol,
        report_intervals: cfg.intervals.unwrap_or_else(|| default_intervals(horizon, 20.0)),
    };
    let report = run_turnpike(&model, &tcfg).map_err(Failure::from_solver)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    if cfg.format() == Format::Csv {
        for (name, csv) in report.series_csv() {
            out.write(&name, &csv)?;
        }
    }
    out.write("summary.json", &(report.to_json_string() + "\n"))?;
    let text = report.report_text();
    out.write("report.txt", &text)?;
    Ok(text)
}

/// At least 200 intervals, and at least `per_unit` per unit of time.
fn default_intervals(horizon: f64, per_unit: f64) -> usize {
    ((per_unit * horizon).ceil() as usize).max(200)
}

#[derive(Debug, Serialize)]
struct CostSummary {
    total: f64,
    total_se: f64,
    cesaro: f64,
    cesaro_se: f64,
}

/// `metadata.json` of a simulation: everything needed to rerun it bit for bit.
#[derive(Debug, Serialize)]
struct SimulationRecord {
    version: &'static str,
    model_fingerprint: String,
    problem: MFModel,
    #[serde(rename = "T")]
    horizon: f64,
    intervals: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    steps: Option<usize>,
    tol: f64,
    ensemble: EnsembleMetadata,
    cost: CostSummary,
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<String, Failure> {
    let horizon = cfg.horizon("for simulation")?;
    let table = match cfg.format() {
        Format::Csv => "ensemble.csv",
        Format::Json => "ensemble.json",
    };
    let names = [table, "cost.csv", "path_costs.csv", "metadata.json"].map(String::from);
    let out = OutputDir::prepare(cfg.output_dir()?, &names, cfg.force)?;
    let model = load_problem(cfg)?;
    let x0 = state_vector("--x0", cfg.x0.as_ref(), model.n)?.unwrap_or_else(|| DVector::zeros(model.n));
    require_h1(&model, cfg.force)?;
    let mut steps = None;
    let spec = match cfg.mode {
        Mode::Ergodic => {
            let erg = solve_ergodic_system(&model, cfg.tol).map_err(Failure::from_solver)?;
            ClosedLoopSpec::ergodic(&model, &erg, x0)
        }
        Mode::Finite => {
            let s = cfg.steps.unwrap_or_else(|| default_steps(horizon));
            steps = Some(s);
            let sol = integrate_riccati_system(&model, horizon, s).map_err(Failure::from_solver)?;
            ClosedLoopSpec::finite(&model, &sol, x0)
        }
    }
    .map_err(Failure::from_solver)?;
    let intervals = cfg.intervals.unwrap_or_else(|| default_intervals(horizon, 10.0));
    let grid = uniform_grid(horizon, intervals);
    let mut opts = SimOptions::new(cfg.paths, cfg.seed);
    opts.substeps = cfg.substeps;
    opts.threads = cfg.threads;
    opts.particle = cfg.particle;
    let ens = simulate(&spec, &grid, &opts).map_err(Failure::from_solver)?;
    let cost = estimate_cost(&model, &ens);

    let csv = ens.to_csv();
    match cfg.format() {
        Format::Csv => out.write(table, &csv)?,
        Format::Json => out.write_json(table, &csv_to_table(&csv))?,
    }
    let fmt = |x: f64| format!("{x:.16e}");
    let mut profile = String::from("t,running_cost_mean,running_cost_se\n");
    for k in 0..cost.grid.len() {
        let _ = writeln!(
            profile,
            "{},{},{}",
            fmt(cost.grid[k]),
            fmt(cost.running_cost_mean[k]),
            fmt(cost.running_cost_se[k])
        );
    }
    out.write("cost.csv", &profile)?;
    let mut per_path = String::from("path,total,cesaro\n");
    for (p, c) in cost.path_costs.iter().enumerate() {
        let _ = writeln!(per_path, "{p},{},{}", fmt(*c), fmt(c / horizon));
    }
    out.write("path_costs.csv", &per_path)?;
    let record = SimulationRecord {
        version: env!("CARGO_PKG_VERSION"),
        model_fingerprint: fingerprint(&model),
        problem: model.clone(),
        horizon,
        intervals,
        steps,
        tol: cfg.tol,
        ensemble: ens.metadata.clone(),
        cost: CostSummary {
            total: cost.total,
            total_se: cost.total_se,
            cesaro: cost.cesaro,
            cesaro_se: cost.cesaro_se,
        },
    };
    out.write_json("metadata.json", &record)?;

    let mut text = String::new();
    let _ = writeln!(
        text,
        "simulated {} paths of the {} closed loop on [0, {horizon}] ({} intervals x {} substeps, seed {})",
        cfg.paths,
        spec.mode_name(),
        intervals,
        cfg.substeps,
        cfg.seed
    );
    let _ = writeln!(text, "  J_T     = {:.8} +- {:.2e}", cost.total, cost.total_se);
    let _ = writeln!(text, "  J_T / T = {:.8} +- {:.2e}", cost.cesaro, cost.cesaro_se);
    Ok(text)
}
