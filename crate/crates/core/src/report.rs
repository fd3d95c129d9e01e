//! Running a scenario and writing its outputs.
//!
//! Each `(α, p)` entry gets a directory `alpha{α:.2}_p{p}` under the output
//! path holding:
//!
//! - `{S,I,R}_day{d}.csv` heatmaps for every snapshot day (`u_day{d}.csv` too
//!   when vaccinating), one row per `j`, one column per `i`;
//! - the same as `.pgm` images when requested;
//! - `totals.csv`, the grid-integrated S, I, R at every time level;
//! - `sweep.csv`, the per-iteration sweep diagnostics when vaccinating;
//! - `metadata.txt`, `key=value` lines.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use crate::error::Result;
use crate::fbsm::{run_sweep, IterationRecord};
use crate::grid::Field2D;
use crate::model::{objective, ModelParams};
use crate::scenario::Scenario;
use crate::solvers::{solve_state, ControlField, PositivityLog, StateTrajectory};

/// Result of one `(α, p)` run, before anything is written.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub params: ModelParams,
    pub state: StateTrajectory,
    pub control: ControlField,
    pub objective: f64,
    /// Sweep diagnostics, present when vaccinating.
    pub sweep: Option<SweepSummary>,
}

#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<IterationRecord>,
}

/// What was written for one `(α, p)` run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub alpha: f64,
    pub p: f64,
    pub directory: PathBuf,
    pub objective: f64,
    pub converged: Option<bool>,
    pub iterations: Option<usize>,
    pub positivity: PositivityLog,
    /// Grid-integrated `(S, I, R)` at the horizon.
    pub final_totals: [f64; 3],
}

/// Directory name of one entry, e.g. `alpha0.90_p5`.
pub fn job_directory(alpha: f64, p: f64) -> String {
    format!("alpha{alpha:.2}_p{p}")
}

/// Solves one entry, with the sweep when the scenario vaccinates.
pub fn run_job(scenario: &Scenario, alpha: f64, p: f64) -> Result<Outcome> {
    let params = scenario.params_for(alpha, p);
    params.validate()?;
    let init = scenario.initial_state();
    if scenario.vaccinate {
        let r = run_sweep(&params, &scenario.grid, &init, &scenario.sweep)?;
        Ok(Outcome {
            params,
            state: r.state,
            control: r.control,
            objective: r.objective,
            sweep: Some(SweepSummary {
                iterations: r.iterations,
                converged: r.converged,
                history: r.history,
            }),
        })
    } else {
        let control = ControlField::zeros(scenario.grid, params.steps(), params.dt);
        let state = solve_state(&params, &scenario.grid, &init, &control)?;
        let objective = objective(&state, &control, &params)?;
        Ok(Outcome {
            params,
            state,
            control,
            objective,
            sweep: None,
        })
    }
}

/// Runs every entry of the scenario concurrently and writes the outputs.
pub fn run_scenario(scenario: &Scenario) -> Result<Vec<RunReport>> {
    scenario.validate()?;
    fs::create_dir_all(&scenario.output)?;
    let jobs = scenario.jobs();
    let results: Vec<Result<RunReport>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|&(alpha, p)| {
                scope.spawn(move || {
                    info!("running alpha = {alpha}, p = {p}");
                    let outcome = run_job(scenario, alpha, p)?;
                    let dir = scenario.output.join(job_directory(alpha, p));
                    write_outcome(scenario, &outcome, &dir)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|e| std::panic::resume_unwind(e)))
            .collect()
    });
    results.into_iter().collect()
}

/// Writes the files of one entry into `dir`.
pub fn write_outcome(scenario: &Scenario, outcome: &Outcome, dir: &Path) -> Result<RunReport> {
    fs::create_dir_all(dir)?;
    let state = &outcome.state;
    for &day in &scenario.snapshots {
        let n = step_of_day(day, outcome.params.dt);
        let snap = state.snapshot(n);
        let mut fields = vec![("S", &snap.s), ("I", &snap.i), ("R", &snap.r)];
        if outcome.sweep.is_some() {
            fields.push(("u", outcome.control.frame(n)));
        }
        for (name, field) in fields {
            let stem = format!("{name}_day{day}");
            fs::write(dir.join(format!("{stem}.csv")), field_csv(field))?;
            if scenario.pgm {
                fs::write(dir.join(format!("{stem}.pgm")), field_pgm(field))?;
            }
        }
    }

    let mut totals = String::from("t,S,I,R\n");
    for (n, [s, i, r]) in state.totals().into_iter().enumerate() {
        let _ = writeln!(totals, "{},{s},{i},{r}", n as f64 * state.dt());
    }
    fs::write(dir.join("totals.csv"), totals)?;

    if let Some(sweep) = &outcome.sweep {
        let mut csv = String::from("iteration,objective,err_test,relaxation,projection_residual,control_min,control_max\n");
        for (k, h) in sweep.history.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                k + 1,
                h.objective,
                h.err_test,
                h.relaxation,
                h.projection_residual,
                h.control_min,
                h.control_max
            );
        }
        fs::write(dir.join("sweep.csv"), csv)?;
    }

    let last = state.last();
    let final_totals = [last.s.integral(), last.i.integral(), last.r.integral()];
    let report = RunReport {
        alpha: outcome.params.alpha,
        p: outcome.params.p,
        directory: dir.to_path_buf(),
        objective: outcome.objective,
        converged: outcome.sweep.as_ref().map(|s| s.converged),
        iterations: outcome.sweep.as_ref().map(|s| s.iterations),
        positivity: *state.positivity(),
        final_totals,
    };
    fs::write(dir.join("metadata.txt"), metadata(scenario, outcome, &report))?;
    Ok(report)
}

fn step_of_day(day: f64, dt: f64) -> usize {
    (day / dt).round() as usize
}

fn metadata(scenario: &Scenario, outcome: &Outcome, report: &RunReport) -> String {
    let p = &outcome.params;
    let g = &scenario.grid;
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k}={v}");
    };
    kv("alpha", p.alpha.to_string());
    kv("p", p.p.to_string());
    kv("lambda", format!("{},{},{}", p.lambda[0], p.lambda[1], p.lambda[2]));
    kv("beta", p.beta.to_string());
    kv("xi", p.xi.to_string());
    kv("mu", p.mu.to_string());
    kv("kappa", p.kappa.to_string());
    kv("eta", p.eta.to_string());
    kv("horizon", p.horizon.to_string());
    kv("dt", p.dt.to_string());
    kv("epsilon", p.diffusion.epsilon.to_string());
    kv(
        "reference_density",
        p.diffusion.reference_density.map_or("none".into(), |r| r.to_string()),
    );
    kv("jacobian", format!("{:?}", p.diffusion.jacobian).to_lowercase());
    kv("grid", format!("{}x{}", g.nx, g.ny));
    kv("spacing", format!("{},{}", g.dx, g.dy));
    kv("day_mapping", "day d is time t = d, day 0 is the initial data".into());
    kv("cell_indexing", "1-based (i, j), csv row j, column i".into());
    kv("vaccinate", scenario.vaccinate.to_string());
    kv("objective", report.objective.to_string());
    if let Some(sweep) = &outcome.sweep {
        kv("converged", sweep.converged.to_string());
        kv("iterations", sweep.iterations.to_string());
        kv("tolerance", scenario.sweep.tolerance.to_string());
        kv("relaxation", scenario.sweep.relaxation.to_string());
        kv("min_relaxation", scenario.sweep.min_relaxation.to_string());
        kv("control_cap", scenario.sweep.control_cap.to_string());
        if let Some(h) = sweep.history.last() {
            kv("final_err_test", h.err_test.to_string());
            kv("final_projection_residual", h.projection_residual.to_string());
        }
    }
    let pos = &report.positivity;
    kv("min_value_before_clipping", pos.min_value.to_string());
    kv("clipped_mass", pos.clipped_mass.to_string());
    kv("clipped_fraction", pos.clipped_fraction().to_string());
    kv("max_step_clipped_fraction", pos.max_step_clipped_fraction().to_string());
    let [s, i, r] = report.final_totals;
    kv("final_totals", format!("{s},{i},{r}"));
    out
}

/// One line per grid row `j`, comma separated over `i`.
pub fn field_csv(field: &Field2D) -> String {
    let g = field.grid();
    let mut out = String::new();
    for j in 0..g.ny {
        let row: Vec<String> = (0..g.nx).map(|i| field.values()[g.index(i, j)].to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Plain (P2) grayscale image scaled so that the field maximum is white.
pub fn field_pgm(field: &Field2D) -> String {
    let g = field.grid();
    let max = field.max();
    let mut out = format!("P2\n{} {}\n255\n", g.nx, g.ny);
    for j in 0..g.ny {
        let row: Vec<String> = (0..g.nx)
            .map(|i| {
                let v = field.values()[g.index(i, j)];
                let level = if max > 0.0 { (v.max(0.0) / max * 255.0).round() } else { 0.0 };
                (level as u8).to_string()
            })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}
