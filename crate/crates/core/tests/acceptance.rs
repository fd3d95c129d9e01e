//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with
//! a failure status if any criterion fails.

use std::collections::BTreeMap;
use std::time::Instant;

use fracsir_core::fbsm::{directional_derivative, gradient_field, ERR_TEST_SENTINEL};
use fracsir_core::fractional::{caputo_left, caputo_left_history, fractional_integral, mittag_leffler, TimeSeries};
use fracsir_core::grid::{five_point_laplacian, p_laplacian, weighted_diffusion};
use fracsir_core::model::{objective, reaction, CellMatrix3};
use fracsir_core::scenario::CALIBRATED_ETA;
use fracsir_core::solvers::PositivityLog;
use fracsir_core::{
    preset_table2, run_sweep, solve_adjoint, solve_linearized, solve_state, ControlField, DiffusionOptions, Field2D,
    GridSpec, ModelParams, Scenario, StateTrajectory, StateTriple,
};
use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};

struct Verdict {
    passed: bool,
    message: String,
}

fn verdict(passed: bool, message: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        message: message.into(),
    }
}

/// What the remaining criteria need from one uncontrolled preset run.
struct Uncontrolled {
    positivity: PositivityLog,
    center_day80: [f64; 3],
    infected_cells_day40: usize,
    /// First day on which every cell holds more than one infected per km².
    covered_day: Option<f64>,
    total_infected_day80: f64,
    objective: f64,
}

struct Controlled {
    positivity: PositivityLog,
    converged: bool,
    iterations: usize,
    first_err_test: f64,
    every_iterate_admissible: bool,
    every_projection_idempotent: bool,
    final_admissible: bool,
    objective: f64,
    center_region_day80: [f64; 3],
    total_infected_day80: f64,
}

fn center_cell(s: &Scenario) -> usize {
    s.grid.cell(11, 11).expect("preset center")
}

fn center_region_mean(s: &Scenario, f: &Field2D) -> f64 {
    let mut sum = 0.0;
    for j in 10..=12 {
        for i in 10..=12 {
            sum += f.values()[s.grid.cell(i, j).unwrap()];
        }
    }
    sum / 9.0
}

fn infected_cells(f: &Field2D) -> usize {
    f.values().iter().filter(|&&v| v > 1.0).count()
}

fn summarize_uncontrolled(s: &Scenario, state: &StateTrajectory, u: &ControlField, params: &ModelParams) -> Uncontrolled {
    let c = center_cell(s);
    let last = state.at_time(80.0);
    let covered_day = (0..=80)
        .map(f64::from)
        .find(|&d| infected_cells(&state.at_time(d).i) == s.grid.len());
    Uncontrolled {
        positivity: *state.positivity(),
        center_day80: [last.s.values()[c], last.i.values()[c], last.r.values()[c]],
        infected_cells_day40: infected_cells(&state.at_time(40.0).i),
        covered_day,
        total_infected_day80: last.i.integral(),
        objective: objective(state, u, params).unwrap(),
    }
}

fn uncontrolled(s: &Scenario, alpha: f64, p: f64) -> Result<Uncontrolled, String> {
    let params = s.params_for(alpha, p);
    let u = ControlField::zeros(s.grid, params.steps(), params.dt);
    let state = solve_state(&params, &s.grid, &s.initial_state(), &u).map_err(|e| e.to_string())?;
    Ok(summarize_uncontrolled(s, &state, &u, &params))
}

fn controlled(s: &Scenario, alpha: f64) -> Result<Controlled, String> {
    let params = s.params_for(alpha, 5.0);
    let r = run_sweep(&params, &s.grid, &s.initial_state(), &s.sweep).map_err(|e| e.to_string())?;
    let last = r.state.at_time(80.0);
    Ok(Controlled {
        positivity: *r.state.positivity(),
        converged: r.converged,
        iterations: r.iterations,
        first_err_test: r.history[0].err_test,
        every_iterate_admissible: r.history.iter().all(|h| h.admissible),
        every_projection_idempotent: r.history.iter().all(|h| h.projection_idempotent),
        final_admissible: r.control.is_admissible(s.sweep.control_cap),
        objective: r.objective,
        center_region_day80: [
            center_region_mean(s, &last.s),
            center_region_mean(s, &last.i),
            center_region_mean(s, &last.r),
        ],
        total_infected_day80: last.i.integral(),
    })
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut failures = Vec::new();

    let constant = TimeSeries::sample(|_| 3.7, 0.01, 200).unwrap();
    for alpha in [0.3, 0.7, 1.0] {
        if caputo_left(&constant, alpha).unwrap() != 0.0 {
            failures.push(format!("Caputo of a constant nonzero at order {alpha}"));
        }
    }

    let wavy = TimeSeries::sample(|t| (3.0 * t).sin() + t * t, 0.01, 150).unwrap();
    let f = wavy.values();
    let n = f.len() - 1;
    let two_point = (f[n] - f[n - 1]) / 0.01;
    if caputo_left(&wavy, 1.0).unwrap() != two_point {
        failures.push("order 1 differs from the two-point difference".into());
    }

    let dt = 1e-3;
    let square = TimeSeries::sample(|t| t * t, dt, 1000).unwrap();
    let back = fractional_integral(&caputo_left_history(&square, 0.5).unwrap(), 0.5).unwrap();
    let composition = (back - 1.0).abs();
    if composition > 5.0 * dt {
        failures.push(format!("integral of the derivative of t^2 off by {composition:e}"));
    }

    let grid = GridSpec::new(21, 21, 1.0, 1.0).unwrap();
    let field = Field2D::from_fn(grid, |x, y| 50.0 + 10.0 * (0.4 * x).sin() * (0.3 * y).cos() + 0.2 * x * y);
    let opts = DiffusionOptions::default();
    let flux = p_laplacian(&field, 2.0, &opts);
    let stencil = five_point_laplacian(&field);
    let scale = stencil.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let stencil_gap = flux
        .values()
        .iter()
        .zip(stencil.values())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale;
    if stencil_gap > 1e-13 {
        failures.push(format!("p=2 operator differs from the 5-point stencil by {stencil_gap:e}"));
    }

    let rho = Field2D::from_fn(grid, |x, y| (0.2 * x - 0.5 * y).cos());
    let mut worst_sum: f64 = 0.0;
    for p in [2.0, 5.0, 10.0, 15.0] {
        worst_sum = worst_sum.max(p_laplacian(&field, p, &opts).sum().abs());
        worst_sum = worst_sum.max(weighted_diffusion(&field, &rho, p, &opts).unwrap().sum().abs());
    }
    if worst_sum > 1e-12 {
        failures.push(format!("diffusion grid sum {worst_sum:e}"));
    }

    let elapsed = start.elapsed().as_secs_f64();
    if elapsed > 1.0 {
        failures.push(format!("took {elapsed:.2} s"));
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "operator identities hold (composition error {composition:.2e}, stencil gap {stencil_gap:.1e}, \
                 flux sum {worst_sum:.1e}, {elapsed:.2} s)"
            )
        } else {
            failures.join("; ")
        },
    )
}

fn criterion_2() -> Verdict {
    let scenario = preset_table2();
    let mut lines = Vec::new();
    let mut passed = true;
    for alpha in [1.0, 0.95, 0.9] {
        let start = Instant::now();
        let params = ModelParams {
            alpha,
            mu: 0.0,
            ..scenario.params
        };
        let init = StateTriple::uniform(scenario.grid, 40.0, 10.0, 0.0);
        let u = ControlField::zeros(scenario.grid, params.steps(), params.dt);
        let state = match solve_state(&params, &scenario.grid, &init, &u) {
            Ok(s) => s,
            Err(e) => return verdict(false, format!("alpha {alpha}: {e}")),
        };
        let mean = state.last().total().sum() / scenario.grid.len() as f64;
        let expected = 50.0 * mittag_leffler(alpha, (params.beta - params.xi) * 80f64.powf(alpha)).unwrap();
        let rel = (mean - expected).abs() / expected;
        let elapsed = start.elapsed().as_secs_f64();
        passed &= rel <= 1e-2 && elapsed <= 30.0;
        lines.push(format!("alpha {alpha}: {mean:.4} vs {expected:.4} (rel {rel:.1e}, {elapsed:.1} s)"));
    }
    verdict(passed, lines.join(", "))
}

fn criterion_3() -> Verdict {
    let start = Instant::now();
    let grid = GridSpec::new(5, 5, 1.0, 1.0).unwrap();
    let params = ModelParams {
        alpha: 0.9,
        p: 3.0,
        eta: 0.5,
        horizon: 0.2,
        dt: 0.01,
        ..Default::default()
    };
    let steps = params.steps();
    let mut rng = StdRng::seed_from_u64(2024);
    let mut field = |lo: f64, hi: f64| Field2D::from_values(grid, (0..25).map(|_| rng.random_range(lo..hi)).collect()).unwrap();
    let init = StateTriple::new(field(30.0, 50.0), field(0.0, 10.0), field(0.0, 5.0)).unwrap();
    let u = ControlField::from_frames((0..=steps).map(|_| field(0.0, 0.5)).collect(), params.dt).unwrap();

    // (a) Jacobian against differences of the reaction terms
    let eps = 1e-6;
    let state0 = StateTriple::new(field(30.0, 50.0), field(0.0, 10.0), field(0.0, 5.0)).unwrap();
    let control0 = field(0.0, 0.5);
    let base = reaction(&state0, &control0, &params).unwrap();
    let mut jac_err: f64 = 0.0;
    for c in 0..3 {
        let mut comps = [state0.s.clone(), state0.i.clone(), state0.r.clone()];
        for v in comps[c].values_mut() {
            *v += eps;
        }
        let bumped = reaction(&StateTriple::from_components(comps), &control0, &params).unwrap();
        for k in 0..grid.len() {
            let m = CellMatrix3::linearization(state0.s.values()[k], state0.i.values()[k], control0.values()[k], &params);
            for r in 0..3 {
                let fd = (bumped[r].values()[k] - base[r].values()[k]) / eps;
                jac_err = jac_err.max((fd - m.0[r][c]).abs());
            }
        }
    }
    let jac_ok = jac_err <= 10.0 * eps * params.mu.max(1.0) + 1e-7;

    // (b) linearized solve against two nonlinear solves
    let state = solve_state(&params, &grid, &init, &u).unwrap();
    let w = ControlField::from_frames((0..=steps).map(|_| field(-1.0, 1.0)).collect(), params.dt).unwrap();
    let h = 1e-4;
    let shifted = |w: &ControlField| {
        let mut v = u.clone();
        for n in 0..=steps {
            v.frame_mut(n).add_scaled(h, w.frame(n));
        }
        v
    };
    let moved_u = shifted(&w);
    let moved = solve_state(&params, &grid, &init, &moved_u).unwrap();
    let y = solve_linearized(&params, &state, &u, &w).unwrap();
    let (mut err, mut norm) = (0.0, 0.0);
    for n in 1..=steps {
        for c in 0..3 {
            let a = moved.snapshot(n).components()[c].values();
            let b = state.snapshot(n).components()[c].values();
            let lin = y.snapshot(n).components()[c].values();
            for k in 0..grid.len() {
                err += ((a[k] - b[k]) / h - lin[k]).powi(2);
                norm += lin[k].powi(2);
            }
        }
    }
    let lin_err = (err / norm).sqrt();

    // (c) adjoint directional derivatives in ten random directions
    let adjoint = solve_adjoint(&params, &state, &u).unwrap();
    let gradient = gradient_field(&state, &adjoint, &u, params.eta).unwrap();
    let j0 = objective(&state, &u, &params).unwrap();
    let mut dir_err: f64 = 0.0;
    for _ in 0..10 {
        let w = ControlField::from_frames((0..=steps).map(|_| field(-1.0, 1.0)).collect(), params.dt).unwrap();
        let v = shifted(&w);
        let moved = solve_state(&params, &grid, &init, &v).unwrap();
        let fd = (objective(&moved, &v, &params).unwrap() - j0) / h;
        let adj = directional_derivative(&gradient, &w).unwrap();
        dir_err = dir_err.max(((adj - fd) / fd).abs());
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        jac_ok && lin_err <= 5e-2 && dir_err <= 5e-2 && elapsed <= 60.0,
        format!(
            "Jacobian max error {jac_err:.1e} (eps {eps:e}), linearized rel {lin_err:.1e}, \
             worst directional rel {dir_err:.1e}, {elapsed:.2} s"
        ),
    )
}

fn criterion_4(runs: &[(String, PositivityLog)]) -> Verdict {
    let mut worst_undershoot: f64 = 0.0;
    let mut worst_clipped: f64 = 0.0;
    for (_, log) in runs {
        worst_undershoot = worst_undershoot.max(log.relative_undershoot());
        worst_clipped = worst_clipped.max(log.clipped_fraction());
    }
    verdict(
        !runs.is_empty() && worst_undershoot <= 1e-9 && worst_clipped < 1e-6,
        format!(
            "{} runs, worst undershoot {worst_undershoot:.1e} of peak, worst clipped mass {worst_clipped:.1e} of population",
            runs.len()
        ),
    )
}

fn criterion_5(runs: &BTreeMap<(u32, u32), Uncontrolled>) -> Verdict {
    let mut lines = Vec::new();
    let mut passed = true;
    for p in [15, 10, 5] {
        let i = runs[&(100, p)].center_day80[1];
        passed &= (i - 50.0).abs() <= 10.0;
        lines.push(format!("alpha 1 p {p}: I {i:.2}"));
    }
    for alpha in [95, 90] {
        let i = runs[&(alpha, 5)].center_day80[1];
        passed &= (i - 43.0).abs() <= 10.0;
        lines.push(format!("alpha 0.{alpha} p 5: I {i:.2}"));
    }
    let day = |a| runs[&(a, 5)].covered_day.unwrap_or(f64::INFINITY);
    let trails = day(95) >= day(100) && day(90) >= day(100);
    passed &= trails;
    lines.push(format!(
        "days to cover the grid: {} / {} / {} (alpha 1 / 0.95 / 0.9)",
        day(100),
        day(95),
        day(90)
    ));
    verdict(passed, format!("center-cell infected at day 80 (targets 50 and 43 +- 10): {}", lines.join(", ")))
}

fn criterion_6(runs: &BTreeMap<(u32, u32), Uncontrolled>, sweeps: &BTreeMap<u32, Controlled>) -> Verdict {
    let mut bands = true;
    let mut degraded = true;
    let mut lines = Vec::new();
    for (&alpha, c) in sweeps {
        let [s, i, r] = c.center_region_day80;
        bands &= if alpha == 100 {
            (i - 30.0).abs() <= 10.0 && (r - 17.0).abs() <= 8.0
        } else {
            (s - 5.0).abs() <= 10.0 && (i - 33.0).abs() <= 10.0 && (r - 12.0).abs() <= 10.0
        };
        let free = &runs[&(alpha, 5)];
        let ok = c.objective < free.objective
            && c.total_infected_day80 < free.total_infected_day80
            && c.every_iterate_admissible
            && c.final_admissible;
        degraded &= ok;
        lines.push(format!(
            "alpha {}: center (S, I, R) = ({s:.2}, {i:.2}, {r:.2}), J {:.4e} vs {:.4e} uncontrolled, \
             day-80 infected {:.1} vs {:.1}, converged {} in {} iterations",
            f64::from(alpha) / 100.0,
            c.objective,
            free.objective,
            c.total_infected_day80,
            free.total_infected_day80,
            c.converged,
            c.iterations
        ));
    }
    let form = if bands {
        "bands met"
    } else if degraded {
        "bands missed, degraded form holds"
    } else {
        "bands missed and degraded form fails"
    };
    verdict(bands || degraded, format!("eta {CALIBRATED_ETA:e}, {form}: {}", lines.join("; ")))
}

fn criterion_7(runs: &BTreeMap<(u32, u32), Uncontrolled>) -> Verdict {
    let by_p: Vec<usize> = [5, 10, 15].iter().map(|&p| runs[&(100, p)].infected_cells_day40).collect();
    let by_alpha: Vec<usize> = [90, 95, 100].iter().map(|&a| runs[&(a, 10)].infected_cells_day40).collect();
    let monotone = |v: &[usize]| v.windows(2).all(|w| w[0] <= w[1]);
    verdict(
        monotone(&by_p) && monotone(&by_alpha),
        format!("cells with I > 1 at day 40: p 5/10/15 -> {by_p:?}, alpha 0.9/0.95/1 -> {by_alpha:?}"),
    )
}

fn criterion_8(sweeps: &BTreeMap<u32, Controlled>) -> Verdict {
    let c = &sweeps[&100];
    verdict(
        c.first_err_test == ERR_TEST_SENTINEL
            && c.converged
            && c.iterations <= 200
            && c.every_iterate_admissible
            && c.every_projection_idempotent,
        format!(
            "first err_test {}, converged {} after {} iterations, admissible {}, idempotent {}",
            c.first_err_test, c.converged, c.iterations, c.every_iterate_admissible, c.every_projection_idempotent
        ),
    )
}

fn main() {
    let mut verdicts: Vec<(u32, Verdict)> = vec![(1, criterion_1()), (2, criterion_2()), (3, criterion_3())];

    let scenario = preset_table2();
    let mut runs = BTreeMap::new();
    let mut failed_runs = Vec::new();
    for (alpha, p) in [(100, 5), (100, 10), (100, 15), (95, 5), (95, 10), (90, 5), (90, 10)] {
        match uncontrolled(&scenario, f64::from(alpha) / 100.0, f64::from(p)) {
            Ok(r) => {
                runs.insert((alpha, p), r);
            }
            Err(e) => failed_runs.push(format!("uncontrolled alpha {alpha} p {p}: {e}")),
        }
    }
    let mut sweeps = BTreeMap::new();
    for alpha in [100, 95, 90] {
        match controlled(&scenario, f64::from(alpha) / 100.0) {
            Ok(r) => {
                sweeps.insert(alpha, r);
            }
            Err(e) => failed_runs.push(format!("controlled alpha {alpha}: {e}")),
        }
    }

    let mut logs: Vec<(String, PositivityLog)> =
        runs.iter().map(|(k, r)| (format!("{k:?}"), r.positivity)).collect();
    logs.extend(sweeps.iter().map(|(k, r)| (format!("sweep {k}"), r.positivity)));

    if failed_runs.is_empty() {
        verdicts.push((4, criterion_4(&logs)));
        verdicts.push((5, criterion_5(&runs)));
        verdicts.push((6, criterion_6(&runs, &sweeps)));
        verdicts.push((7, criterion_7(&runs)));
        verdicts.push((8, criterion_8(&sweeps)));
    } else {
        for k in 4..=8 {
            verdicts.push((k, verdict(false, failed_runs.join("; "))));
        }
    }

    let mut all = true;
    for (k, v) in &verdicts {
        all &= v.passed;
        println!("criterion {k}: {} {}", if v.passed { "PASS" } else { "FAIL" }, v.message);
    }
    if !all {
        std::process::exit(1);
    }
}
