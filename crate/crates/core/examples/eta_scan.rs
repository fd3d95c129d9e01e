//! Sweeps the preset (alpha = 1, p = 5 unless given) over control weights and
//! prints a markdown table.
//!
//! cargo run --release -p fracsir-core --example eta_scan -- 1e4 1e5 1e6 [--alpha 0.9]

use fracsir_core::model::objective;
use fracsir_core::{preset_table2, run_sweep, solve_state, ControlField};

fn main() {
    let mut alpha = 1.0;
    let mut etas = Vec::new();
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        if a == "--alpha" {
            alpha = args.next().and_then(|v| v.parse().ok()).expect("--alpha takes a number");
        } else {
            etas.push(a.parse::<f64>().expect("control weights are numbers"));
        }
    }
    let scenario = preset_table2();
    let init = scenario.initial_state();
    let c = scenario.grid.cell(11, 11).unwrap();

    let params = scenario.params_for(alpha, 5.0);
    let zero = ControlField::zeros(scenario.grid, params.steps(), params.dt);
    let free = solve_state(&params, &scenario.grid, &init, &zero).unwrap();
    let free_j = objective(&free, &zero, &params).unwrap();
    let free_i = free.last().i.integral();
    println!("alpha = {alpha}, uncontrolled day-80 infected {free_i:.1}");
    println!();
    println!("| eta | converged | iterations | J(u*) | J(0) | center S, I, R at day 80 | infected at day 80 | max u |");
    println!("|---|---|---|---|---|---|---|---|");
    for eta in etas {
        let params = fracsir_core::ModelParams { eta, ..params };
        let r = run_sweep(&params, &scenario.grid, &init, &scenario.sweep).unwrap();
        let last = r.state.last();
        println!(
            "| {eta:e} | {} | {} | {:.4e} | {free_j:.4e} | {:.2}, {:.2}, {:.2} | {:.1} | {:.3} |",
            if r.converged { "yes" } else { "no" },
            r.iterations,
            r.objective,
            last.s.values()[c],
            last.i.values()[c],
            last.r.values()[c],
            last.i.integral(),
            r.control.max()
        );
    }
}
