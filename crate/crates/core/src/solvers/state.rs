use log::{debug, info};

use super::memory::L1Memory;
use super::{guard, BLOW_UP_THRESHOLD, ControlField, PositivityLog, StateTrajectory};
use crate::error::{Error, Result};
use crate::grid::{p_laplacian_into, GridSpec};
use crate::model::{reaction_at, ModelParams, StateTriple};

/// Forward explicit L1 march of the controlled state system.
///
/// Negative values produced by round-off are clipped to zero; their size is
/// recorded in the trajectory's [`PositivityLog`].
pub fn solve_state(
    params: &ModelParams,
    grid: &GridSpec,
    init: &StateTriple,
    u: &ControlField,
) -> Result<StateTrajectory> {
    params.validate()?;
    grid.validate()?;
    if init.grid() != grid {
        return Err(Error::Dimension("initial data grid differs from the scenario grid".into()));
    }
    if !init.is_nonnegative() || !init.components().iter().all(|f| f.is_finite()) {
        return Err(Error::validation("initial data", "finite and nonnegative", "negative entry"));
    }
    let steps = params.steps();
    u.check_against(grid, steps)?;
    if !(u.min() >= 0.0 && u.max() < 1.0) {
        return Err(Error::validation("control", "within [0, 1)", format!("[{}, {}]", u.min(), u.max())));
    }

    let cells = grid.len();
    let mut memory = L1Memory::new(params.alpha, steps, 3 * cells)?;
    let scale = memory.scale(params.dt);
    let area = grid.cell_area();

    let mut current = init.pack();
    let mut next = vec![0.0; 3 * cells];
    let mut rate = vec![0.0; 3 * cells];
    let mut history = vec![0.0; 3 * cells];
    let mut increment = vec![0.0; 3 * cells];

    let mut log = PositivityLog {
        peak_density: current.iter().copied().fold(0.0, f64::max),
        initial_mass: area * current.iter().sum::<f64>(),
        ..Default::default()
    };
    let mut snapshots = Vec::with_capacity(steps + 1);
    snapshots.push(init.clone());

    for n in 1..=steps {
        for c in 0..3 {
            p_laplacian_into(
                &current[c * cells..(c + 1) * cells],
                grid,
                params.p,
                &params.diffusion,
                &mut rate[c * cells..(c + 1) * cells],
            );
        }
        let control = u.frame(n - 1).values();
        for k in 0..cells {
            let psi = reaction_at(current[k], current[cells + k], current[2 * cells + k], control[k], params);
            for c in 0..3 {
                rate[c * cells + k] = params.lambda[c] * rate[c * cells + k] + psi[c];
            }
        }
        memory.history(&mut history);
        for j in 0..3 * cells {
            next[j] = current[j] + scale * rate[j] - history[j];
        }
        guard("state", n, params.dt, &next, BLOW_UP_THRESHOLD)?;

        let mut clipped = 0.0;
        for v in next.iter_mut() {
            if *v < 0.0 {
                log.min_value = log.min_value.min(*v);
                clipped -= *v;
                *v = 0.0;
            } else if *v > log.peak_density {
                log.peak_density = *v;
            }
        }
        clipped *= area;
        if clipped > 0.0 {
            debug!("step {n}: clipped {clipped:e} people");
        }
        log.clipped_mass += clipped;
        log.max_step_clipped_mass = log.max_step_clipped_mass.max(clipped);

        for j in 0..3 * cells {
            increment[j] = next[j] - current[j];
        }
        memory.push(&increment);
        std::mem::swap(&mut current, &mut next);
        snapshots.push(StateTriple::unpack(*grid, &current));
    }

    Ok(StateTrajectory {
        dt: params.dt,
        snapshots,
        positivity: log,
    })
}

const PROBE_STEPS: usize = 100;
const PROBE_HALVINGS: usize = 4;

/// Runs the first steps of an uncontrolled march and halves `dt` (at most
/// four times) until the blow-up guard stays quiet. Returns the parameters
/// with the working step.
pub fn probe_time_step(params: &ModelParams, grid: &GridSpec, init: &StateTriple) -> Result<ModelParams> {
    params.validate()?;
    let mut trial = *params;
    for halving in 0..=PROBE_HALVINGS {
        let mut short = trial;
        short.horizon = trial.dt * PROBE_STEPS.min(trial.steps()) as f64;
        let u = ControlField::zeros(*grid, short.steps(), short.dt);
        match solve_state(&short, grid, init, &u) {
            Ok(_) => {
                if halving > 0 {
                    info!("time step reduced from {} to {}", params.dt, trial.dt);
                }
                return Ok(trial);
            }
            Err(e) if e.is_instability() && halving < PROBE_HALVINGS => {
                debug!("probe unstable at dt = {}: {e}", trial.dt);
                trial.dt /= 2.0;
            }
            Err(e) => return Err(e),
        }
    }
    unreachable!("the last halving returns")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fractional::mittag_leffler;
    use crate::grid::{five_point_laplacian, Field2D};

    fn small(alpha: f64, p: f64, horizon: f64, dt: f64) -> ModelParams {
        ModelParams {
            alpha,
            p,
            horizon,
            dt,
            ..Default::default()
        }
    }

    fn seeded(grid: GridSpec) -> StateTriple {
        let mut init = StateTriple::uniform(grid, 50.0, 0.0, 0.0);
        let c = grid.index(grid.nx / 2, grid.ny / 2);
        init.s.values_mut()[c] = 40.0;
        init.i.values_mut()[c] = 10.0;
        init
    }

    #[test]
    fn no_infected_stays_uninfected() {
        let grid = GridSpec::new(6, 5, 1.0, 1.0).unwrap();
        let params = small(0.8, 4.0, 2.0, 0.01);
        let mut init = StateTriple::uniform(grid, 50.0, 0.0, 3.0);
        init.s.values_mut()[7] = 20.0;
        let u = ControlField::constant(grid, params.steps(), params.dt, 0.1);
        let traj = solve_state(&params, &grid, &init, &u).unwrap();
        assert_eq!(traj.snapshots().len(), params.steps() + 1);
        assert!(traj.snapshots().iter().all(|s| s.i.max() == 0.0));
        assert!(traj.last().r.sum() > init.r.sum());
    }

    #[test]
    fn homogeneous_total_follows_mittag_leffler() {
        let grid = GridSpec::new(3, 3, 1.0, 1.0).unwrap();
        for alpha in [1.0, 0.7] {
            let params = ModelParams {
                mu: 0.0,
                ..small(alpha, 5.0, 10.0, 0.01)
            };
            let init = StateTriple::uniform(grid, 30.0, 15.0, 5.0);
            let u = ControlField::zeros(grid, params.steps(), params.dt);
            let traj = solve_state(&params, &grid, &init, &u).unwrap();
            let n_end = traj.last().total().values()[4];
            let oracle = 50.0 * mittag_leffler(alpha, (params.beta - params.xi) * 10f64.powf(alpha)).unwrap();
            assert!((n_end - oracle).abs() < 1e-3 * oracle, "alpha {alpha}: {n_end} vs {oracle}");
        }
    }

    #[test]
    fn classical_euler_reduction() {
        let grid = GridSpec::new(5, 4, 1.0, 1.0).unwrap();
        let params = ModelParams {
            mu: 0.05,
            ..small(1.0, 2.0, 0.5, 0.05)
        };
        let init = seeded(grid);
        let u = ControlField::constant(grid, params.steps(), params.dt, 0.2);
        let traj = solve_state(&params, &grid, &init, &u).unwrap();
        let mut x = init.clone();
        for n in 0..params.steps() {
            let psi = crate::model::reaction(&x, u.frame(n), &params).unwrap();
            let mut fields: Vec<Field2D> = x.components().iter().map(|f| (*f).clone()).collect();
            for c in 0..3 {
                let mut rate = five_point_laplacian(x.components()[c]).scaled(params.lambda[c]);
                rate.add_scaled(1.0, &psi[c]);
                fields[c].add_scaled(params.dt, &rate);
            }
            let [s, i, r]: [Field2D; 3] = fields.try_into().unwrap();
            x = StateTriple { s, i, r };
            let got = traj.snapshot(n + 1);
            for c in 0..3 {
                for (a, b) in x.components()[c].values().iter().zip(got.components()[c].values()) {
                    assert_close!(*a, *b, 1e-13 * (1.0 + a.abs()));
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let grid = GridSpec::new(5, 5, 1.0, 1.0).unwrap();
        let params = small(0.9, 3.0, 1.0, 0.01);
        let u = ControlField::constant(grid, params.steps(), params.dt, 0.3);
        let a = solve_state(&params, &grid, &seeded(grid), &u).unwrap();
        let b = solve_state(&params, &grid, &seeded(grid), &u).unwrap();
        assert_eq!(a, b);
    }

    /// Checkerboard data with pure diffusion: explicit steps beyond the
    /// stability limit amplify it every step.
    fn checkerboard(dt: f64, horizon: f64) -> (GridSpec, ModelParams, StateTriple) {
        let grid = GridSpec::new(4, 4, 1.0, 1.0).unwrap();
        let params = ModelParams {
            beta: 0.0,
            xi: 0.0,
            mu: 0.0,
            kappa: 0.0,
            ..small(1.0, 2.0, horizon, dt)
        };
        let s = Field2D::from_fn(grid, |x, y| if ((x + y) as i64) % 2 == 0 { 50.0 } else { 0.0 });
        let init = StateTriple::new(s, Field2D::zeros(grid), Field2D::zeros(grid)).unwrap();
        (grid, params, init)
    }

    #[test]
    fn blow_up_is_reported() {
        let (grid, params, init) = checkerboard(8.0, 800.0);
        let u = ControlField::zeros(grid, params.steps(), params.dt);
        let err = solve_state(&params, &grid, &init, &u).unwrap_err();
        assert!(err.is_instability());
        assert!(err.to_string().contains("smaller time step"));
    }

    #[test]
    fn probe_halves_until_stable() {
        let (grid, params, init) = checkerboard(8.0, 800.0);
        let probed = probe_time_step(&params, &grid, &init).unwrap();
        assert!(probed.dt < params.dt);
        assert!(probed.validate().is_ok());
        let fine = probe_time_step(&small(1.0, 2.0, 1.0, 0.01), &grid, &seeded(grid)).unwrap();
        assert_eq!(fine.dt, 0.01);
    }

    #[test]
    fn rejects_bad_inputs() {
        let grid = GridSpec::new(3, 3, 1.0, 1.0).unwrap();
        let params = small(1.0, 2.0, 1.0, 0.1);
        let init = StateTriple::uniform(grid, 1.0, 1.0, 1.0);
        let short = ControlField::zeros(grid, 3, 0.1);
        assert!(matches!(solve_state(&params, &grid, &init, &short), Err(Error::Dimension(_))));
        let full = ControlField::constant(grid, params.steps(), 0.1, 1.0);
        assert!(matches!(solve_state(&params, &grid, &init, &full), Err(Error::Validation { .. })));
    }
}
