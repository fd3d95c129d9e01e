use super::memory::L1Memory;
use super::{guard, BLOW_UP_THRESHOLD, ControlField, PerturbationTrajectory, StateTrajectory};
use crate::error::{Error, Result};
use crate::grid::FluxLinearization;
use crate::model::{CellMatrix3, ModelParams, StateTriple};

/// Forward march of the state system linearized about `state` in the control
/// direction `w`, from zero initial data.
///
/// This is the exact derivative of [`super::solve_state`] with respect to
/// the control whenever no clipping occurs.
pub fn solve_linearized(
    params: &ModelParams,
    state: &StateTrajectory,
    u: &ControlField,
    w: &ControlField,
) -> Result<PerturbationTrajectory> {
    params.validate()?;
    let steps = params.steps();
    if state.steps() != steps {
        return Err(Error::Dimension(format!(
            "state has {} steps, parameters imply {}",
            state.steps(),
            steps
        )));
    }
    let grid = *state.grid();
    u.check_against(&grid, steps)?;
    w.check_against(&grid, steps)?;
    let cells = grid.len();

    let mut memory = L1Memory::new(params.alpha, steps, 3 * cells)?;
    let scale = memory.scale(params.dt);

    let mut current = vec![0.0; 3 * cells];
    let mut next = vec![0.0; 3 * cells];
    let mut rate = vec![0.0; 3 * cells];
    let mut spread = vec![0.0; cells];
    let mut history = vec![0.0; 3 * cells];
    let mut increment = vec![0.0; 3 * cells];
    let mut flux = FluxLinearization::new(&state.snapshot(0).s, params.p, &params.diffusion);

    let mut snapshots = Vec::with_capacity(steps + 1);
    snapshots.push(StateTriple::zeros(grid));

    for n in 1..=steps {
        let nu = state.snapshot(n - 1);
        for (c, base) in nu.components().iter().enumerate() {
            flux.rebase(base.values(), params.p, &params.diffusion);
            flux.apply(&current[c * cells..(c + 1) * cells], &mut spread);
            for k in 0..cells {
                rate[c * cells + k] = params.lambda[c] * spread[k];
            }
        }
        let control = u.frame(n - 1).values();
        let direction = w.frame(n - 1).values();
        for k in 0..cells {
            let s = nu.s.values()[k];
            let matrix = CellMatrix3::linearization(s, nu.i.values()[k], control[k], params);
            let coupled = matrix.mul_vec([current[k], current[cells + k], current[2 * cells + k]]);
            let source = s * direction[k];
            rate[k] += coupled[0] - source;
            rate[cells + k] += coupled[1];
            rate[2 * cells + k] += coupled[2] + source;
        }
        memory.history(&mut history);
        for j in 0..3 * cells {
            next[j] = current[j] + scale * rate[j] - history[j];
        }
        guard("linearized", n, params.dt, &next, BLOW_UP_THRESHOLD)?;
        for j in 0..3 * cells {
            increment[j] = next[j] - current[j];
        }
        memory.push(&increment);
        std::mem::swap(&mut current, &mut next);
        snapshots.push(StateTriple::unpack(grid, &current));
    }

    Ok(PerturbationTrajectory {
        dt: params.dt,
        snapshots,
    })
}
