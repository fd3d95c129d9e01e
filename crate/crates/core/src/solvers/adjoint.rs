use serde::{Deserialize, Serialize};

use super::memory::L1Memory;
use super::{guard, ADJOINT_BLOW_UP_THRESHOLD, AdjointTrajectory, AdjointTriple, ControlField, StateTrajectory};
use crate::error::{Error, Result};
use crate::grid::{Field2D, FluxLinearization};
use crate::model::{pack, unpack, CellMatrix3, ModelParams};

/// Whether the backward march applies the transposed linearization (the
/// exact adjoint of the discrete state map) or the untransposed one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjointForm {
    #[default]
    Transpose,
    Verbatim,
}

/// Backward march of the adjoint system with the transposed linearization.
pub fn solve_adjoint(params: &ModelParams, state: &StateTrajectory, u: &ControlField) -> Result<AdjointTrajectory> {
    solve_adjoint_with(params, state, u, AdjointForm::Transpose)
}

/// Backward march from `ρ(T) = (0, I(·,T), 0)` using the right-sided L1
/// scheme, sourced by `(0, I, 0)`.
///
/// In the transpose form the result is the exact adjoint of the discrete
/// forward scheme, so [`crate::fbsm::gradient_field`] is the true gradient
/// of the discrete objective (up to the factor `2·dx·dy·dt`).
pub fn solve_adjoint_with(
    params: &ModelParams,
    state: &StateTrajectory,
    u: &ControlField,
    form: AdjointForm,
) -> Result<AdjointTrajectory> {
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
    let cells = grid.len();

    let mut memory = L1Memory::new(params.alpha, steps, 3 * cells)?;
    let scale = memory.scale(params.dt);

    let terminal = state.last();
    let zero = Field2D::zeros(grid);
    let terminal_snapshot = AdjointTriple {
        rho1: zero.clone(),
        rho2: terminal.i.clone(),
        rho3: zero.clone(),
    };
    let coupling = scale / params.dt;
    let terminal_effective = AdjointTriple {
        rho1: zero.clone(),
        rho2: terminal.i.scaled(coupling),
        rho3: zero,
    };
    let anchor = pack(terminal_effective.components());

    let mut current = anchor.clone();
    let mut next = vec![0.0; 3 * cells];
    let mut drive = vec![0.0; 3 * cells];
    let mut spread = vec![0.0; cells];
    let mut history = vec![0.0; 3 * cells];
    let mut increment = vec![0.0; 3 * cells];
    let mut flux = FluxLinearization::new(&terminal.s, params.p, &params.diffusion);

    let mut reversed = Vec::with_capacity(steps + 1);
    reversed.push(terminal_snapshot);

    for s in 1..=steps {
        let m = steps - s;
        let nu = state.snapshot(m);
        for (c, base) in nu.components().iter().enumerate() {
            flux.rebase(base.values(), params.p, &params.diffusion);
            let rho = &current[c * cells..(c + 1) * cells];
            match form {
                AdjointForm::Transpose => flux.apply_transpose(rho, &mut spread),
                AdjointForm::Verbatim => flux.apply(rho, &mut spread),
            }
            for k in 0..cells {
                drive[c * cells + k] = params.lambda[c] * spread[k];
            }
        }
        let control = u.frame(m).values();
        for k in 0..cells {
            let matrix = CellMatrix3::linearization(nu.s.values()[k], nu.i.values()[k], control[k], params);
            let matrix = match form {
                AdjointForm::Transpose => matrix.transpose(),
                AdjointForm::Verbatim => matrix,
            };
            let coupled = matrix.mul_vec([current[k], current[cells + k], current[2 * cells + k]]);
            for c in 0..3 {
                drive[c * cells + k] += coupled[c];
            }
            drive[cells + k] += nu.i.values()[k];
        }
        memory.history(&mut history);
        let tail = memory.weight(s);
        for j in 0..3 * cells {
            next[j] = current[j] + scale * drive[j] - history[j] - tail * anchor[j];
        }
        guard("adjoint", m, params.dt, &next, ADJOINT_BLOW_UP_THRESHOLD)?;
        for j in 0..3 * cells {
            increment[j] = next[j] - current[j];
        }
        memory.push(&increment);
        std::mem::swap(&mut current, &mut next);
        reversed.push(AdjointTriple::from_components(unpack(grid, &current)));
    }
    reversed.reverse();

    Ok(AdjointTrajectory {
        dt: params.dt,
        snapshots: reversed,
        terminal_effective,
    })
}
