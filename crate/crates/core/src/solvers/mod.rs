//! Explicit L1 time marching for the state, adjoint and linearized systems.

mod adjoint;
mod linearized;
pub(crate) mod memory;
mod state;

pub use adjoint::{solve_adjoint, solve_adjoint_with, AdjointForm};
pub use linearized::solve_linearized;
pub use state::{probe_time_step, solve_state};

use crate::error::{Error, Result};
use crate::grid::{Field2D, GridSpec};
use crate::model::StateTriple;

/// Any value above this magnitude aborts a forward march.
pub const BLOW_UP_THRESHOLD: f64 = 1e12;

/// Limit for the adjoint march. Ahead of the infection front the exact
/// sensitivities grow like `exp(μ S t)` backward in time and legitimately
/// exceed [`BLOW_UP_THRESHOLD`] by many orders of magnitude, so only
/// overflow aborts it.
pub const ADJOINT_BLOW_UP_THRESHOLD: f64 = f64::MAX;

/// Control samples at every time level, `u(·, t_n)` for `n = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    dt: f64,
    frames: Vec<Field2D>,
}

impl ControlField {
    pub fn zeros(grid: GridSpec, steps: usize, dt: f64) -> Self {
        Self::constant(grid, steps, dt, 0.0)
    }

    pub fn constant(grid: GridSpec, steps: usize, dt: f64, value: f64) -> Self {
        ControlField {
            dt,
            frames: vec![Field2D::constant(grid, value); steps + 1],
        }
    }

    pub fn from_frames(frames: Vec<Field2D>, dt: f64) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Dimension("a control needs at least one frame".into()))?;
        for f in &frames[1..] {
            first.same_grid(f)?;
        }
        Ok(ControlField { dt, frames })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.frames.len() - 1
    }

    pub fn grid(&self) -> &GridSpec {
        self.frames[0].grid()
    }

    pub fn frames(&self) -> &[Field2D] {
        &self.frames
    }

    pub fn frame(&self, n: usize) -> &Field2D {
        &self.frames[n]
    }

    pub fn frame_mut(&mut self, n: usize) -> &mut Field2D {
        &mut self.frames[n]
    }

    pub fn max(&self) -> f64 {
        self.frames.iter().map(Field2D::max).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.frames.iter().map(Field2D::min).fold(f64::INFINITY, f64::min)
    }

    /// True when every sample lies in `[0, cap]`.
    pub fn is_admissible(&self, cap: f64) -> bool {
        self.frames
            .iter()
            .all(|f| f.values().iter().all(|&v| (0.0..=cap).contains(&v)))
    }

    pub(crate) fn check_against(&self, grid: &GridSpec, steps: usize) -> Result<()> {
        if self.steps() != steps {
            return Err(Error::Dimension(format!(
                "control has {} steps, expected {}",
                self.steps(),
                steps
            )));
        }
        if self.grid() != grid {
            return Err(Error::Dimension("control grid differs from the state grid".into()));
        }
        Ok(())
    }
}

/// Negative values met (and clipped) during a forward march.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PositivityLog {
    /// Most negative value before clipping, 0 if none occurred.
    pub min_value: f64,
    /// Largest density seen at any step.
    pub peak_density: f64,
    /// Total people removed by clipping over the run.
    pub clipped_mass: f64,
    /// Largest clipped mass in a single step.
    pub max_step_clipped_mass: f64,
    /// People on the domain at `t = 0`.
    pub initial_mass: f64,
}

impl PositivityLog {
    /// `-min_value / peak_density`.
    pub fn relative_undershoot(&self) -> f64 {
        if self.peak_density > 0.0 {
            (-self.min_value).max(0.0) / self.peak_density
        } else {
            0.0
        }
    }

    pub fn clipped_fraction(&self) -> f64 {
        if self.initial_mass > 0.0 {
            self.clipped_mass / self.initial_mass
        } else {
            0.0
        }
    }

    pub fn max_step_clipped_fraction(&self) -> f64 {
        if self.initial_mass > 0.0 {
            self.max_step_clipped_mass / self.initial_mass
        } else {
            0.0
        }
    }
}

/// State snapshots at every time level, step 0 being the initial data.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    dt: f64,
    snapshots: Vec<StateTriple>,
    positivity: PositivityLog,
}

impl StateTrajectory {
    pub fn from_snapshots(snapshots: Vec<StateTriple>, dt: f64) -> Self {
        assert!(!snapshots.is_empty(), "a trajectory needs at least one snapshot");
        StateTrajectory {
            dt,
            snapshots,
            positivity: PositivityLog::default(),
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.snapshots.len() - 1
    }

    pub fn grid(&self) -> &GridSpec {
        self.snapshots[0].grid()
    }

    pub fn snapshots(&self) -> &[StateTriple] {
        &self.snapshots
    }

    pub fn snapshot(&self, n: usize) -> &StateTriple {
        &self.snapshots[n]
    }

    pub fn last(&self) -> &StateTriple {
        self.snapshots.last().expect("nonempty")
    }

    /// Snapshot nearest to time `t`.
    pub fn at_time(&self, t: f64) -> &StateTriple {
        let n = ((t / self.dt).round().max(0.0) as usize).min(self.steps());
        &self.snapshots[n]
    }

    pub fn positivity(&self) -> &PositivityLog {
        &self.positivity
    }

    /// Grid-integrated S, I, R at every step.
    pub fn totals(&self) -> Vec<[f64; 3]> {
        self.snapshots
            .iter()
            .map(|t| [t.s.integral(), t.i.integral(), t.r.integral()])
            .collect()
    }
}

/// Adjoint components `(ρ₁, ρ₂, ρ₃)` on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTriple {
    pub rho1: Field2D,
    pub rho2: Field2D,
    pub rho3: Field2D,
}

impl AdjointTriple {
    pub fn zeros(grid: GridSpec) -> Self {
        AdjointTriple {
            rho1: Field2D::zeros(grid),
            rho2: Field2D::zeros(grid),
            rho3: Field2D::zeros(grid),
        }
    }

    pub fn components(&self) -> [&Field2D; 3] {
        [&self.rho1, &self.rho2, &self.rho3]
    }

    pub fn from_components([rho1, rho2, rho3]: [Field2D; 3]) -> Self {
        AdjointTriple { rho1, rho2, rho3 }
    }
}

/// Adjoint snapshots at every time level.
///
/// The last snapshot holds the terminal datum `(0, I(·,T), 0)`. For `α < 1`
/// the discrete march couples to it through the factor `dt^{α-1} Γ(2-α)`;
/// the scaled value is kept separately as the effective terminal state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTrajectory {
    dt: f64,
    snapshots: Vec<AdjointTriple>,
    terminal_effective: AdjointTriple,
}

impl AdjointTrajectory {
    pub fn from_parts(snapshots: Vec<AdjointTriple>, terminal_effective: AdjointTriple, dt: f64) -> Self {
        assert!(!snapshots.is_empty(), "a trajectory needs at least one snapshot");
        AdjointTrajectory {
            dt,
            snapshots,
            terminal_effective,
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.snapshots.len() - 1
    }

    pub fn snapshots(&self) -> &[AdjointTriple] {
        &self.snapshots
    }

    pub fn snapshot(&self, n: usize) -> &AdjointTriple {
        &self.snapshots[n]
    }

    pub fn terminal_effective(&self) -> &AdjointTriple {
        &self.terminal_effective
    }

    /// The adjoint value paired with the control at step `n`, i.e. the one
    /// at level `n + 1` (effective value at the terminal level).
    pub fn paired_with_control(&self, n: usize) -> &AdjointTriple {
        if n + 1 >= self.steps() {
            &self.terminal_effective
        } else {
            &self.snapshots[n + 1]
        }
    }
}

/// Perturbation snapshots of the linearized system, `y(·, t_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationTrajectory {
    dt: f64,
    snapshots: Vec<StateTriple>,
}

impl PerturbationTrajectory {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.snapshots.len() - 1
    }

    pub fn snapshots(&self) -> &[StateTriple] {
        &self.snapshots
    }

    pub fn snapshot(&self, n: usize) -> &StateTriple {
        &self.snapshots[n]
    }

    pub fn last(&self) -> &StateTriple {
        self.snapshots.last().expect("nonempty")
    }
}

fn guard(solver: &'static str, step: usize, dt: f64, values: &[f64], limit: f64) -> Result<()> {
    if let Some(&value) = values.iter().find(|v| v.is_nan() || v.abs() > limit) {
        return Err(Error::Instability {
            solver,
            step,
            time: step as f64 * dt,
            value: value.abs(),
        });
    }
    Ok(())
}
