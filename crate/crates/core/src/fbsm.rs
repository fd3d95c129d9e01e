//! Forward-backward sweep for the vaccination control.

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field2D, GridSpec};
use crate::model::{objective, ModelParams, StateTriple};
use crate::solvers::{
    solve_adjoint_with, solve_state, AdjointForm, AdjointTrajectory, ControlField, StateTrajectory,
};

/// Value of the convergence functional before it has been computed.
pub const ERR_TEST_SENTINEL: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Relative tolerance `δ` of the convergence test.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Weight `ω` of the newly projected control in each update.
    pub relaxation: f64,
    /// Smallest weight tried when an update would raise the objective.
    /// Equal to `relaxation` disables the safeguard.
    pub min_relaxation: f64,
    /// Upper bound `1 - δ_u` on the control.
    pub control_cap: f64,
    pub adjoint_form: AdjointForm,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            tolerance: 1e-3,
            max_iterations: 200,
            relaxation: 0.5,
            min_relaxation: 0.5f64.powi(10),
            control_cap: 1.0 - 1e-6,
            adjoint_form: AdjointForm::Transpose,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::validation("tolerance", "strictly positive", self.tolerance));
        }
        if self.max_iterations == 0 {
            return Err(Error::validation("max_iterations", "at least 1", self.max_iterations));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::validation("relaxation", "in (0, 1]", self.relaxation));
        }
        if !(self.min_relaxation > 0.0 && self.min_relaxation <= self.relaxation) {
            return Err(Error::validation("min_relaxation", "in (0, relaxation]", self.min_relaxation));
        }
        if !(self.control_cap > 0.0 && self.control_cap < 1.0) {
            return Err(Error::validation("control_cap", "in (0, 1)", self.control_cap));
        }
        Ok(())
    }
}

/// Diagnostics of one sweep iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    /// Objective of the control used in this iteration's state solve.
    pub objective: f64,
    /// Convergence functional after the update (the sentinel on the first pass).
    pub err_test: f64,
    pub control_min: f64,
    pub control_max: f64,
    /// The updated control lies in `[0, cap]`.
    pub admissible: bool,
    /// Projecting the projected control again changes nothing.
    pub projection_idempotent: bool,
    /// Relaxation weight accepted for the update.
    pub relaxation: f64,
    /// `‖P(u) - u‖ / max(‖P(u)‖, ‖u‖)` in space-time L², the fixed-point residual
    /// of the control before the update.
    pub projection_residual: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub control: ControlField,
    pub state: StateTrajectory,
    pub adjoint: AdjointTrajectory,
    /// Objective of the final control.
    pub objective: f64,
    pub history: Vec<IterationRecord>,
    pub iterations: usize,
    pub converged: bool,
}

impl SweepResult {
    pub fn objective_history(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.objective).collect()
    }
}

/// Pointwise `min{cap, max(0, S(ρ₁ - ρ₃)/η)}`, the stationary point of
/// [`gradient_field`] clamped to the admissible box.
pub fn project_control(s: &Field2D, rho1: &Field2D, rho3: &Field2D, eta: f64, cap: f64) -> Result<Field2D> {
    s.same_grid(rho1)?;
    s.same_grid(rho3)?;
    if eta.is_nan() || eta <= 0.0 {
        return Err(Error::validation("eta", "strictly positive", eta));
    }
    let values = s
        .values()
        .iter()
        .zip(rho1.values())
        .zip(rho3.values())
        .map(|((&s, &r1), &r3)| clamp(s * (r1 - r3) / eta, cap))
        .collect();
    Field2D::from_values(*s.grid(), values)
}

/// Clamps into `[0, cap]`.
pub fn clamp(v: f64, cap: f64) -> f64 {
    v.max(0.0).min(cap)
}

/// `(1 - ω) u_old + ω u_proj`, evaluated as `u_old + ω (u_proj - u_old)`.
pub fn relax_control(u_old: &ControlField, u_proj: &ControlField, omega: f64) -> Result<ControlField> {
    u_proj.check_against(u_old.grid(), u_old.steps())?;
    let frames = u_old
        .frames()
        .iter()
        .zip(u_proj.frames())
        .map(|(a, b)| a.zip_map(b, |a, b| a + omega * (b - a)))
        .collect();
    ControlField::from_frames(frames, u_old.dt())
}

/// Everything the convergence test compares between iterations.
#[derive(Debug, Clone, Copy)]
pub struct IterateBundle<'a> {
    pub state: &'a StateTrajectory,
    pub adjoint: &'a AdjointTrajectory,
    pub control: &'a ControlField,
}

impl IterateBundle<'_> {
    fn quantities(&self) -> [Vec<&Field2D>; 7] {
        let s = self.state.snapshots();
        let a = self.adjoint.snapshots();
        [
            s.iter().map(|t| &t.s).collect(),
            s.iter().map(|t| &t.i).collect(),
            s.iter().map(|t| &t.r).collect(),
            a.iter().map(|t| &t.rho1).collect(),
            a.iter().map(|t| &t.rho2).collect(),
            a.iter().map(|t| &t.rho3).collect(),
            self.control.frames().iter().collect(),
        ]
    }
}

/// `min_k (δ‖q_k‖ - ‖q_k - q_k,old‖)` over S, I, R, ρ₁, ρ₂, ρ₃ and u, with
/// space-time L² norms. Nonnegative means converged.
pub fn err_test(current: &IterateBundle, previous: &IterateBundle, delta: f64) -> Result<f64> {
    let now = current.quantities();
    let old = previous.quantities();
    let mut worst = f64::INFINITY;
    for (q, q_old) in now.iter().zip(&old) {
        if q.len() != q_old.len() {
            return Err(Error::Dimension("iterates have different numbers of time levels".into()));
        }
        let weight = (q[0].grid().cell_area() * current.state.dt()).sqrt();
        let (mut norm, mut diff) = (ScaledNorm::default(), ScaledNorm::default());
        for (a, b) in q.iter().zip(q_old) {
            a.same_grid(b)?;
            for (&x, &y) in a.values().iter().zip(b.values()) {
                norm.add(x);
                diff.add(x - y);
            }
        }
        let psi = weight * (delta * norm.value() - diff.value());
        worst = worst.min(psi);
    }
    Ok(worst)
}

/// Euclidean norm accumulated with a running scale, so that sensitivities
/// near the top of the double range do not overflow when squared.
#[derive(Default)]
struct ScaledNorm {
    scale: f64,
    sum: f64,
}

impl ScaledNorm {
    fn add(&mut self, x: f64) {
        let a = x.abs();
        if a == 0.0 {
            return;
        }
        if a > self.scale {
            self.sum = 1.0 + self.sum * (self.scale / a) * (self.scale / a);
            self.scale = a;
        } else {
            self.sum += (a / self.scale) * (a / self.scale);
        }
    }

    fn value(&self) -> f64 {
        self.scale * self.sum.sqrt()
    }
}

/// `ℱ*ρ + ηu = S(ρ₃ - ρ₁) + ηu` at every control step, pairing the state at
/// level `n` with the adjoint at level `n + 1`. The last frame never drives
/// the state and is zero.
///
/// The derivative of the discrete objective in direction `w` is
/// `2 dx dy dt Σ_n ⟨gradient_n, w_n⟩`; see [`directional_derivative`].
pub fn gradient_field(
    state: &StateTrajectory,
    adjoint: &AdjointTrajectory,
    u: &ControlField,
    eta: f64,
) -> Result<ControlField> {
    let steps = state.steps();
    if adjoint.steps() != steps {
        return Err(Error::Dimension("state and adjoint differ in length".into()));
    }
    u.check_against(state.grid(), steps)?;
    let mut frames = Vec::with_capacity(steps + 1);
    for n in 0..steps {
        let rho = adjoint.paired_with_control(n);
        let s = &state.snapshot(n).s;
        let mut g = s.zip_map(&rho.rho3, |s, r3| s * r3);
        g.add_scaled(-1.0, &s.zip_map(&rho.rho1, |s, r1| s * r1));
        g.add_scaled(eta, u.frame(n));
        frames.push(g);
    }
    frames.push(Field2D::zeros(*state.grid()));
    ControlField::from_frames(frames, state.dt())
}

/// `2 dx dy dt Σ_n ⟨gradient_n, w_n⟩`.
pub fn directional_derivative(gradient: &ControlField, w: &ControlField) -> Result<f64> {
    w.check_against(gradient.grid(), gradient.steps())?;
    let weight = 2.0 * gradient.grid().cell_area() * gradient.dt();
    Ok(weight
        * gradient
            .frames()
            .iter()
            .zip(w.frames())
            .map(|(g, w)| g.dot(w))
            .sum::<f64>())
}

/// The projected control for every step of a state/adjoint pair.
pub fn project_all(
    state: &StateTrajectory,
    adjoint: &AdjointTrajectory,
    eta: f64,
    cap: f64,
) -> Result<ControlField> {
    let frames = (0..=state.steps())
        .map(|n| {
            let rho = adjoint.paired_with_control(n);
            project_control(&state.snapshot(n).s, &rho.rho1, &rho.rho3, eta, cap)
        })
        .collect::<Result<Vec<_>>>()?;
    ControlField::from_frames(frames, state.dt())
}

fn at_iteration<T>(iteration: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Sweep {
        iteration,
        source: Box::new(e),
    })
}

/// Relative space-time distance between two controls.
pub fn control_residual(u: &ControlField, v: &ControlField) -> Result<f64> {
    v.check_against(u.grid(), u.steps())?;
    let (mut diff, mut a, mut b) = (0.0, 0.0, 0.0);
    for (x, y) in u.frames().iter().zip(v.frames()) {
        for (&x, &y) in x.values().iter().zip(y.values()) {
            diff += (x - y) * (x - y);
            a += x * x;
            b += y * y;
        }
    }
    let scale = a.max(b);
    Ok(if scale > 0.0 { (diff / scale).sqrt() } else { 0.0 })
}

/// The sweep: starting from `u ≡ 0`, alternate state solve, adjoint solve,
/// projection and relaxation until the convergence test is nonnegative or
/// the iteration budget runs out.
///
/// An update that would raise the objective is retried with half the
/// weight, down to `min_relaxation`; the weight then grows back by a factor
/// of two per iteration up to `relaxation`.
pub fn run_sweep(params: &ModelParams, grid: &GridSpec, init: &StateTriple, config: &SweepConfig) -> Result<SweepResult> {
    params.validate()?;
    config.validate()?;
    let steps = params.steps();
    let cap = config.control_cap;
    let mut u = ControlField::zeros(*grid, steps, params.dt);
    let mut state = at_iteration(1, solve_state(params, grid, init, &u))?;
    let mut j = at_iteration(1, objective(&state, &u, params))?;
    let mut previous: Option<(StateTrajectory, AdjointTrajectory, ControlField)> = None;
    let mut history = Vec::new();
    let mut err = ERR_TEST_SENTINEL;
    let mut converged = false;
    let mut omega = config.relaxation;

    for iteration in 1..=config.max_iterations {
        let adjoint = at_iteration(iteration, solve_adjoint_with(params, &state, &u, config.adjoint_form))?;
        let projected = at_iteration(iteration, project_all(&state, &adjoint, params.eta, cap))?;
        let idempotent = projected
            .frames()
            .iter()
            .all(|f| f.values().iter().all(|&v| clamp(v, cap) == v));
        let residual = at_iteration(iteration, control_residual(&u, &projected))?;

        let (updated, next_state, next_j) = loop {
            let candidate = at_iteration(iteration, relax_control(&u, &projected, omega))?;
            let cs = at_iteration(iteration, solve_state(params, grid, init, &candidate))?;
            let cj = at_iteration(iteration, objective(&cs, &candidate, params))?;
            if cj <= j || omega <= config.min_relaxation {
                if cj > j * (1.0 + 1e-12) {
                    warn!("iteration {iteration}: objective rose from {j} to {cj} at the smallest weight");
                }
                break (candidate, cs, cj);
            }
            omega = (omega * 0.5).max(config.min_relaxation);
        };

        if let Some((old_state, old_adjoint, old_u)) = &previous {
            let now = IterateBundle {
                state: &state,
                adjoint: &adjoint,
                control: &updated,
            };
            let before = IterateBundle {
                state: old_state,
                adjoint: old_adjoint,
                control: old_u,
            };
            err = at_iteration(iteration, err_test(&now, &before, config.tolerance))?;
        }
        history.push(IterationRecord {
            objective: j,
            err_test: err,
            control_min: updated.min(),
            control_max: updated.max(),
            admissible: updated.is_admissible(cap),
            projection_idempotent: idempotent,
            relaxation: omega,
            projection_residual: residual,
        });
        debug!("iteration {iteration}: J = {j:.6e}, err_test = {err:.3e}, weight = {omega}, residual = {residual:.3e}");
        previous = Some((std::mem::replace(&mut state, next_state), adjoint, updated.clone()));
        u = updated;
        j = next_j;
        omega = (omega * 2.0).min(config.relaxation);
        if err >= 0.0 {
            converged = true;
            break;
        }
    }
    let iterations = history.len();
    if converged {
        info!("sweep converged after {iterations} iterations");
    } else {
        warn!("sweep stopped after {iterations} iterations without converging");
    }

    let adjoint = at_iteration(iterations, solve_adjoint_with(params, &state, &u, config.adjoint_form))?;
    Ok(SweepResult {
        control: u,
        state,
        adjoint,
        objective: j,
        history,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::solve_adjoint;
    use proptest::prelude::*;

    fn grid() -> GridSpec {
        GridSpec::new(3, 3, 1.0, 1.0).unwrap()
    }

    #[test]
    fn projection_examples() {
        let g = grid();
        let s = Field2D::constant(g, 10.0);
        let rho = Field2D::constant(g, 0.3);
        assert_eq!(project_control(&s, &rho, &rho, 1.0, 0.99).unwrap().max(), 0.0);
        let rho3 = Field2D::constant(g, 0.25);
        let u = project_control(&s, &rho, &rho3, 1.0, 0.99).unwrap();
        assert_close!(u.values()[4], 0.5, 1e-12);
        let u = project_control(&s, &rho3, &rho, 1.0, 0.99).unwrap();
        assert_eq!(u.max(), 0.0);
        let big = Field2D::constant(g, 0.5);
        let u = project_control(&s, &big, &Field2D::zeros(g), 2.5, 0.99).unwrap();
        assert_eq!(u.min(), 0.99);
        assert!(project_control(&s, &rho, &rho, 0.0, 0.99).is_err());
    }

    #[test]
    fn relaxation_examples() {
        let g = grid();
        let zero = ControlField::zeros(g, 4, 0.1);
        let proj = ControlField::constant(g, 4, 0.1, 0.8);
        assert_eq!(relax_control(&zero, &proj, 1.0).unwrap(), proj);
        assert_eq!(relax_control(&proj, &proj, 0.3).unwrap(), proj);
        let half = relax_control(&zero, &proj, 0.5).unwrap();
        assert!(half.frames().iter().all(|f| f.values().iter().all(|&v| v == 0.4)));
    }

    fn run_small(u: &ControlField, params: &ModelParams) -> (StateTrajectory, AdjointTrajectory) {
        let g = *u.grid();
        let mut init = StateTriple::uniform(g, 50.0, 0.0, 0.0);
        init.i.values_mut()[4] = 10.0;
        let state = solve_state(params, &g, &init, u).unwrap();
        let adjoint = solve_adjoint(params, &state, u).unwrap();
        (state, adjoint)
    }

    fn small_params() -> ModelParams {
        ModelParams {
            alpha: 0.9,
            p: 3.0,
            horizon: 0.1,
            dt: 0.01,
            ..Default::default()
        }
    }

    #[test]
    fn err_test_cases() {
        let params = small_params();
        let u = ControlField::constant(grid(), params.steps(), params.dt, 0.2);
        let (state, adjoint) = run_small(&u, &params);
        let bundle = IterateBundle {
            state: &state,
            adjoint: &adjoint,
            control: &u,
        };
        let same = err_test(&bundle, &bundle, 1e-3).unwrap();
        assert!(same > 0.0);

        let moved = ControlField::constant(grid(), params.steps(), params.dt, 0.3);
        let shifted = IterateBundle {
            control: &moved,
            ..bundle
        };
        assert!(err_test(&shifted, &bundle, 1e-3).unwrap() < 0.0);
    }

    #[test]
    fn gradient_vanishes_without_adjoint_or_control() {
        let params = ModelParams {
            horizon: 0.1,
            dt: 0.01,
            ..Default::default()
        };
        let g = grid();
        let u = ControlField::zeros(g, params.steps(), params.dt);
        let state = solve_state(&params, &g, &StateTriple::zeros(g), &u).unwrap();
        let adjoint = solve_adjoint(&params, &state, &u).unwrap();
        let grad = gradient_field(&state, &adjoint, &u, 1.0).unwrap();
        assert_eq!(grad.max(), 0.0);
        assert_eq!(grad.min(), 0.0);
    }

    #[test]
    fn gradient_matches_objective_difference() {
        for alpha in [1.0, 0.9] {
            let params = ModelParams {
                alpha,
                ..small_params()
            };
            let g = grid();
            let steps = params.steps();
            let u = ControlField::constant(g, steps, params.dt, 0.3);
            let (state, adjoint) = run_small(&u, &params);
            let grad = gradient_field(&state, &adjoint, &u, params.eta).unwrap();
            let w = ControlField::from_frames(
                (0..=steps).map(|n| Field2D::from_fn(g, |x, y| (x - 2.0 * y + 0.3 * n as f64).sin() * 0.1)).collect(),
                params.dt,
            )
            .unwrap();
            let eps = 1e-5;
            let mut bumped = u.clone();
            for n in 0..=steps {
                bumped.frame_mut(n).add_scaled(eps, w.frame(n));
            }
            let (moved, _) = run_small(&bumped, &params);
            let fd = (objective(&moved, &bumped, &params).unwrap() - objective(&state, &u, &params).unwrap()) / eps;
            let predicted = directional_derivative(&grad, &w).unwrap();
            assert!((fd - predicted).abs() < 1e-3 * fd.abs(), "alpha {alpha}: {fd} vs {predicted}");
        }
    }

    #[test]
    fn sweep_without_infection_stays_uncontrolled() {
        let g = grid();
        let params = ModelParams {
            mu: 0.0,
            horizon: 1.0,
            dt: 0.05,
            ..Default::default()
        };
        let init = StateTriple::uniform(g, 50.0, 0.0, 0.0);
        let result = run_sweep(&params, &g, &init, &SweepConfig::default()).unwrap();
        assert!(result.converged);
        assert!(result.iterations <= 2);
        assert_eq!(result.control.max(), 0.0);
        assert_eq!(result.history[0].err_test, ERR_TEST_SENTINEL);
    }

    #[test]
    fn sweep_reduces_objective() {
        let g = grid();
        let params = ModelParams {
            alpha: 0.9,
            horizon: 2.0,
            dt: 0.02,
            eta: 0.5,
            ..Default::default()
        };
        let mut init = StateTriple::uniform(g, 50.0, 0.0, 0.0);
        init.i.values_mut()[4] = 10.0;
        let result = run_sweep(&params, &g, &init, &SweepConfig::default()).unwrap();
        assert!(result.converged, "{:?}", result.history.last());
        assert!(result.objective < result.history[0].objective);
        assert!(result.control.is_admissible(SweepConfig::default().control_cap));
        assert!(result.history.iter().all(|r| r.admissible && r.projection_idempotent));
    }

    #[test]
    fn config_validation() {
        let bad = SweepConfig {
            relaxation: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(SweepConfig::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn projection_is_idempotent(s in 0.0..80.0f64, r1 in -2.0..2.0f64, r3 in -2.0..2.0f64, eta in 0.01..10.0f64) {
            let g = grid();
            let cap = 1.0 - 1e-6;
            let u = project_control(&Field2D::constant(g, s), &Field2D::constant(g, r1), &Field2D::constant(g, r3), eta, cap).unwrap();
            prop_assert!(u.values().iter().all(|&v| clamp(v, cap) == v));
        }

        #[test]
        fn err_test_sign_is_scale_invariant(c in 0.1..10.0f64) {
            let params = small_params();
            let g = grid();
            let u = ControlField::constant(g, params.steps(), params.dt, 0.2);
            let v = ControlField::constant(g, params.steps(), params.dt, 0.2 + 1e-4);
            let (state, adjoint) = run_small(&u, &params);
            let a = IterateBundle { state: &state, adjoint: &adjoint, control: &u };
            let b = IterateBundle { state: &state, adjoint: &adjoint, control: &v };
            let base = err_test(&a, &b, 1e-3).unwrap();

            let scale_state = |t: &StateTrajectory| StateTrajectory::from_snapshots(
                t.snapshots().iter().map(|x| StateTriple::from_components(x.components().map(|f| f.scaled(c)))).collect(),
                t.dt(),
            );
            let scale_u = |u: &ControlField| ControlField::from_frames(u.frames().iter().map(|f| f.scaled(c)).collect(), u.dt()).unwrap();
            let sa = scale_state(&state);
            let adj_scaled = scale_adjoint(&adjoint, c);
            let (su, sv) = (scale_u(&u), scale_u(&v));
            let a2 = IterateBundle { state: &sa, adjoint: &adj_scaled, control: &su };
            let b2 = IterateBundle { state: &sa, adjoint: &adj_scaled, control: &sv };
            let scaled = err_test(&a2, &b2, 1e-3).unwrap();
            prop_assert!((scaled - c * base).abs() <= 1e-9 * (1.0 + scaled.abs()));
        }
    }

    fn scale_adjoint(a: &AdjointTrajectory, c: f64) -> AdjointTrajectory {
        AdjointTrajectory::from_parts(
            a.snapshots()
                .iter()
                .map(|t| crate::solvers::AdjointTriple::from_components(t.components().map(|f| f.scaled(c))))
                .collect(),
            crate::solvers::AdjointTriple::from_components(a.terminal_effective().components().map(|f| f.scaled(c))),
            a.dt(),
        )
    }
}
