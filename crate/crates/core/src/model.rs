//! Pointwise algebra of the controlled SIR system: reaction terms, their
//! linearization, the control sensitivity and the objective functional.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DiffusionOptions, Field2D, GridSpec};
use crate::solvers::{ControlField, StateTrajectory};

/// Scalar coefficients of the model plus the time discretization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Order of the Caputo derivative, in (0, 1].
    pub alpha: f64,
    /// p-Laplacian exponent, ≥ 2.
    pub p: f64,
    /// Diffusion coefficients for S, I, R in km²/day.
    pub lambda: [f64; 3],
    /// Birth rate per day.
    pub beta: f64,
    /// Natural death rate per day.
    pub xi: f64,
    /// Transmission rate, km²/(people·day).
    pub mu: f64,
    /// Recovery rate per day.
    pub kappa: f64,
    /// Weight of the vaccination cost.
    pub eta: f64,
    /// Final time in days.
    pub horizon: f64,
    /// Time step in days.
    pub dt: f64,
    pub diffusion: DiffusionOptions,
}

impl Default for ModelParams {
    /// The preset rates with `α = 1`, `p = 5`, `η = 1` and `dt = 0.01`.
    fn default() -> Self {
        ModelParams {
            alpha: 1.0,
            p: 5.0,
            lambda: [0.1; 3],
            beta: 0.02,
            xi: 0.03,
            mu: 0.9,
            kappa: 0.04,
            eta: 1.0,
            horizon: 80.0,
            dt: 0.01,
            diffusion: DiffusionOptions::default(),
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::validation("alpha", "in (0, 1]", self.alpha));
        }
        if !(self.p >= 2.0 && self.p.is_finite()) {
            return Err(Error::validation("p", "at least 2", self.p));
        }
        let rates = [
            ("lambda1", self.lambda[0]),
            ("lambda2", self.lambda[1]),
            ("lambda3", self.lambda[2]),
            ("beta", self.beta),
            ("xi", self.xi),
            ("mu", self.mu),
            ("kappa", self.kappa),
        ];
        for (name, value) in rates {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::validation(name, "nonnegative", value));
            }
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::validation("eta", "strictly positive", self.eta));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::validation("dt", "strictly positive", self.dt));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::validation("horizon", "strictly positive", self.horizon));
        }
        let ratio = self.horizon / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::validation("horizon", "an integer multiple of dt", self.horizon));
        }
        let d = &self.diffusion;
        if !(d.epsilon >= 0.0 && d.epsilon.is_finite()) {
            return Err(Error::validation("epsilon", "nonnegative", d.epsilon));
        }
        if let Some(r) = d.reference_density {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::validation("reference_density", "strictly positive", r));
            }
        }
        Ok(())
    }

    /// Number of time steps `horizon / dt`.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// The three compartment densities (people per km²) on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTriple {
    pub s: Field2D,
    pub i: Field2D,
    pub r: Field2D,
}

impl StateTriple {
    pub fn new(s: Field2D, i: Field2D, r: Field2D) -> Result<Self> {
        s.same_grid(&i)?;
        s.same_grid(&r)?;
        Ok(StateTriple { s, i, r })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        StateTriple {
            s: Field2D::zeros(grid),
            i: Field2D::zeros(grid),
            r: Field2D::zeros(grid),
        }
    }

    pub fn uniform(grid: GridSpec, s: f64, i: f64, r: f64) -> Self {
        StateTriple {
            s: Field2D::constant(grid, s),
            i: Field2D::constant(grid, i),
            r: Field2D::constant(grid, r),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        self.s.grid()
    }

    pub fn components(&self) -> [&Field2D; 3] {
        [&self.s, &self.i, &self.r]
    }

    pub fn from_components([s, i, r]: [Field2D; 3]) -> Self {
        StateTriple { s, i, r }
    }

    /// Total density `N = S + I + R`.
    pub fn total(&self) -> Field2D {
        let mut n = self.s.clone();
        n.add_scaled(1.0, &self.i);
        n.add_scaled(1.0, &self.r);
        n
    }

    /// Total number of people on the domain.
    pub fn population(&self) -> f64 {
        self.total().integral()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.components().iter().all(|f| f.min() >= 0.0)
    }

    pub(crate) fn pack(&self) -> Vec<f64> {
        pack(self.components())
    }

    pub(crate) fn unpack(grid: GridSpec, packed: &[f64]) -> Self {
        Self::from_components(unpack(grid, packed))
    }
}

pub(crate) fn pack(fields: [&Field2D; 3]) -> Vec<f64> {
    fields.iter().flat_map(|f| f.values().iter().copied()).collect()
}

pub(crate) fn unpack(grid: GridSpec, packed: &[f64]) -> [Field2D; 3] {
    let n = grid.len();
    std::array::from_fn(|c| {
        Field2D::from_values(grid, packed[c * n..(c + 1) * n].to_vec()).expect("packed length matches grid")
    })
}

/// Reaction rates (Ψ₁, Ψ₂, Ψ₃) at one cell.
#[inline]
pub(crate) fn reaction_at(s: f64, i: f64, r: f64, u: f64, params: &ModelParams) -> [f64; 3] {
    let infection = params.mu * s * i;
    let vaccination = u * s;
    [
        params.beta * (s + i + r) - infection - params.xi * s - vaccination,
        infection - (params.xi + params.kappa) * i,
        params.kappa * i - params.xi * r + vaccination,
    ]
}

/// Reaction terms of the controlled system, pointwise.
pub fn reaction(state: &StateTriple, u: &Field2D, params: &ModelParams) -> Result<[Field2D; 3]> {
    state.s.same_grid(u)?;
    let grid = *state.grid();
    let mut out = [Field2D::zeros(grid), Field2D::zeros(grid), Field2D::zeros(grid)];
    for k in 0..grid.len() {
        let psi = reaction_at(
            state.s.values()[k],
            state.i.values()[k],
            state.r.values()[k],
            u.values()[k],
            params,
        );
        for c in 0..3 {
            out[c].values_mut()[k] = psi[c];
        }
    }
    Ok(out)
}

/// 3x3 matrix attached to one grid cell, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellMatrix3(pub [[f64; 3]; 3]);

impl CellMatrix3 {
    /// Jacobian of the reaction terms with respect to (S, I, R) at fixed control.
    #[inline]
    pub fn linearization(s: f64, i: f64, u: f64, params: &ModelParams) -> Self {
        let ModelParams {
            beta, xi, mu, kappa, ..
        } = *params;
        CellMatrix3([
            [beta - mu * i - xi - u, beta - mu * s, beta],
            [mu * i, mu * s - xi - kappa, 0.0],
            [u, kappa, -xi],
        ])
    }

    /// Observation `ℳ`: selects the infected compartment.
    pub fn observation() -> Self {
        CellMatrix3([[0.0; 3], [0.0, 1.0, 0.0], [0.0; 3]])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        CellMatrix3(std::array::from_fn(|r| std::array::from_fn(|c| m[c][r])))
    }

    #[inline]
    pub fn mul_vec(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        std::array::from_fn(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
    }

    pub fn column_sums(&self) -> [f64; 3] {
        let m = &self.0;
        std::array::from_fn(|c| m[0][c] + m[1][c] + m[2][c])
    }
}

/// The linearization matrix `𝒩` at every cell.
pub fn linearization_matrix(state: &StateTriple, u: &Field2D, params: &ModelParams) -> Result<Vec<CellMatrix3>> {
    state.s.same_grid(u)?;
    Ok((0..state.grid().len())
        .map(|k| CellMatrix3::linearization(state.s.values()[k], state.i.values()[k], u.values()[k], params))
        .collect())
}

/// Derivative of the reaction terms with respect to the control: `(-S, 0, S)`.
pub fn control_sensitivity(state: &StateTriple) -> Vec<[f64; 3]> {
    state.s.values().iter().map(|&s| [-s, 0.0, s]).collect()
}

/// Discrete objective
/// `‖I(·,T)‖²_{L²(Ω)} + ‖I‖²_{L²(Ω×(0,T))} + η ‖u‖²_{L²(Ω×(0,T))}`.
///
/// Space integrals carry the cell area; time integrals use the left-endpoint
/// rule over the `N` steps, so the final sample only enters the terminal term
/// (and the final control sample not at all, since it never drives the state).
pub fn objective(trajectory: &StateTrajectory, u: &ControlField, params: &ModelParams) -> Result<f64> {
    let steps = trajectory.steps();
    if u.steps() != steps {
        return Err(Error::Dimension(format!(
            "trajectory has {} steps but the control has {}",
            steps,
            u.steps()
        )));
    }
    if trajectory.grid() != u.grid() {
        return Err(Error::Dimension("trajectory and control live on different grids".into()));
    }
    let area = trajectory.grid().cell_area();
    let dt = trajectory.dt();
    let sq = |f: &Field2D| f.values().iter().map(|v| v * v).sum::<f64>();
    let terminal = sq(&trajectory.snapshot(steps).i);
    let mut running = 0.0;
    let mut control = 0.0;
    for n in 0..steps {
        running += sq(&trajectory.snapshot(n).i);
        control += sq(u.frame(n));
    }
    Ok(area * (terminal + dt * running + params.eta * dt * control))
}
