//! Independent reference checks, each comparing a library result against a
//! value obtained another way (closed form, special-function identity,
//! finite differences or a dense linear solve).

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::fbsm::{directional_derivative, gradient_field, project_control};
use crate::fractional::{caputo_left, caputo_right, gamma, mittag_leffler, TimeSeries};
use crate::grid::{p_laplacian, DiffusionOptions, Field2D, FluxLinearization, GridSpec};
use crate::model::{objective, reaction_at, CellMatrix3, ModelParams, StateTriple};
use crate::scenario::preset_table2;
use crate::solvers::{solve_adjoint, solve_linearized, solve_state, ControlField};

/// One reference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub name: &'static str,
    /// Absolute or relative discrepancy, as described by `detail`.
    pub error: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl OracleCheck {
    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }

    fn absolute(name: &'static str, computed: f64, expected: f64, tolerance: f64) -> Self {
        OracleCheck {
            name,
            error: (computed - expected).abs(),
            tolerance,
            detail: format!("computed {computed:.6e}, expected {expected:.6e} (absolute)"),
        }
    }

    fn relative(name: &'static str, computed: f64, expected: f64, tolerance: f64) -> Self {
        OracleCheck {
            name,
            error: ((computed - expected) / expected).abs(),
            tolerance,
            detail: format!("computed {computed:.6e}, expected {expected:.6e} (relative)"),
        }
    }
}

/// Runs every check in order.
pub fn run_oracles() -> Result<Vec<OracleCheck>> {
    Ok(vec![
        mittag_leffler_erfc()?,
        caputo_of_linear()?,
        caputo_right_reversal()?,
        neumann_eigenfunction(),
        reaction_value(),
        jacobian_entry(),
        jacobian_column_sums(),
        homogeneous_growth_law()?,
        dense_adjoint_gradient()?,
        linearized_difference()?,
        objective_difference()?,
        projection_example()?,
        preset_population(),
    ])
}

/// Renders checks as an aligned text table.
pub fn format_table(checks: &[OracleCheck]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut out = format!("{:width$}  {:>10}  {:>10}  result\n", "check", "error", "tolerance");
    for c in checks {
        out.push_str(&format!(
            "{:width$}  {:>10.3e}  {:>10.3e}  {}  {}\n",
            c.name,
            c.error,
            c.tolerance,
            if c.passed() { "PASS" } else { "FAIL" },
            c.detail
        ));
    }
    out
}

fn mittag_leffler_erfc() -> Result<OracleCheck> {
    let expected = 1f64.exp() * statrs::function::erf::erfc(-1.0);
    Ok(OracleCheck::relative(
        "Mittag-Leffler E_1/2(1) = e erfc(-1)",
        mittag_leffler(0.5, 1.0)?,
        expected,
        1e-10,
    ))
}

fn caputo_of_linear() -> Result<OracleCheck> {
    let series = TimeSeries::sample(|t| t, 1e-3, 1000)?;
    Ok(OracleCheck::relative(
        "Caputo derivative of t at t=1, order 0.5",
        caputo_left(&series, 0.5)?,
        1.0 / gamma(1.5)?,
        1e-10,
    ))
}

fn caputo_right_reversal() -> Result<OracleCheck> {
    let alpha = 0.6;
    let series = TimeSeries::sample(|t| t * t, 1e-3, 1000)?;
    let right = caputo_right(&series.reversed(), alpha)?;
    let exact = 2.0 / gamma(3.0 - alpha)?;
    let mut check = OracleCheck::relative("right Caputo of reversed t^2 at order 0.6", right, exact, 1e-2);
    check.detail.push_str(&format!(", left {:.6e}", caputo_left(&series, alpha)?));
    Ok(check)
}

fn neumann_eigenfunction() -> OracleCheck {
    let grid = GridSpec {
        nx: 21,
        ny: 21,
        dx: 1.0,
        dy: 1.0,
    };
    let length = 21.0;
    let k = std::f64::consts::PI / length;
    let u = Field2D::from_fn(grid, |x, _| (k * x).cos());
    let lap = p_laplacian(&u, 2.0, &DiffusionOptions::default());
    let mut worst: f64 = 0.0;
    for j in 1..grid.ny - 1 {
        for i in 1..grid.nx - 1 {
            let n = grid.index(i, j);
            worst = worst.max((lap.values()[n] + k * k * u.values()[n]).abs());
        }
    }
    OracleCheck {
        name: "p=2 operator on a Neumann cosine mode",
        error: worst / (k * k),
        tolerance: 1e-2,
        detail: "max interior |Lu + k^2 u| / k^2".into(),
    }
}

fn reaction_value() -> OracleCheck {
    let [_, infected, _] = reaction_at(50.0, 10.0, 0.0, 0.0, &ModelParams::default());
    OracleCheck::absolute("infected reaction at S=50, I=10", infected, 449.3, 1e-9)
}

fn jacobian_entry() -> OracleCheck {
    let m = CellMatrix3::linearization(50.0, 10.0, 0.0, &ModelParams::default());
    OracleCheck::absolute("Jacobian entry dI'/dI at S=50, I=10", m.0[1][1], 44.93, 1e-9)
}

fn jacobian_column_sums() -> OracleCheck {
    let params = ModelParams::default();
    let m = CellMatrix3::linearization(37.0, 4.0, 0.3, &params);
    let expected = params.beta - params.xi;
    let error = m.column_sums().iter().map(|c| (c - expected).abs()).fold(0.0, f64::max);
    OracleCheck {
        name: "Jacobian column sums equal beta - xi",
        error,
        tolerance: 1e-12,
        detail: format!("sums {:?}", m.column_sums()),
    }
}

fn homogeneous_growth_law() -> Result<OracleCheck> {
    let grid = GridSpec::new(3, 3, 1.0, 1.0)?;
    let params = ModelParams {
        alpha: 0.9,
        mu: 0.0,
        ..Default::default()
    };
    let init = StateTriple::uniform(grid, 40.0, 8.0, 2.0);
    let u = ControlField::zeros(grid, params.steps(), params.dt);
    let state = solve_state(&params, &grid, &init, &u)?;
    let computed = state.last().total().values()[4];
    let expected =
        50.0 * mittag_leffler(params.alpha, (params.beta - params.xi) * params.horizon.powf(params.alpha))?;
    Ok(OracleCheck::relative(
        "homogeneous population at t=80, order 0.9",
        computed,
        expected,
        1e-2,
    ))
}

fn small_problem(alpha: f64, p: f64, horizon: f64) -> Result<(ModelParams, GridSpec, StateTriple, ControlField)> {
    let grid = GridSpec::new(5, 5, 1.0, 1.0)?;
    let params = ModelParams {
        alpha,
        p,
        eta: 0.5,
        horizon,
        dt: 0.01,
        ..Default::default()
    };
    let init = StateTriple::new(
        Field2D::from_fn(grid, |x, y| 45.0 + 3.0 * (x - y).sin()),
        Field2D::from_fn(grid, |x, y| 5.0 * (-(x - 2.5).powi(2) - (y - 2.5).powi(2)).exp()),
        Field2D::constant(grid, 1.0),
    )?;
    let u = ControlField::from_frames(
        (0..=params.steps())
            .map(|n| Field2D::from_fn(grid, |x, y| 0.2 + 0.1 * (0.7 * x + 0.3 * y + 0.05 * n as f64).sin()))
            .collect(),
        params.dt,
    )?;
    Ok((params, grid, init, u))
}

fn direction(grid: GridSpec, steps: usize, dt: f64, phase: f64) -> Result<ControlField> {
    ControlField::from_frames(
        (0..=steps)
            .map(|n| Field2D::from_fn(grid, |x, y| (1.3 * x - 0.4 * y + 0.2 * n as f64 + phase).cos()))
            .collect(),
        dt,
    )
}

/// The gradient from the backward march against the one obtained by
/// assembling the whole space-time tangent system of the forward scheme and
/// solving its transpose directly.
fn dense_adjoint_gradient() -> Result<OracleCheck> {
    let (params, grid, init, u) = small_problem(1.0, 2.0, 0.1)?;
    let steps = params.steps();
    let cells = grid.len();
    let d = 3 * cells;
    let dt = params.dt;
    let area = grid.cell_area();
    let state = solve_state(&params, &grid, &init, &u)?;
    let adjoint = solve_adjoint(&params, &state, &u)?;
    let marched = gradient_field(&state, &adjoint, &u, params.eta)?;

    // Unknowns y_1..y_N; row block n reads y_n - (1 + dt A_{n-1}) y_{n-1} = dt F w.
    let mut m = DMatrix::<f64>::identity(steps * d, steps * d);
    let mut unit = vec![0.0; cells];
    let mut column = vec![0.0; cells];
    for n in 2..=steps {
        let base = state.snapshot(n - 1);
        let mut a = DMatrix::<f64>::zeros(d, d);
        for (c, field) in base.components().iter().enumerate() {
            let mut flux = FluxLinearization::new(field, params.p, &params.diffusion);
            for k in 0..cells {
                unit.fill(0.0);
                unit[k] = 1.0;
                flux.apply(&unit, &mut column);
                for (row, v) in column.iter().enumerate() {
                    a[(c * cells + row, c * cells + k)] += params.lambda[c] * v;
                }
            }
        }
        for k in 0..cells {
            let local = CellMatrix3::linearization(
                base.s.values()[k],
                base.i.values()[k],
                u.frame(n - 1).values()[k],
                &params,
            );
            for r in 0..3 {
                for c in 0..3 {
                    a[(r * cells + k, c * cells + k)] += local.0[r][c];
                }
            }
        }
        let block = DMatrix::<f64>::identity(d, d) + a * dt;
        m.view_mut(((n - 1) * d, (n - 2) * d), (d, d)).copy_from(&(-block));
    }

    let mut g = DVector::<f64>::zeros(steps * d);
    for n in 1..=steps {
        let weight = if n == steps { 2.0 * area } else { 2.0 * area * dt };
        for k in 0..cells {
            g[(n - 1) * d + cells + k] = weight * state.snapshot(n).i.values()[k];
        }
    }
    let lambda = m
        .transpose()
        .lu()
        .solve(&g)
        .ok_or_else(|| crate::Error::Dimension("dense tangent system is singular".into()))?;

    let (mut err, mut norm) = (0.0, 0.0);
    for n in 0..steps {
        let s = state.snapshot(n).s.values();
        for k in 0..cells {
            let l1 = lambda[n * d + k];
            let l3 = lambda[n * d + 2 * cells + k];
            let dense = dt * s[k] * (l3 - l1) + 2.0 * area * dt * params.eta * u.frame(n).values()[k];
            let march = 2.0 * area * dt * marched.frame(n).values()[k];
            err += (dense - march).powi(2);
            norm += dense * dense;
        }
    }
    Ok(OracleCheck {
        name: "adjoint gradient vs dense space-time solve",
        error: (err / norm).sqrt(),
        tolerance: 1e-2,
        detail: format!("5x5 grid, {steps} steps, p=2, order 1 (relative l2)"),
    })
}

fn linearized_difference() -> Result<OracleCheck> {
    let (params, grid, init, u) = small_problem(0.9, 3.0, 0.2)?;
    let steps = params.steps();
    let w = direction(grid, steps, params.dt, 0.0)?;
    let eps = 1e-4;
    let mut bumped = u.clone();
    for n in 0..=steps {
        bumped.frame_mut(n).add_scaled(eps, w.frame(n));
    }
    let base = solve_state(&params, &grid, &init, &u)?;
    let moved = solve_state(&params, &grid, &init, &bumped)?;
    let y = solve_linearized(&params, &base, &u, &w)?;
    let (mut err, mut norm) = (0.0, 0.0);
    for n in 1..=steps {
        for c in 0..3 {
            let a = moved.snapshot(n).components()[c].values();
            let b = base.snapshot(n).components()[c].values();
            let lin = y.snapshot(n).components()[c].values();
            for k in 0..grid.len() {
                let fd = (a[k] - b[k]) / eps;
                err += (fd - lin[k]).powi(2);
                norm += lin[k] * lin[k];
            }
        }
    }
    Ok(OracleCheck {
        name: "linearized solve vs nonlinear difference",
        error: (err / norm).sqrt(),
        tolerance: 5e-2,
        detail: format!("5x5 grid, {steps} steps, order 0.9, eps 1e-4 (relative l2)"),
    })
}

fn objective_difference() -> Result<OracleCheck> {
    let (params, grid, init, u) = small_problem(0.9, 3.0, 0.2)?;
    let steps = params.steps();
    let w = direction(grid, steps, params.dt, 1.0)?;
    let eps = 1e-4;
    let mut bumped = u.clone();
    for n in 0..=steps {
        bumped.frame_mut(n).add_scaled(eps, w.frame(n));
    }
    let base = solve_state(&params, &grid, &init, &u)?;
    let moved = solve_state(&params, &grid, &init, &bumped)?;
    let fd = (objective(&moved, &bumped, &params)? - objective(&base, &u, &params)?) / eps;
    let adjoint = solve_adjoint(&params, &base, &u)?;
    let gradient = gradient_field(&base, &adjoint, &u, params.eta)?;
    let computed = directional_derivative(&gradient, &w)?;
    Ok(OracleCheck::relative(
        "adjoint directional derivative vs objective difference",
        computed,
        fd,
        5e-2,
    ))
}

fn projection_example() -> Result<OracleCheck> {
    let grid = GridSpec::new(3, 3, 1.0, 1.0)?;
    let s = Field2D::constant(grid, 10.0);
    let rho1 = Field2D::constant(grid, 0.05);
    let rho3 = Field2D::zeros(grid);
    let u = project_control(&s, &rho1, &rho3, 1.0, 1.0 - 1e-6)?;
    Ok(OracleCheck::absolute(
        "projected control at S=10, rho1-rho3=0.05, eta=1",
        u.values()[4],
        0.5,
        1e-12,
    ))
}

fn preset_population() -> OracleCheck {
    OracleCheck::absolute(
        "preset initial population",
        preset_table2().initial_state().population(),
        22050.0,
        1e-9,
    )
}
