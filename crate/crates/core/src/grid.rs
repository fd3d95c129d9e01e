//! Uniform 2D cell grids, Neumann (no-flux) stencils and the p-Laplacian.
//!
//! Values are stored row-major with the y index as the row: cell `(i, j)`
//! lives at `j * nx + i`, `i` along x. Scenario files address cells one-based.
//!
//! Two ghost conventions realize the zero normal derivative:
//! * centered gradients reflect about the edge cell (`u_{-1} = u_1`), so the
//!   boundary-normal component at edge cells is exactly zero;
//! * flux operators put the boundary on the outer cell faces and carry zero
//!   flux there, which makes every diffusion operator conservative.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    /// Cell width in km.
    pub dx: f64,
    /// Cell height in km.
    pub dy: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64) -> Result<Self> {
        let grid = GridSpec { nx, ny, dx, dy };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 3 {
            return Err(Error::validation("nx", "at least 3", self.nx));
        }
        if self.ny < 3 {
            return Err(Error::validation("ny", "at least 3", self.ny));
        }
        if !(self.dx > 0.0 && self.dx.is_finite()) {
            return Err(Error::validation("dx", "strictly positive", self.dx));
        }
        if !(self.dy > 0.0 && self.dy.is_finite()) {
            return Err(Error::validation("dy", "strictly positive", self.dy));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    pub fn area(&self) -> f64 {
        self.cell_area() * self.len() as f64
    }

    /// Zero-based cell `(i, j)` to storage index.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// One-based cell `(i, j)` (as in scenario files) to storage index.
    pub fn cell(&self, i: usize, j: usize) -> Option<usize> {
        if (1..=self.nx).contains(&i) && (1..=self.ny).contains(&j) {
            Some(self.index(i - 1, j - 1))
        } else {
            None
        }
    }

    /// Cell-center coordinates of zero-based cell `(i, j)`.
    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.dx, (j as f64 + 0.5) * self.dy)
    }
}

/// One scalar quantity sampled at the cell centers of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Field2D {
    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        Field2D {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "{} values for a {}x{} grid",
                values.len(),
                grid.nx,
                grid.ny
            )));
        }
        Ok(Field2D { grid, values })
    }

    /// Samples `f(x, y)` at cell centers.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.center(i, j);
                values.push(f(x, y));
            }
        }
        Field2D { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Area-weighted integral over the domain.
    pub fn integral(&self) -> f64 {
        self.sum() * self.grid.cell_area()
    }

    /// Plain Euclidean dot product of the cell values.
    pub fn dot(&self, other: &Field2D) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field2D {
        Field2D {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Field2D, f: impl Fn(f64, f64) -> f64) -> Field2D {
        debug_assert_eq!(self.grid, other.grid);
        Field2D {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Field2D {
        self.map(|v| v * factor)
    }

    /// `self += factor * other`
    pub fn add_scaled(&mut self, factor: f64, other: &Field2D) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += factor * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_grid(&self, other: &Field2D) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::Dimension("fields live on different grids".into()))
        }
    }
}

impl Index<(usize, usize)> for Field2D {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.values[self.grid.index(i, j)]
    }
}

impl IndexMut<(usize, usize)> for Field2D {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        let k = self.grid.index(i, j);
        &mut self.values[k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField2D {
    pub x: Field2D,
    pub y: Field2D,
}

/// How the flux derivative `ψ'(w)` is linearized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FluxJacobian {
    /// Full 2x2 Jacobian of `w ↦ |w|^{p-2} w`.
    #[default]
    Full,
    /// Scalar factor `|w|^{p-2}` only.
    Scalar,
}

/// Regularization and scaling of the p-Laplacian flux.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionOptions {
    /// ε in `ψ_ε(w) = (|w|² + ε²)^{(p-2)/2} w`, in normalized units.
    pub epsilon: f64,
    /// Gradients are divided by this density before the flux factor is
    /// evaluated. `None` uses raw densities.
    pub reference_density: Option<f64>,
    pub jacobian: FluxJacobian,
}

impl Default for DiffusionOptions {
    fn default() -> Self {
        DiffusionOptions {
            epsilon: 1e-6,
            reference_density: Some(50.0),
            jacobian: FluxJacobian::Full,
        }
    }
}

impl DiffusionOptions {
    fn inverse_scale(&self) -> f64 {
        self.reference_density.map_or(1.0, |r| 1.0 / r)
    }
}

/// Centered derivative along x with reflection ghosts (zero at the x edges).
fn centered_x(u: &[f64], grid: &GridSpec, out: &mut [f64]) {
    let (nx, ny) = (grid.nx, grid.ny);
    let inv = 0.5 / grid.dx;
    for j in 0..ny {
        let row = j * nx;
        out[row] = 0.0;
        out[row + nx - 1] = 0.0;
        for i in 1..nx - 1 {
            out[row + i] = (u[row + i + 1] - u[row + i - 1]) * inv;
        }
    }
}

fn centered_y(u: &[f64], grid: &GridSpec, out: &mut [f64]) {
    let (nx, ny) = (grid.nx, grid.ny);
    let inv = 0.5 / grid.dy;
    out[..nx].fill(0.0);
    out[(ny - 1) * nx..].fill(0.0);
    for j in 1..ny - 1 {
        for i in 0..nx {
            out[j * nx + i] = (u[(j + 1) * nx + i] - u[(j - 1) * nx + i]) * inv;
        }
    }
}

/// Transposes of the centered derivatives, accumulated into `out`.
fn centered_x_transpose_add(t: &[f64], grid: &GridSpec, out: &mut [f64]) {
    let nx = grid.nx;
    let inv = 0.5 / grid.dx;
    for j in 0..grid.ny {
        let row = j * nx;
        for i in 1..nx - 1 {
            let v = t[row + i] * inv;
            out[row + i + 1] += v;
            out[row + i - 1] -= v;
        }
    }
}

fn centered_y_transpose_add(t: &[f64], grid: &GridSpec, out: &mut [f64]) {
    let nx = grid.nx;
    let inv = 0.5 / grid.dy;
    for j in 1..grid.ny - 1 {
        for i in 0..nx {
            let v = t[j * nx + i] * inv;
            out[(j + 1) * nx + i] += v;
            out[(j - 1) * nx + i] -= v;
        }
    }
}

/// Cell-centered gradient by central differences.
pub fn gradient(field: &Field2D) -> VectorField2D {
    let grid = *field.grid();
    let mut x = Field2D::zeros(grid);
    let mut y = Field2D::zeros(grid);
    centered_x(field.values(), &grid, x.values_mut());
    centered_y(field.values(), &grid, y.values_mut());
    VectorField2D { x, y }
}

/// Neumann 5-point Laplacian (zero flux through the outer faces).
pub fn five_point_laplacian(field: &Field2D) -> Field2D {
    let grid = *field.grid();
    let (nx, ny) = (grid.nx, grid.ny);
    let u = field.values();
    let (ax, ay) = (1.0 / (grid.dx * grid.dx), 1.0 / (grid.dy * grid.dy));
    let mut out = Field2D::zeros(grid);
    let o = out.values_mut();
    for j in 0..ny {
        for i in 0..nx {
            let k = j * nx + i;
            let mut acc = 0.0;
            if i + 1 < nx {
                acc += (u[k + 1] - u[k]) * ax;
            }
            if i > 0 {
                acc -= (u[k] - u[k - 1]) * ax;
            }
            if j + 1 < ny {
                acc += (u[k + nx] - u[k]) * ay;
            }
            if j > 0 {
                acc -= (u[k] - u[k - nx]) * ay;
            }
            o[k] = acc;
        }
    }
    out
}

/// Face gradients of `u`: normal differences plus the averaged tangential
/// centered derivative.
struct FaceGradients {
    /// x-faces, `(ny) x (nx - 1)`: (∂x, ∂y)
    x_faces: Vec<[f64; 2]>,
    /// y-faces, `(ny - 1) x nx`: (∂x, ∂y)
    y_faces: Vec<[f64; 2]>,
}

impl FaceGradients {
    fn new(u: &[f64], grid: &GridSpec, scratch_x: &mut [f64], scratch_y: &mut [f64]) -> Self {
        let (nx, ny) = (grid.nx, grid.ny);
        centered_x(u, grid, scratch_x);
        centered_y(u, grid, scratch_y);
        let mut x_faces = Vec::with_capacity(ny * (nx - 1));
        for j in 0..ny {
            for i in 0..nx - 1 {
                let k = j * nx + i;
                x_faces.push([(u[k + 1] - u[k]) / grid.dx, 0.5 * (scratch_y[k] + scratch_y[k + 1])]);
            }
        }
        let mut y_faces = Vec::with_capacity((ny - 1) * nx);
        for j in 0..ny - 1 {
            for i in 0..nx {
                let k = j * nx + i;
                y_faces.push([0.5 * (scratch_x[k] + scratch_x[k + nx]), (u[k + nx] - u[k]) / grid.dy]);
            }
        }
        FaceGradients { x_faces, y_faces }
    }
}

/// `(|w|² + ε²)^{(p-2)/2}` and `(p-2)(|w|² + ε²)^{(p-4)/2}` for normalized `w`.
#[inline]
fn flux_factors(w: [f64; 2], p: f64, eps: f64) -> (f64, f64) {
    let r = w[0] * w[0] + w[1] * w[1] + eps * eps;
    if p == 2.0 {
        return (1.0, 0.0);
    }
    let g = r.powf(0.5 * (p - 2.0));
    (g, (p - 2.0) * g / r)
}

fn check_p(p: f64) {
    assert!(p >= 2.0 && p.is_finite(), "p-Laplacian exponent must be >= 2, got {p}");
}

/// Discrete `div(ψ_ε(∇u))` with face-centered fluxes and zero boundary flux.
///
/// With a reference density `s` the flux is `(|∇u/s|² + ε²)^{(p-2)/2} ∇u`;
/// at `p = 2` this is exactly the 5-point stencil.
pub fn p_laplacian(field: &Field2D, p: f64, opts: &DiffusionOptions) -> Field2D {
    let mut out = Field2D::zeros(*field.grid());
    p_laplacian_into(field.values(), field.grid(), p, opts, out.values_mut());
    out
}

pub(crate) fn p_laplacian_into(u: &[f64], grid: &GridSpec, p: f64, opts: &DiffusionOptions, out: &mut [f64]) {
    check_p(p);
    let (nx, ny) = (grid.nx, grid.ny);
    let s = opts.inverse_scale();
    let mut sx = vec![0.0; grid.len()];
    let mut sy = vec![0.0; grid.len()];
    let faces = FaceGradients::new(u, grid, &mut sx, &mut sy);
    out.fill(0.0);
    for j in 0..ny {
        for i in 0..nx - 1 {
            let w = faces.x_faces[j * (nx - 1) + i];
            let (g, _) = flux_factors([w[0] * s, w[1] * s], p, opts.epsilon);
            let flux = g * w[0] / grid.dx;
            let k = j * nx + i;
            out[k] += flux;
            out[k + 1] -= flux;
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx {
            let w = faces.y_faces[j * nx + i];
            let (g, _) = flux_factors([w[0] * s, w[1] * s], p, opts.epsilon);
            let flux = g * w[1] / grid.dy;
            let k = j * nx + i;
            out[k] += flux;
            out[k + nx] -= flux;
        }
    }
}

/// Frozen face coefficients of the linearized p-Laplacian about a base field.
///
/// On each face only the row of `ψ'` belonging to the face normal enters the
/// divergence, stored as (normal, tangential) weights.
pub struct FluxLinearization {
    grid: GridSpec,
    x_faces: Vec<[f64; 2]>,
    y_faces: Vec<[f64; 2]>,
    scratch: [Vec<f64>; 2],
}

impl FluxLinearization {
    pub fn new(base: &Field2D, p: f64, opts: &DiffusionOptions) -> Self {
        let grid = *base.grid();
        let mut this = FluxLinearization {
            grid,
            x_faces: Vec::new(),
            y_faces: Vec::new(),
            scratch: [vec![0.0; grid.len()], vec![0.0; grid.len()]],
        };
        this.rebase(base.values(), p, opts);
        this
    }

    /// Recomputes the coefficients for a new base field on the same grid.
    pub(crate) fn rebase(&mut self, base: &[f64], p: f64, opts: &DiffusionOptions) {
        check_p(p);
        let s = opts.inverse_scale();
        let full = opts.jacobian == FluxJacobian::Full;
        let [sx, sy] = &mut self.scratch;
        let faces = FaceGradients::new(base, &self.grid, sx, sy);
        let row = |w: [f64; 2], normal: usize| {
            let w = [w[0] * s, w[1] * s];
            let (g, h) = flux_factors(w, p, opts.epsilon);
            let tangential = 1 - normal;
            if full {
                [g + h * w[normal] * w[normal], h * w[normal] * w[tangential]]
            } else {
                [g, 0.0]
            }
        };
        self.x_faces = faces.x_faces.iter().map(|&w| row(w, 0)).collect();
        self.y_faces = faces.y_faces.iter().map(|&w| row(w, 1)).collect();
    }

    /// `out = div(ψ'(∇base) ∇v)`: the directional derivative of
    /// [`p_laplacian`] at the base field along `v`.
    pub(crate) fn apply(&mut self, v: &[f64], out: &mut [f64]) {
        let grid = self.grid;
        let (nx, ny) = (grid.nx, grid.ny);
        let [cx, cy] = &mut self.scratch;
        centered_x(v, &grid, cx);
        centered_y(v, &grid, cy);
        out.fill(0.0);
        for j in 0..ny {
            for i in 0..nx - 1 {
                let k = j * nx + i;
                let [a, b] = self.x_faces[j * (nx - 1) + i];
                let normal = (v[k + 1] - v[k]) / grid.dx;
                let tangential = 0.5 * (cy[k] + cy[k + 1]);
                let flux = (a * normal + b * tangential) / grid.dx;
                out[k] += flux;
                out[k + 1] -= flux;
            }
        }
        for j in 0..ny - 1 {
            for i in 0..nx {
                let k = j * nx + i;
                let [a, b] = self.y_faces[j * nx + i];
                let normal = (v[k + nx] - v[k]) / grid.dy;
                let tangential = 0.5 * (cx[k] + cx[k + nx]);
                let flux = (a * normal + b * tangential) / grid.dy;
                out[k] += flux;
                out[k + nx] -= flux;
            }
        }
    }

    /// Exact transpose of [`FluxLinearization::apply`] in the Euclidean cell
    /// inner product.
    pub(crate) fn apply_transpose(&mut self, v: &[f64], out: &mut [f64]) {
        let grid = self.grid;
        let (nx, ny) = (grid.nx, grid.ny);
        let [tx, ty] = &mut self.scratch;
        tx.fill(0.0);
        ty.fill(0.0);
        out.fill(0.0);
        for j in 0..ny {
            for i in 0..nx - 1 {
                let k = j * nx + i;
                let [a, b] = self.x_faces[j * (nx - 1) + i];
                let e = (v[k + 1] - v[k]) / grid.dx;
                let normal = a * e / grid.dx;
                out[k] += normal;
                out[k + 1] -= normal;
                ty[k] -= 0.5 * b * e;
                ty[k + 1] -= 0.5 * b * e;
            }
        }
        for j in 0..ny - 1 {
            for i in 0..nx {
                let k = j * nx + i;
                let [a, b] = self.y_faces[j * nx + i];
                let e = (v[k + nx] - v[k]) / grid.dy;
                let normal = a * e / grid.dy;
                out[k] += normal;
                out[k + nx] -= normal;
                tx[k] -= 0.5 * b * e;
                tx[k + nx] -= 0.5 * b * e;
            }
        }
        centered_x_transpose_add(tx, &grid, out);
        centered_y_transpose_add(ty, &grid, out);
    }
}

/// Discrete `div(ψ'_ε(∇base) ∇rho)`: the p-Laplacian linearized about `base`.
pub fn weighted_diffusion(base: &Field2D, rho: &Field2D, p: f64, opts: &DiffusionOptions) -> Result<Field2D> {
    base.same_grid(rho)?;
    let mut out = Field2D::zeros(*base.grid());
    FluxLinearization::new(base, p, opts).apply(rho.values(), out.values_mut());
    Ok(out)
}

/// Transpose of [`weighted_diffusion`] in `rho`, as needed by the adjoint march.
/// Coincides with it wherever the tangential couplings vanish (e.g. `p = 2`).
pub fn weighted_diffusion_adjoint(
    base: &Field2D,
    rho: &Field2D,
    p: f64,
    opts: &DiffusionOptions,
) -> Result<Field2D> {
    base.same_grid(rho)?;
    let mut out = Field2D::zeros(*base.grid());
    FluxLinearization::new(base, p, opts).apply_transpose(rho.values(), out.values_mut());
    Ok(out)
}
