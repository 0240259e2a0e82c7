//! Node-centred uniform grids in one and two dimensions, the scalar fields that
//! live on them, and the finite-difference operators shared by the 2D
//! environment and the 1D latent dynamics.
//!
//! Nodes sit at `-length/2 + i*dx` with `dx = length / (n - 1)`, so the first and
//! last nodes lie exactly on the domain boundary. Quadrature uses trapezoidal
//! node weights (half measure on boundary nodes), which makes `integrate` exact
//! for constants and matches the energy norm the derivative operator is
//! skew-adjoint in.
//!
//! The derivative operator is second-order central in the interior. Boundary rows
//! use the one-sided difference `(f[1] - f[0]) / dx` of the classical
//! summation-by-parts pair, which keeps the collocated wave system energy stable
//! when the displacement is pinned at the outer nodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_axis(n: usize, length: f64, axis: &str) -> Result<()> {
    if n < 3 {
        return Err(Error::Dimension(format!(
            "{axis} axis needs at least 3 cells, got {n}"
        )));
    }
    if !(length.is_finite() && length > 0.0) {
        return Err(Error::Parameter(format!(
            "{axis} axis length must be positive, got {length}"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    n_cells: usize,
    length: f64,
}

impl Grid1D {
    pub fn new(n_cells: usize, length: f64) -> Result<Self> {
        check_axis(n_cells, length, "x")?;
        Ok(Self { n_cells, length })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dx(&self) -> f64 {
        self.length / (self.n_cells - 1) as f64
    }

    /// Coordinate of node `i`, centred on the domain midpoint.
    pub fn coord(&self, i: usize) -> f64 {
        -0.5 * self.length + i as f64 * self.dx()
    }

    /// Quadrature weight of node `i`.
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n_cells {
            0.5 * self.dx()
        } else {
            self.dx()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    nx: usize,
    ny: usize,
    length_x: f64,
    length_y: f64,
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, length_x: f64, length_y: f64) -> Result<Self> {
        check_axis(nx, length_x, "x")?;
        check_axis(ny, length_y, "y")?;
        Ok(Self {
            nx,
            ny,
            length_x,
            length_y,
        })
    }

    pub fn square(n: usize, length: f64) -> Result<Self> {
        Self::new(n, n, length, length)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn length_x(&self) -> f64 {
        self.length_x
    }

    pub fn length_y(&self) -> f64 {
        self.length_y
    }

    pub fn dx(&self) -> f64 {
        self.length_x / (self.nx - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        self.length_y / (self.ny - 1) as f64
    }

    pub fn x_axis(&self) -> Grid1D {
        Grid1D {
            n_cells: self.nx,
            length: self.length_x,
        }
    }

    pub fn y_axis(&self) -> Grid1D {
        Grid1D {
            n_cells: self.ny,
            length: self.length_y,
        }
    }

    /// Row-major index, x varies fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn coord(&self, i: usize, j: usize) -> (f64, f64) {
        (
            -0.5 * self.length_x + i as f64 * self.dx(),
            -0.5 * self.length_y + j as f64 * self.dy(),
        )
    }

    pub fn diagonal(&self) -> f64 {
        self.length_x.hypot(self.length_y)
    }
}

/// A scalar field on a 1D grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Field1D {
    pub grid: Grid1D,
    pub values: Vec<f64>,
}

impl Field1D {
    pub fn zeros(grid: Grid1D) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.n_cells()],
        }
    }

    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.n_cells()).map(|i| f(grid.coord(i))).collect();
        Self { grid, values }
    }

    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::Dimension(format!(
                "field has {} values for a {}-cell grid",
                values.len(),
                grid.n_cells()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn ddx(&self) -> Field1D {
        let mut out = vec![0.0; self.values.len()];
        diff_into(&self.values, self.grid.dx(), &mut out);
        Field1D {
            grid: self.grid,
            values: out,
        }
    }

    pub fn integrate(&self) -> f64 {
        integrate_1d(&self.values, self.grid.dx())
    }
}

/// A scalar field on a 2D grid, row-major with x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Field2D {
    pub grid: Grid2D,
    pub values: Vec<f64>,
}

impl Field2D {
    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid2D, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                let (x, y) = grid.coord(i, j);
                values.push(f(x, y));
            }
        }
        Self { grid, values }
    }

    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "field has {} values for a {}x{} grid",
                values.len(),
                grid.nx(),
                grid.ny()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn ddx(&self) -> Field2D {
        let mut out = vec![0.0; self.values.len()];
        ddx_into(
            &self.values,
            self.grid.nx(),
            self.grid.ny(),
            self.grid.dx(),
            &mut out,
        );
        Field2D {
            grid: self.grid,
            values: out,
        }
    }

    pub fn ddy(&self) -> Field2D {
        let mut out = vec![0.0; self.values.len()];
        ddy_into(
            &self.values,
            self.grid.nx(),
            self.grid.ny(),
            self.grid.dy(),
            &mut out,
        );
        Field2D {
            grid: self.grid,
            values: out,
        }
    }

    pub fn integrate(&self) -> f64 {
        let g = self.grid;
        integrate_region(&self.values, &g, 0..g.nx(), 0..g.ny())
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Area-weighted block average onto a coarser `target_nx` x `target_ny`
    /// grid spanning the same physical extent. Each source node owns an equal
    /// cell of the source extent; non-integer block ratios are handled with
    /// fractional overlap weights, so the plain mean of the values is preserved.
    pub fn downsample(&self, target_nx: usize, target_ny: usize) -> Result<Field2D> {
        let g = self.grid;
        if target_nx > g.nx() || target_ny > g.ny() {
            return Err(Error::Dimension(format!(
                "cannot downsample {}x{} to larger {}x{}",
                g.nx(),
                g.ny(),
                target_nx,
                target_ny
            )));
        }
        if target_nx == 0 || target_ny == 0 {
            return Err(Error::Dimension(
                "cannot downsample to an empty grid".into(),
            ));
        }
        // coarse images only need a raster, so the 3-cell minimum of the
        // differentiable grids does not apply here
        let target = Grid2D {
            nx: target_nx,
            ny: target_ny,
            length_x: g.length_x(),
            length_y: g.length_y(),
        };
        if target_nx == g.nx() && target_ny == g.ny() {
            return Ok(Field2D {
                grid: target,
                values: self.values.clone(),
            });
        }
        let wx = overlap_weights(g.nx(), target_nx);
        let wy = overlap_weights(g.ny(), target_ny);
        let mut rows = vec![0.0; g.ny() * target_nx];
        for j in 0..g.ny() {
            let src = &self.values[j * g.nx()..(j + 1) * g.nx()];
            let dst = &mut rows[j * target_nx..(j + 1) * target_nx];
            for &(s, t, w) in &wx {
                dst[t] += w * src[s];
            }
        }
        let mut values = vec![0.0; target_nx * target_ny];
        for &(s, t, w) in &wy {
            let src = &rows[s * target_nx..(s + 1) * target_nx];
            let dst = &mut values[t * target_nx..(t + 1) * target_nx];
            for (d, v) in dst.iter_mut().zip(src) {
                *d += w * v;
            }
        }
        Ok(Field2D {
            grid: target,
            values,
        })
    }
}

/// `(source, target, weight)` triples; weights of each target sum to one.
fn overlap_weights(n_src: usize, n_tgt: usize) -> Vec<(usize, usize, f64)> {
    // source cell s spans [s, s+1) in source units; target t spans [t*r, (t+1)*r)
    let r = n_src as f64 / n_tgt as f64;
    let mut out = Vec::new();
    for t in 0..n_tgt {
        let lo = t as f64 * r;
        let hi = (t + 1) as f64 * r;
        let s0 = lo.floor() as usize;
        let s1 = (hi.ceil() as usize).min(n_src);
        for s in s0..s1 {
            let overlap = (hi.min((s + 1) as f64) - lo.max(s as f64)).max(0.0);
            if overlap > 0.0 {
                out.push((s, t, overlap / r));
            }
        }
    }
    out
}

/// First derivative of a 1D array with spacing `dx`.
pub fn diff_into(src: &[f64], dx: f64, out: &mut [f64]) {
    let n = src.len();
    debug_assert!(n >= 3 && out.len() == n);
    let inv = 1.0 / dx;
    let half = 0.5 * inv;
    out[0] = (src[1] - src[0]) * inv;
    for i in 1..n - 1 {
        out[i] = (src[i + 1] - src[i - 1]) * half;
    }
    out[n - 1] = (src[n - 1] - src[n - 2]) * inv;
}

/// Transpose of [`diff_into`], used by the reverse sweeps.
pub fn diff_transpose_into(src: &[f64], dx: f64, out: &mut [f64]) {
    let n = src.len();
    debug_assert!(n >= 3 && out.len() == n);
    let inv = 1.0 / dx;
    let half = 0.5 * inv;
    out.iter_mut().for_each(|o| *o = 0.0);
    out[0] -= src[0] * inv;
    out[1] += src[0] * inv;
    for i in 1..n - 1 {
        out[i - 1] -= src[i] * half;
        out[i + 1] += src[i] * half;
    }
    out[n - 2] -= src[n - 1] * inv;
    out[n - 1] += src[n - 1] * inv;
}

/// x-derivative of a row-major `nx` x `ny` array.
pub fn ddx_into(src: &[f64], nx: usize, ny: usize, dx: f64, out: &mut [f64]) {
    for j in 0..ny {
        let r = j * nx..(j + 1) * nx;
        diff_into(&src[r.clone()], dx, &mut out[r]);
    }
}

/// y-derivative of a row-major `nx` x `ny` array.
pub fn ddy_into(src: &[f64], nx: usize, ny: usize, dy: f64, out: &mut [f64]) {
    let inv = 1.0 / dy;
    let half = 0.5 * inv;
    let row = |k: usize| k * nx..(k + 1) * nx;
    for ((o, a), b) in out[row(0)].iter_mut().zip(&src[row(1)]).zip(&src[row(0)]) {
        *o = (a - b) * inv;
    }
    for j in 1..ny - 1 {
        for ((o, a), b) in out[row(j)]
            .iter_mut()
            .zip(&src[row(j + 1)])
            .zip(&src[row(j - 1)])
        {
            *o = (a - b) * half;
        }
    }
    let last = ny - 1;
    for ((o, a), b) in out[row(last)]
        .iter_mut()
        .zip(&src[row(last)])
        .zip(&src[row(last - 1)])
    {
        *o = (a - b) * inv;
    }
}

pub fn integrate_1d(values: &[f64], dx: f64) -> f64 {
    let n = values.len();
    let inner: f64 = values[1..n - 1].iter().sum();
    dx * (inner + 0.5 * (values[0] + values[n - 1]))
}

/// Trapezoidal integral over the node sub-rectangle `xs` x `ys`; the edges of
/// the sub-rectangle carry half weight.
pub fn integrate_region(
    values: &[f64],
    grid: &Grid2D,
    xs: std::ops::Range<usize>,
    ys: std::ops::Range<usize>,
) -> f64 {
    integrate_region_with(grid, xs, ys, |k| values[k])
}

pub(crate) fn integrate_region_with(
    grid: &Grid2D,
    xs: std::ops::Range<usize>,
    ys: std::ops::Range<usize>,
    f: impl Fn(usize) -> f64,
) -> f64 {
    let nx = grid.nx();
    let edge_w = |k: usize, r: &std::ops::Range<usize>| {
        if r.len() > 1 && (k == r.start || k + 1 == r.end) {
            0.5
        } else {
            1.0
        }
    };
    let mut total = 0.0;
    for j in ys.clone() {
        let wy = edge_w(j, &ys);
        let mut row = 0.0;
        for i in xs.clone() {
            row += edge_w(i, &xs) * f(j * nx + i);
        }
        total += wy * row;
    }
    total * grid.dx() * grid.dy()
}
