//! The free-field scattering environment.
//!
//! Two copies of the PML-transformed acoustic system advance side by side: the
//! total field, where actuated cylinders carry a slower sound speed, and the
//! incident field with a uniform medium. Their difference is the scattered
//! field whose energy the controller tries to suppress.

mod dynamics;
mod episode;

pub use dynamics::{
    check_cfl, discrete_energy, rhs, rk4_step, DesignSpeed, FieldSpeed, RealState, Rk4Workspace,
    Speed, SpeedSchedule, UniformSpeed, WaveSystem2D, FIELD_NAMES,
};
pub use episode::{
    clamp_action, run_episode, scattered_energy, Environment, EpisodeRecord, Observation, Policy,
    PolicyContext, RandomPolicy, SigmaSeries, StepOutcome, ZeroPolicy,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_grid::{Field2D, Grid2D};
use crate::pml::{build_ramp, PmlProfile1D};

/// Sound speeds of the two media. The split-field coefficients are fixed to
/// `a = 1` and `b = c^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MediumParams {
    pub c_ambient: f64,
    pub c_scatterer: f64,
}

impl Default for MediumParams {
    fn default() -> Self {
        Self {
            c_ambient: 1531.0,
            c_scatterer: 1032.0,
        }
    }
}

impl MediumParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_ambient > 0.0 && self.c_scatterer > 0.0) {
            return Err(Error::Config(format!(
                "sound speeds must be positive, got {} and {}",
                self.c_ambient, self.c_scatterer
            )));
        }
        Ok(())
    }

    pub fn c_max(&self) -> f64 {
        self.c_ambient.max(self.c_scatterer)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceConfig {
    /// Centre of the Gaussian bump (m).
    pub center: [f64; 2],
    /// Standard deviation in grid cells.
    pub width_cells: f64,
    pub amplitude: f64,
    /// Oscillation frequency (Hz).
    pub omega: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            center: [-3.0, 0.0],
            width_cells: 2.0,
            amplitude: 1.0,
            omega: 1000.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignConfig {
    pub centers: Vec<[f64; 2]>,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Maximum radius change rate (m/s).
    pub actuation_rate: f64,
    /// Fixed initial radii; drawn uniformly from the bounds when absent.
    pub initial_radii: Option<Vec<f64>>,
}

impl Default for DesignConfig {
    fn default() -> Self {
        // 2x2 lattice halfway between the source and the right interior edge
        let (cx, cy, s) = (1.3, 0.0, 1.25);
        Self {
            centers: vec![
                [cx - s, cy - s],
                [cx + s, cy - s],
                [cx - s, cy + s],
                [cx + s, cy + s],
            ],
            radius_min: 0.2,
            radius_max: 1.0,
            actuation_rate: 500.0,
            initial_radii: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PmlConfig {
    pub thickness_cells: usize,
    /// Peak damping rate at the outer boundary (1/s).
    pub strength: f64,
}

impl Default for PmlConfig {
    fn default() -> Self {
        Self {
            thickness_cells: 16,
            strength: 2.0e4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub grid_cells: usize,
    /// Side length of the square domain (m).
    pub domain_length: f64,
    pub dt: f64,
    pub steps_per_action: usize,
    pub actions_per_episode: usize,
    pub observation_resolution: usize,
    pub medium: MediumParams,
    pub source: SourceConfig,
    pub design: DesignConfig,
    pub pml: PmlConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            grid_cells: 128,
            domain_length: 15.0,
            dt: 1.0e-5,
            steps_per_action: 100,
            actions_per_episode: 200,
            observation_resolution: 128,
            medium: MediumParams::default(),
            source: SourceConfig::default(),
            design: DesignConfig::default(),
            pml: PmlConfig::default(),
        }
    }
}

pub const CFL_LIMIT: f64 = 0.5;

impl EnvConfig {
    pub fn grid(&self) -> Result<Grid2D> {
        Grid2D::square(self.grid_cells, self.domain_length)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn action_dt(&self) -> f64 {
        self.dt * self.steps_per_action as f64
    }

    /// Largest radius change allowed within one action interval.
    pub fn max_delta(&self) -> f64 {
        self.design.actuation_rate * self.action_dt()
    }

    pub fn n_scatterers(&self) -> usize {
        self.design.centers.len()
    }

    pub fn steps_per_episode(&self) -> usize {
        self.steps_per_action * self.actions_per_episode
    }

    /// Node index range of the non-PML interior along one axis.
    pub fn interior(&self) -> std::ops::Range<usize> {
        let t = self.pml.thickness_cells;
        t..self.grid_cells - t
    }

    /// Half-width of the interior box in metres.
    fn interior_half_extent(&self) -> f64 {
        let dx = self.domain_length / (self.grid_cells - 1) as f64;
        0.5 * self.domain_length - self.pml.thickness_cells as f64 * dx
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        self.medium.validate()?;
        if !(self.dt > 0.0) || self.steps_per_action == 0 || self.actions_per_episode == 0 {
            return Err(Error::Config(
                "dt, steps_per_action and actions_per_episode must be positive".into(),
            ));
        }
        check_cfl(self.medium.c_max(), self.dt, grid.dx().min(grid.dy()))?;
        if self.observation_resolution == 0 || self.observation_resolution > self.grid_cells {
            return Err(Error::Config(format!(
                "observation resolution {} must be in 1..={}",
                self.observation_resolution, self.grid_cells
            )));
        }
        if 2 * self.pml.thickness_cells >= self.grid_cells {
            return Err(Error::Config("PML thicker than half the grid".into()));
        }
        if self.pml.thickness_cells > 0 && !(self.pml.strength > 0.0) {
            return Err(Error::Config("PML strength must be positive".into()));
        }
        let d = &self.design;
        if !(0.0 < d.radius_min && d.radius_min <= d.radius_max) {
            return Err(Error::Config(format!(
                "invalid radius bounds [{}, {}]",
                d.radius_min, d.radius_max
            )));
        }
        if !(d.actuation_rate >= 0.0) {
            return Err(Error::Config("actuation rate must be non-negative".into()));
        }
        let half = self.interior_half_extent();
        for c in &d.centers {
            if c[0].abs() + d.radius_max > half || c[1].abs() + d.radius_max > half {
                return Err(Error::Config(format!(
                    "scatterer at ({}, {}) with radius up to {} leaves the interior",
                    c[0], c[1], d.radius_max
                )));
            }
        }
        if let Some(r) = &d.initial_radii {
            if r.len() != d.centers.len() {
                return Err(Error::Config(
                    "initial_radii length differs from centers".into(),
                ));
            }
            if r.iter().any(|&v| v < d.radius_min || v > d.radius_max) {
                return Err(Error::Config("initial radius outside bounds".into()));
            }
        }
        if !(self.source.width_cells > 0.0 && self.source.omega >= 0.0) {
            return Err(Error::Config("source width must be positive".into()));
        }
        Ok(())
    }

    pub fn pml_profiles(&self) -> Result<(PmlProfile1D, PmlProfile1D)> {
        let grid = self.grid()?;
        if self.pml.thickness_cells == 0 {
            return Ok((
                PmlProfile1D::none(grid.x_axis()),
                PmlProfile1D::none(grid.y_axis()),
            ));
        }
        Ok((
            build_ramp(grid.x_axis(), self.pml.thickness_cells, self.pml.strength)?,
            build_ramp(grid.y_axis(), self.pml.thickness_cells, self.pml.strength)?,
        ))
    }

    pub fn source(&self) -> Result<SourceSpec> {
        let grid = self.grid()?;
        let s = &self.source;
        Ok(SourceSpec::gaussian(
            grid,
            (s.center[0], s.center[1]),
            s.width_cells,
            s.amplitude,
            s.omega,
            self.interior(),
        ))
    }
}

/// Cylinder configuration: the controller actuates radii, centres stay put.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub centers: Vec<[f64; 2]>,
    pub radii: Vec<f64>,
    pub radius_bounds: (f64, f64),
}

impl Design {
    pub fn new(centers: Vec<[f64; 2]>, radii: Vec<f64>, radius_bounds: (f64, f64)) -> Result<Self> {
        if centers.len() != radii.len() {
            return Err(Error::Shape(format!(
                "{} centers but {} radii",
                centers.len(),
                radii.len()
            )));
        }
        let (lo, hi) = radius_bounds;
        if let Some(r) = radii.iter().find(|&&r| r < lo || r > hi) {
            return Err(Error::Parameter(format!("radius {r} outside [{lo}, {hi}]")));
        }
        Ok(Self {
            centers,
            radii,
            radius_bounds,
        })
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    pub fn with_radii(&self, radii: Vec<f64>) -> Result<Self> {
        Self::new(self.centers.clone(), radii, self.radius_bounds)
    }
}

/// Linear transition between two designs over `[t0, t1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignInterpolation {
    pub start: Design,
    pub end: Design,
    pub t0: f64,
    pub t1: f64,
}

impl DesignInterpolation {
    /// Fails when any radius would have to move faster than `actuation_rate`.
    pub fn new(start: Design, end: Design, t0: f64, t1: f64, actuation_rate: f64) -> Result<Self> {
        if start.centers != end.centers {
            return Err(Error::Parameter(
                "interpolated designs must share centers".into(),
            ));
        }
        if !(t1 > t0) {
            return Err(Error::Parameter(format!("empty interval [{t0}, {t1}]")));
        }
        let limit = actuation_rate * (t1 - t0);
        for (a, b) in start.radii.iter().zip(&end.radii) {
            if (b - a).abs() > limit * (1.0 + 1e-9) + 1e-15 {
                return Err(Error::Parameter(format!(
                    "radius change {:.4} m over {:.3e} s exceeds rate limit {} m/s",
                    (b - a).abs(),
                    t1 - t0,
                    actuation_rate
                )));
            }
        }
        Ok(Self { start, end, t0, t1 })
    }

    /// Constant design over `[t0, t1]`.
    pub fn hold(design: Design, t0: f64, t1: f64) -> Self {
        Self {
            start: design.clone(),
            end: design,
            t0,
            t1,
        }
    }

    pub fn radii_at(&self, t: f64) -> Result<Vec<f64>> {
        let span = self.t1 - self.t0;
        let tol = 1e-9 * span.max(1e-300);
        if t < self.t0 - tol || t > self.t1 + tol {
            return Err(Error::Parameter(format!(
                "t = {t} outside interpolation interval [{}, {}]",
                self.t0, self.t1
            )));
        }
        let w = ((t - self.t0) / span).clamp(0.0, 1.0);
        Ok(self
            .start
            .radii
            .iter()
            .zip(&self.end.radii)
            .map(|(a, b)| a + w * (b - a))
            .collect())
    }
}

/// Writes `c^2` for every node: scatterer speed inside any disk, ambient elsewhere.
pub fn fill_speed_squared(
    grid: &Grid2D,
    centers: &[[f64; 2]],
    radii: &[f64],
    medium: &MediumParams,
    out: &mut [f64],
) {
    let ca2 = medium.c_ambient * medium.c_ambient;
    let cs2 = medium.c_scatterer * medium.c_scatterer;
    out.iter_mut().for_each(|v| *v = ca2);
    let (dx, dy) = (grid.dx(), grid.dy());
    let (x0, y0) = grid.coord(0, 0);
    for (c, &r) in centers.iter().zip(radii) {
        let i_lo = (((c[0] - r - x0) / dx).floor().max(0.0)) as usize;
        let i_hi = ((((c[0] + r - x0) / dx).ceil()) as usize).min(grid.nx() - 1);
        let j_lo = (((c[1] - r - y0) / dy).floor().max(0.0)) as usize;
        let j_hi = ((((c[1] + r - y0) / dy).ceil()) as usize).min(grid.ny() - 1);
        for j in j_lo..=j_hi {
            for i in i_lo..=i_hi {
                let (x, y) = grid.coord(i, j);
                if (x - c[0]).powi(2) + (y - c[1]).powi(2) <= r * r {
                    out[grid.index(i, j)] = cs2;
                }
            }
        }
    }
}

/// Sound speed at time `t` of an interpolated design.
pub fn speed_field(
    interp: &DesignInterpolation,
    t: f64,
    medium: &MediumParams,
    grid: Grid2D,
) -> Result<Field2D> {
    let radii = interp.radii_at(t)?;
    let mut c2 = vec![0.0; grid.len()];
    fill_speed_squared(&grid, &interp.start.centers, &radii, medium, &mut c2);
    Ok(Field2D {
        grid,
        values: c2.into_iter().map(f64::sqrt).collect(),
    })
}

/// Spatial shape `f(x)` of the oscillating source and its frequency.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceSpec {
    pub shape: Field2D,
    pub omega: f64,
}

impl SourceSpec {
    /// Isotropic Gaussian of standard deviation `width_cells * dx`, zeroed
    /// outside the node ranges `interior` (the PML region stays source-free).
    pub fn gaussian(
        grid: Grid2D,
        center: (f64, f64),
        width_cells: f64,
        amplitude: f64,
        omega: f64,
        interior: std::ops::Range<usize>,
    ) -> Self {
        let w = width_cells * grid.dx();
        let mut shape = Field2D::from_fn(grid, |x, y| {
            let r2 = (x - center.0).powi(2) + (y - center.1).powi(2);
            amplitude * (-r2 / (2.0 * w * w)).exp()
        });
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                if !interior.contains(&i) || !interior.contains(&j) {
                    shape.values[grid.index(i, j)] = 0.0;
                }
            }
        }
        Self { shape, omega }
    }

    pub fn silent(grid: Grid2D) -> Self {
        Self {
            shape: Field2D::zeros(grid),
            omega: 0.0,
        }
    }
}
