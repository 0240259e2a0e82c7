use crate::error::{Error, Result};
use crate::field_grid::{ddx_into, ddy_into, integrate_region_with, Field2D, Grid2D};
use crate::pml::PmlProfile1D;

use super::{fill_speed_squared, DesignInterpolation, MediumParams, SourceSpec, CFL_LIMIT};

pub const FIELD_NAMES: [&str; 6] = ["u", "v_x", "v_y", "psi_x", "psi_y", "gamma"];

const U: usize = 0;
const VX: usize = 1;
const VY: usize = 2;
const PX: usize = 3;
const PY: usize = 4;
const G: usize = 5;

/// The six fields `[u, v_x, v_y, psi_x, psi_y, gamma]` on one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RealState {
    pub grid: Grid2D,
    pub fields: [Vec<f64>; 6],
    pub t: f64,
}

impl RealState {
    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            grid,
            fields: std::array::from_fn(|_| vec![0.0; grid.len()]),
            t: 0.0,
        }
    }

    pub fn u(&self) -> &[f64] {
        &self.fields[U]
    }

    pub fn field(&self, k: usize) -> Field2D {
        Field2D {
            grid: self.grid,
            values: self.fields[k].clone(),
        }
    }

    /// Blow-up detection: the sum of a field is finite iff all entries are
    /// (barring overflow, which is itself a blow-up).
    pub fn check_finite(&self) -> Result<()> {
        for (k, f) in self.fields.iter().enumerate() {
            if !f.iter().sum::<f64>().is_finite() {
                return Err(Error::BlowUp {
                    field: FIELD_NAMES[k].to_string(),
                    t: self.t,
                });
            }
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for f in out.fields.iter_mut() {
            f.iter_mut().for_each(|v| *v *= s);
        }
        out
    }
}

/// `c^2` over the grid, either constant or per node.
#[derive(Clone, Copy, Debug)]
pub enum Speed<'a> {
    Uniform(f64),
    Field(&'a [f64]),
}

impl Speed<'_> {
    #[inline]
    fn at(&self, k: usize) -> f64 {
        match self {
            Speed::Uniform(c2) => *c2,
            Speed::Field(f) => f[k],
        }
    }
}

/// Supplies `c^2` at the RK4 stage times.
pub trait SpeedSchedule {
    fn at(&mut self, t: f64) -> Result<Speed<'_>>;
}

pub struct UniformSpeed(pub f64);

impl UniformSpeed {
    pub fn new(c: f64) -> Self {
        Self(c * c)
    }
}

impl SpeedSchedule for UniformSpeed {
    fn at(&mut self, _t: f64) -> Result<Speed<'_>> {
        Ok(Speed::Uniform(self.0))
    }
}

/// A fixed, spatially varying speed.
pub struct FieldSpeed(pub Vec<f64>);

impl FieldSpeed {
    pub fn from_speed(c: &Field2D) -> Self {
        Self(c.values.iter().map(|v| v * v).collect())
    }
}

impl SpeedSchedule for FieldSpeed {
    fn at(&mut self, _t: f64) -> Result<Speed<'_>> {
        Ok(Speed::Field(&self.0))
    }
}

/// Speed of an interpolated design; the indicator is only rebuilt when the
/// interpolated radii change.
pub struct DesignSpeed {
    grid: Grid2D,
    medium: MediumParams,
    interp: DesignInterpolation,
    c2: Vec<f64>,
    cached: Option<Vec<f64>>,
}

impl DesignSpeed {
    pub fn new(grid: Grid2D, medium: MediumParams, interp: DesignInterpolation) -> Self {
        Self {
            grid,
            medium,
            interp,
            c2: vec![0.0; grid.len()],
            cached: None,
        }
    }

    pub fn set_interpolation(&mut self, interp: DesignInterpolation) {
        self.interp = interp;
    }
}

impl SpeedSchedule for DesignSpeed {
    fn at(&mut self, t: f64) -> Result<Speed<'_>> {
        let radii = self.interp.radii_at(t)?;
        if self.cached.as_ref() != Some(&radii) {
            fill_speed_squared(
                &self.grid,
                &self.interp.start.centers,
                &radii,
                &self.medium,
                &mut self.c2,
            );
            self.cached = Some(radii);
        }
        Ok(Speed::Field(&self.c2))
    }
}

pub fn check_cfl(c_max: f64, dt: f64, min_spacing: f64) -> Result<()> {
    let cfl = c_max * dt / min_spacing;
    if !(cfl <= CFL_LIMIT) {
        return Err(Error::Config(format!(
            "CFL number {cfl:.3} exceeds {CFL_LIMIT} (c = {c_max}, dt = {dt:e}, dx = {min_spacing:e})"
        )));
    }
    Ok(())
}

/// Scratch buffers for one RK4 step.
#[derive(Clone, Debug)]
pub struct Rk4Workspace {
    k: [Vec<f64>; 6],
    tmp: [Vec<f64>; 6],
    acc: [Vec<f64>; 6],
    scratch: [Vec<f64>; 4],
}

impl Rk4Workspace {
    pub fn new(grid: Grid2D) -> Self {
        let n = grid.len();
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: std::array::from_fn(|_| vec![0.0; n]),
            acc: std::array::from_fn(|_| vec![0.0; n]),
            scratch: std::array::from_fn(|_| vec![0.0; n]),
        }
    }
}

/// Right-hand side of the PML-transformed split-field system:
///
/// ```text
/// du/dt     = c^2 (dx v_x + dy v_y) + psi_x + psi_y - (sigma_x + sigma_y) u - gamma
/// dv_x/dt   = dx (u + f sin(2 pi omega t)) - sigma_x v_x
/// dv_y/dt   = dy (u + f sin(2 pi omega t)) - sigma_y v_y
/// dpsi_x/dt = c^2 sigma_x dy v_y
/// dpsi_y/dt = c^2 sigma_y dx v_x
/// dgamma/dt = sigma_x sigma_y u
/// ```
///
/// `u` is pinned to zero on the outermost nodes.
#[derive(Clone, Debug)]
pub struct WaveSystem2D {
    grid: Grid2D,
    sigma_x: Vec<f64>,
    sigma_y: Vec<f64>,
    source_dx: Vec<f64>,
    source_dy: Vec<f64>,
    omega: f64,
}

impl WaveSystem2D {
    pub fn new(source: &SourceSpec, pml_x: &PmlProfile1D, pml_y: &PmlProfile1D) -> Result<Self> {
        let grid = source.shape.grid;
        if pml_x.sigma.len() != grid.nx() || pml_y.sigma.len() != grid.ny() {
            return Err(Error::Dimension(
                "PML profiles do not match the grid".into(),
            ));
        }
        Ok(Self {
            grid,
            sigma_x: pml_x.sigma.clone(),
            sigma_y: pml_y.sigma.clone(),
            source_dx: source.shape.ddx().values,
            source_dy: source.shape.ddy().values,
            omega: source.omega,
        })
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    fn rhs_into(
        &self,
        y: &[Vec<f64>; 6],
        c2: Speed<'_>,
        t: f64,
        scratch: &mut [Vec<f64>; 4],
        out: &mut [Vec<f64>; 6],
    ) {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let (dx, dy) = (self.grid.dx(), self.grid.dy());
        let [dvx, dvy, dux, duy] = scratch;
        ddx_into(&y[VX], nx, ny, dx, dvx);
        ddy_into(&y[VY], nx, ny, dy, dvy);
        ddx_into(&y[U], nx, ny, dx, dux);
        ddy_into(&y[U], nx, ny, dy, duy);
        let s = (2.0 * std::f64::consts::PI * self.omega * t).sin();
        match c2 {
            Speed::Uniform(c2) => self.combine(y, |_| c2, s, scratch, out),
            Speed::Field(f) => self.combine(y, |k| f[k], s, scratch, out),
        }
    }

    #[inline(always)]
    fn combine(
        &self,
        y: &[Vec<f64>; 6],
        c2: impl Fn(usize) -> f64,
        s: f64,
        scratch: &[Vec<f64>; 4],
        out: &mut [Vec<f64>; 6],
    ) {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let [dvx, dvy, dux, duy] = scratch;
        let [ou, ovx, ovy, opx, opy, og] = out;
        let sx = &self.sigma_x[..nx];
        for j in 0..ny {
            let syj = self.sigma_y[j];
            let r = j * nx..(j + 1) * nx;
            let (u, vx, vy) = (&y[U][r.clone()], &y[VX][r.clone()], &y[VY][r.clone()]);
            let (px, py, g) = (&y[PX][r.clone()], &y[PY][r.clone()], &y[G][r.clone()]);
            let (dvx, dvy) = (&dvx[r.clone()], &dvy[r.clone()]);
            let (dux, duy) = (&dux[r.clone()], &duy[r.clone()]);
            let (fx, fy) = (&self.source_dx[r.clone()], &self.source_dy[r.clone()]);
            let (ou, ovx, ovy) = (&mut ou[r.clone()], &mut ovx[r.clone()], &mut ovy[r.clone()]);
            let (opx, opy, og) = (&mut opx[r.clone()], &mut opy[r.clone()], &mut og[r.clone()]);
            let base = j * nx;
            for i in 0..nx {
                let sxi = sx[i];
                let c2k = c2(base + i);
                ou[i] = c2k * (dvx[i] + dvy[i]) + px[i] + py[i] - (sxi + syj) * u[i] - g[i];
                ovx[i] = dux[i] + s * fx[i] - sxi * vx[i];
                ovy[i] = duy[i] + s * fy[i] - syj * vy[i];
                opx[i] = c2k * sxi * dvy[i];
                opy[i] = c2k * syj * dvx[i];
                og[i] = sxi * syj * u[i];
            }
            // displacement pinned on the outer boundary
            if j == 0 || j + 1 == ny {
                ou.iter_mut().for_each(|v| *v = 0.0);
            } else {
                ou[0] = 0.0;
                ou[nx - 1] = 0.0;
            }
        }
    }

    /// Classical fourth-order Runge-Kutta step of `state` by `dt`.
    pub fn rk4_step(
        &self,
        state: &mut RealState,
        speed: &mut dyn SpeedSchedule,
        dt: f64,
        ws: &mut Rk4Workspace,
    ) -> Result<()> {
        let t = state.t;
        let Rk4Workspace {
            k,
            tmp,
            acc,
            scratch,
        } = ws;
        let y = &state.fields;

        self.rhs_into(y, speed.at(t)?, t, scratch, k);
        for f in 0..6 {
            for ((a, p), (yy, kk)) in acc[f]
                .iter_mut()
                .zip(tmp[f].iter_mut())
                .zip(y[f].iter().zip(&k[f]))
            {
                *a = yy + dt / 6.0 * kk;
                *p = yy + 0.5 * dt * kk;
            }
        }
        for stage in 0..3 {
            let (ts, next_w, acc_w) = match stage {
                0 => (t + 0.5 * dt, 0.5 * dt, dt / 3.0),
                1 => (t + 0.5 * dt, dt, dt / 3.0),
                _ => (t + dt, 0.0, dt / 6.0),
            };
            self.rhs_into(tmp, speed.at(ts)?, ts, scratch, k);
            for f in 0..6 {
                for ((a, p), (yy, kk)) in acc[f]
                    .iter_mut()
                    .zip(tmp[f].iter_mut())
                    .zip(y[f].iter().zip(&k[f]))
                {
                    *a += acc_w * kk;
                    *p = yy + next_w * kk;
                }
            }
        }
        std::mem::swap(&mut state.fields, acc);
        state.t = t + dt;
        state.check_finite()
    }
}

/// Derivative of `state` under the full system, as a state-shaped value.
pub fn rhs(
    state: &RealState,
    c: &Field2D,
    source: &SourceSpec,
    pml_x: &PmlProfile1D,
    pml_y: &PmlProfile1D,
    t: f64,
) -> Result<RealState> {
    state.check_finite()?;
    if c.grid != state.grid || source.shape.grid != state.grid {
        return Err(Error::Dimension("fields live on different grids".into()));
    }
    let sys = WaveSystem2D::new(source, pml_x, pml_y)?;
    let c2: Vec<f64> = c.values.iter().map(|v| v * v).collect();
    let mut scratch = std::array::from_fn(|_| vec![0.0; state.grid.len()]);
    let mut out = RealState::zeros(state.grid);
    out.t = t;
    sys.rhs_into(
        &state.fields,
        Speed::Field(&c2),
        t,
        &mut scratch,
        &mut out.fields,
    );
    Ok(out)
}

/// One RK4 step with a time-independent speed field; checks the CFL bound.
pub fn rk4_step(
    state: &RealState,
    c: &Field2D,
    source: &SourceSpec,
    pml_x: &PmlProfile1D,
    pml_y: &PmlProfile1D,
    dt: f64,
) -> Result<RealState> {
    let c_max = c.values.iter().cloned().fold(0.0, f64::max);
    check_cfl(c_max, dt, state.grid.dx().min(state.grid.dy()))?;
    let sys = WaveSystem2D::new(source, pml_x, pml_y)?;
    let mut next = state.clone();
    let mut ws = Rk4Workspace::new(state.grid);
    sys.rk4_step(&mut next, &mut FieldSpeed::from_speed(c), dt, &mut ws)?;
    Ok(next)
}

/// `integral(u^2 + c^2 (v_x^2 + v_y^2))` over the whole grid.
pub fn discrete_energy(state: &RealState, c2: Speed<'_>) -> f64 {
    let g = state.grid;
    let f = &state.fields;
    integrate_region_with(&g, 0..g.nx(), 0..g.ny(), |k| {
        f[U][k].powi(2) + c2.at(k) * (f[VX][k].powi(2) + f[VY][k].powi(2))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pml::build_ramp;
    use std::f64::consts::PI;

    fn no_pml(grid: Grid2D) -> (PmlProfile1D, PmlProfile1D) {
        (
            PmlProfile1D::none(grid.x_axis()),
            PmlProfile1D::none(grid.y_axis()),
        )
    }

    #[test]
    fn zero_state_is_a_fixed_point() {
        let g = Grid2D::square(9, 1.0).unwrap();
        let (px, py) = no_pml(g);
        let c = Field2D::constant(g, 2.0);
        let d = rhs(
            &RealState::zeros(g),
            &c,
            &SourceSpec::silent(g),
            &px,
            &py,
            0.3,
        )
        .unwrap();
        assert!(d.fields.iter().all(|f| f.iter().all(|&v| v == 0.0)));
        let n = rk4_step(
            &RealState::zeros(g),
            &c,
            &SourceSpec::silent(g),
            &px,
            &py,
            0.01,
        )
        .unwrap();
        assert!(n.fields.iter().all(|f| f.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn without_pml_auxiliary_fields_stay_still() {
        let g = Grid2D::square(11, 1.0).unwrap();
        let (px, py) = no_pml(g);
        let mut s = RealState::zeros(g);
        s.fields[U] = Field2D::from_fn(g, |x, y| (3.0 * x).sin() * (2.0 * y).cos()).values;
        s.fields[VX] = Field2D::from_fn(g, |x, y| x * y).values;
        s.fields[VY] = Field2D::from_fn(g, |x, _| x * x).values;
        let c = Field2D::constant(g, 1.5);
        let d = rhs(&s, &c, &SourceSpec::silent(g), &px, &py, 0.0).unwrap();
        assert!(d.fields[PX].iter().all(|&v| v == 0.0));
        assert!(d.fields[PY].iter().all(|&v| v == 0.0));
        assert!(d.fields[G].iter().all(|&v| v == 0.0));
        // u_t = c^2 div v in the interior
        let div: Vec<f64> = s
            .field(VX)
            .ddx()
            .values
            .iter()
            .zip(s.field(VY).ddy().values)
            .map(|(a, b)| a + b)
            .collect();
        let k = g.index(5, 5);
        assert!((d.fields[U][k] - 2.25 * div[k]).abs() < 1e-12);
        // v_t = grad u
        assert!((d.fields[VX][k] - s.field(U).ddx().values[k]).abs() < 1e-12);
    }

    #[test]
    fn interior_transparency_with_zeroed_sigma() {
        // with sigma identically zero the PML system reduces to the bare split-field system
        let g = Grid2D::square(15, 2.0).unwrap();
        let mut s = RealState::zeros(g);
        s.fields[U] = Field2D::from_fn(g, |x, y| (-(x * x + y * y) * 4.0).exp()).values;
        let c = Field2D::constant(g, 1.0);
        let (px, py) = no_pml(g);
        let a = rk4_step(&s, &c, &SourceSpec::silent(g), &px, &py, 0.01).unwrap();

        // hand-rolled RK4 of u_t = div v, v_t = grad u
        let f = |st: &[Vec<f64>; 3]| -> [Vec<f64>; 3] {
            let fu = Field2D::new(g, st[0].clone()).unwrap();
            let mut du: Vec<f64> = Field2D::new(g, st[1].clone())
                .unwrap()
                .ddx()
                .values
                .iter()
                .zip(Field2D::new(g, st[2].clone()).unwrap().ddy().values)
                .map(|(a, b)| a + b)
                .collect();
            for j in 0..g.ny() {
                for i in 0..g.nx() {
                    if i == 0 || j == 0 || i + 1 == g.nx() || j + 1 == g.ny() {
                        du[g.index(i, j)] = 0.0;
                    }
                }
            }
            [du, fu.ddx().values, fu.ddy().values]
        };
        let h = 0.01;
        let y0 = [
            s.fields[U].clone(),
            s.fields[VX].clone(),
            s.fields[VY].clone(),
        ];
        let add = |y: &[Vec<f64>; 3], k: &[Vec<f64>; 3], w: f64| -> [Vec<f64>; 3] {
            std::array::from_fn(|f| y[f].iter().zip(&k[f]).map(|(a, b)| a + w * b).collect())
        };
        let k1 = f(&y0);
        let k2 = f(&add(&y0, &k1, h / 2.0));
        let k3 = f(&add(&y0, &k2, h / 2.0));
        let k4 = f(&add(&y0, &k3, h));
        for fi in 0..3 {
            for kk in 0..g.len() {
                let expect = y0[fi][kk]
                    + h / 6.0 * (k1[fi][kk] + 2.0 * k2[fi][kk] + 2.0 * k3[fi][kk] + k4[fi][kk]);
                assert!((a.fields[fi][kk] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
            }
        }
    }

    #[test]
    fn rk4_rejects_cfl_violation() {
        let g = Grid2D::square(9, 1.0).unwrap();
        let (px, py) = no_pml(g);
        let c = Field2D::constant(g, 10.0);
        let r = rk4_step(
            &RealState::zeros(g),
            &c,
            &SourceSpec::silent(g),
            &px,
            &py,
            0.01,
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn rhs_rejects_non_finite_state() {
        let g = Grid2D::square(9, 1.0).unwrap();
        let (px, py) = no_pml(g);
        let mut s = RealState::zeros(g);
        s.fields[VY][3] = f64::NAN;
        let err = rhs(
            &s,
            &Field2D::constant(g, 1.0),
            &SourceSpec::silent(g),
            &px,
            &py,
            0.0,
        )
        .unwrap_err();
        match err {
            Error::BlowUp { field, .. } => assert_eq!(field, "v_y"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn doubling_the_state_doubles_the_solution() {
        let g = Grid2D::square(24, 4.0).unwrap();
        let px = build_ramp(g.x_axis(), 4, 3.0).unwrap();
        let py = build_ramp(g.y_axis(), 4, 3.0).unwrap();
        let c = Field2D::from_fn(g, |x, _| if x > 0.5 { 0.7 } else { 1.0 });
        let sys = WaveSystem2D::new(&SourceSpec::silent(g), &px, &py).unwrap();
        let mut a = RealState::zeros(g);
        a.fields[U] = Field2D::from_fn(g, |x, y| (-(x * x + y * y)).exp()).values;
        let mut b = a.scaled(2.0);
        let mut ws = Rk4Workspace::new(g);
        let mut speed = FieldSpeed::from_speed(&c);
        for _ in 0..50 {
            sys.rk4_step(&mut a, &mut speed, 0.02, &mut ws).unwrap();
            sys.rk4_step(&mut b, &mut speed, 0.02, &mut ws).unwrap();
            for f in 0..6 {
                for k in 0..g.len() {
                    let e = 2.0 * a.fields[f][k];
                    assert!((b.fields[f][k] - e).abs() <= 1e-10 * (1e-12 + e.abs()) + 1e-300);
                }
            }
        }
    }

    #[test]
    fn standing_wave_matches_closed_form() {
        // u = sin(pi xi / Lx) sin(pi eta / Ly) oscillates as cos(w0 t)
        let (lx, ly, c) = (2.0, 3.0, 1.0);
        let g = Grid2D::new(81, 121, lx, ly).unwrap();
        let mode = Field2D::from_fn(g, |x, y| {
            (PI * (x + lx / 2.0) / lx).sin() * (PI * (y + ly / 2.0) / ly).sin()
        });
        let w0 = PI * c * (1.0 / (lx * lx) + 1.0 / (ly * ly)).sqrt();
        let period = 2.0 * PI / w0;
        let dt_max = 0.4 * g.dx().min(g.dy()) / c;
        let steps = (period / dt_max).ceil() as usize;
        let dt = period / steps as f64;
        let (px, py) = no_pml(g);
        let sys = WaveSystem2D::new(&SourceSpec::silent(g), &px, &py).unwrap();
        let mut s = RealState::zeros(g);
        s.fields[U] = mode.values.clone();
        let mut ws = Rk4Workspace::new(g);
        let mut speed = UniformSpeed::new(c);
        let mut worst: f64 = 0.0;
        for n in 1..=steps {
            sys.rk4_step(&mut s, &mut speed, dt, &mut ws).unwrap();
            let phase = (w0 * n as f64 * dt).cos();
            let (num, den) = s.fields[U]
                .iter()
                .zip(&mode.values)
                .fold((0.0, 0.0), |(a, b), (u, m)| {
                    (a + (u - phase * m).powi(2), b + m * m)
                });
            worst = worst.max((num / den).sqrt());
        }
        assert!(worst < 0.01, "relative L2 error {worst}");
    }
}
