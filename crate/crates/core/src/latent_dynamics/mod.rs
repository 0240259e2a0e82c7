//! One-dimensional latent wave dynamics.
//!
//! Two latent simulations run side by side on one grid: the total pair
//! `(u_tot, v_tot)` propagates with a time-varying speed `c_z(x, t)`, the
//! incident pair `(u_inc, v_inc)` with the constant ambient speed. Both share a
//! forcing shape `f_z` oscillating at the source frequency and a damping profile
//! `sigma_z`:
//!
//! ```text
//! du/dt = c^2 dx v - sigma u
//! dv/dt = dx (u + f_z sin(2 pi omega t)) - sigma v
//! ```
//!
//! `u` is pinned to zero at both ends. The predicted energies are the
//! trapezoidal integrals of `(u_tot - u_inc)^2`, `u_tot^2` and `u_inc^2`,
//! recorded after every RK4 step.

mod adjoint;

pub use adjoint::{rollout_backward, rollout_with_gradient, LatentGradients, SigmaGrads};

use crate::error::{Error, Result};
use crate::field_grid::{integrate_1d, Field1D, Grid1D};

pub const LATENT_FIELD_NAMES: [&str; 4] = ["u_tot", "v_tot", "u_inc", "v_inc"];

pub(crate) const UT: usize = 0;
pub(crate) const VT: usize = 1;
pub(crate) const UI: usize = 2;
pub(crate) const VI: usize = 3;

/// Latent CFL bound for the speed frames.
pub const LATENT_CFL_LIMIT: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    pub grid: Grid1D,
    /// `[u_tot, v_tot, u_inc, v_inc]`.
    pub fields: [Vec<f64>; 4],
    pub t: f64,
}

impl LatentState {
    pub fn zeros(grid: Grid1D, t: f64) -> Self {
        Self {
            grid,
            fields: std::array::from_fn(|_| vec![0.0; grid.n_cells()]),
            t,
        }
    }

    pub fn from_fields(
        u_tot: Field1D,
        v_tot: Field1D,
        u_inc: Field1D,
        v_inc: Field1D,
        t: f64,
    ) -> Result<Self> {
        let grid = u_tot.grid;
        if [&v_tot, &u_inc, &v_inc].iter().any(|f| f.grid != grid) {
            return Err(Error::Dimension(
                "latent fields live on different grids".into(),
            ));
        }
        Ok(Self {
            grid,
            fields: [u_tot.values, v_tot.values, u_inc.values, v_inc.values],
            t,
        })
    }

    pub fn u_tot(&self) -> &[f64] {
        &self.fields[UT]
    }

    pub fn u_inc(&self) -> &[f64] {
        &self.fields[UI]
    }

    pub fn check_finite(&self) -> Result<()> {
        for (k, f) in self.fields.iter().enumerate() {
            if !f.iter().sum::<f64>().is_finite() {
                return Err(Error::BlowUp {
                    field: LATENT_FIELD_NAMES[k].to_string(),
                    t: self.t,
                });
            }
        }
        Ok(())
    }

    /// `(sigma_sc, sigma_tot, sigma_inc)` of the current state.
    pub fn sigmas(&self) -> (f64, f64, f64) {
        let dx = self.grid.dx();
        let (ut, ui) = (&self.fields[UT], &self.fields[UI]);
        let n = ut.len();
        let mut sc = 0.0;
        let mut tot = 0.0;
        let mut inc = 0.0;
        for i in 0..n {
            let w = if i == 0 || i + 1 == n { 0.5 } else { 1.0 };
            let d = ut[i] - ui[i];
            sc += w * d * d;
            tot += w * ut[i] * ut[i];
            inc += w * ui[i] * ui[i];
        }
        (sc * dx, tot * dx, inc * dx)
    }
}

/// Everything the wave encoder produces for one rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentConditions {
    pub initial: LatentState,
    pub f_z: Field1D,
    pub sigma_z: Field1D,
    pub omega: f64,
}

impl LatentConditions {
    fn validate(&self) -> Result<()> {
        let g = self.initial.grid;
        if self.f_z.grid != g || self.sigma_z.grid != g {
            return Err(Error::Dimension(
                "latent conditions live on different grids".into(),
            ));
        }
        if self.sigma_z.values.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::Parameter(
                "latent damping must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Speed frames at increasing knot times; `c_z` is linear in `t` between them.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSpeedInterp {
    pub c_frames: Vec<Field1D>,
    pub t_knots: Vec<f64>,
}

impl LatentSpeedInterp {
    pub fn new(c_frames: Vec<Field1D>, t_knots: Vec<f64>) -> Result<Self> {
        if c_frames.len() < 2 || c_frames.len() != t_knots.len() {
            return Err(Error::Shape(format!(
                "{} speed frames for {} knots (need at least 2)",
                c_frames.len(),
                t_knots.len()
            )));
        }
        if t_knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parameter(
                "speed knots must be strictly increasing".into(),
            ));
        }
        if c_frames
            .iter()
            .any(|f| f.grid != c_frames[0].grid || f.values.iter().any(|&c| !(c > 0.0)))
        {
            return Err(Error::Parameter(
                "speed frames must be positive on one grid".into(),
            ));
        }
        Ok(Self { c_frames, t_knots })
    }

    /// Uniform speed held over `[t0, t1]`.
    pub fn constant(grid: Grid1D, c: f64, t0: f64, t1: f64) -> Result<Self> {
        let f = Field1D::from_fn(grid, |_| c);
        Self::new(vec![f.clone(), f], vec![t0, t1])
    }

    pub fn c_max(&self) -> f64 {
        self.c_frames
            .iter()
            .flat_map(|f| f.values.iter().copied())
            .fold(0.0, f64::max)
    }

    /// Interval index and weight of the later knot at time `t`.
    pub(crate) fn locate(&self, t: f64) -> (usize, f64) {
        let k = &self.t_knots;
        let j = k.partition_point(|&x| x <= t).clamp(1, k.len() - 1) - 1;
        let a = ((t - k[j]) / (k[j + 1] - k[j])).clamp(0.0, 1.0);
        (j, a)
    }

    pub(crate) fn fill_c(&self, t: f64, out: &mut [f64]) {
        let (j, a) = self.locate(t);
        let (c0, c1) = (&self.c_frames[j].values, &self.c_frames[j + 1].values);
        for ((o, x), y) in out.iter_mut().zip(c0).zip(c1) {
            *o = x + a * (y - x);
        }
    }

    pub(crate) fn fill_c2(&self, t: f64, out: &mut [f64]) {
        let (j, a) = self.locate(t);
        let (c0, c1) = (&self.c_frames[j].values, &self.c_frames[j + 1].values);
        for ((o, x), y) in out.iter_mut().zip(c0).zip(c1) {
            let c = x + a * (y - x);
            *o = c * c;
        }
    }
}

/// Precomputed sine table `sin(n pi xi_i / L)` for `n = 1..=N`; rows are nodes.
#[derive(Clone, Debug)]
pub struct SineBasis {
    grid: Grid1D,
    n_modes: usize,
    table: Vec<f64>,
}

impl SineBasis {
    pub fn new(grid: Grid1D, n_modes: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::Parameter(
                "sinusoidal embedding needs at least one mode".into(),
            ));
        }
        let n = grid.n_cells();
        let mut table = vec![0.0; n * n_modes];
        // endpoints stay exactly zero
        for i in 1..n - 1 {
            let xi = i as f64 / (n - 1) as f64;
            for m in 0..n_modes {
                table[i * n_modes + m] = ((m + 1) as f64 * std::f64::consts::PI * xi).sin();
            }
        }
        Ok(Self {
            grid,
            n_modes,
            table,
        })
    }

    pub fn grid(&self) -> Grid1D {
        self.grid
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn embed_into(&self, coeffs: &[f64], out: &mut [f64]) {
        debug_assert_eq!(coeffs.len(), self.n_modes);
        for (o, row) in out.iter_mut().zip(self.table.chunks_exact(self.n_modes)) {
            *o = row.iter().zip(coeffs).map(|(a, b)| a * b).sum();
        }
    }

    pub fn embed(&self, coeffs: &[f64]) -> Field1D {
        let mut values = vec![0.0; self.grid.n_cells()];
        self.embed_into(coeffs, &mut values);
        Field1D {
            grid: self.grid,
            values,
        }
    }

    /// Accumulates the transpose of [`SineBasis::embed`] into `coeff_grad`.
    pub fn embed_transpose(&self, node_grad: &[f64], coeff_grad: &mut [f64]) {
        for (g, row) in node_grad.iter().zip(self.table.chunks_exact(self.n_modes)) {
            if *g != 0.0 {
                for (c, s) in coeff_grad.iter_mut().zip(row) {
                    *c += g * s;
                }
            }
        }
    }
}

/// `sum_n coeffs[n-1] sin(n pi xi / L)` with `xi = x + L/2`.
pub fn sinusoidal_embed(coeffs: &[f64], grid: Grid1D) -> Result<Field1D> {
    Ok(SineBasis::new(grid, coeffs.len())?.embed(coeffs))
}

/// Predicted energies, one entry per integration step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LatentSigmas {
    pub sc: Vec<f64>,
    pub tot: Vec<f64>,
    pub inc: Vec<f64>,
}

impl LatentSigmas {
    fn with_capacity(n: usize) -> Self {
        Self {
            sc: Vec::with_capacity(n),
            tot: Vec::with_capacity(n),
            inc: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, s: (f64, f64, f64)) {
        self.sc.push(s.0);
        self.tot.push(s.1);
        self.inc.push(s.2);
    }
}

#[derive(Clone, Debug)]
pub struct RolloutOutput {
    pub sigmas: LatentSigmas,
    pub final_state: LatentState,
}

/// Integration schedule of a rollout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RolloutSpec {
    pub horizon_actions: usize,
    pub steps_per_action: usize,
    pub dt: f64,
    pub c_ambient: f64,
}

impl RolloutSpec {
    pub fn n_steps(&self) -> usize {
        self.horizon_actions * self.steps_per_action
    }
}

/// The discretized right-hand side with everything but the state fixed.
pub(crate) struct LatentSystem<'a> {
    pub n: usize,
    pub inv_dx: f64,
    pub sigma: &'a [f64],
    /// `dx f_z`.
    pub df: Vec<f64>,
    pub c_amb2: f64,
    pub omega: f64,
    pub speed: &'a LatentSpeedInterp,
    pub dt: f64,
}

pub(crate) type Buf4 = [Vec<f64>; 4];

pub(crate) fn buf4(n: usize) -> Buf4 {
    std::array::from_fn(|_| vec![0.0; n])
}

#[inline(always)]
pub(crate) fn d_at(x: &[f64], i: usize, inv_dx: f64) -> f64 {
    let n = x.len();
    if i == 0 {
        (x[1] - x[0]) * inv_dx
    } else if i + 1 == n {
        (x[n - 1] - x[n - 2]) * inv_dx
    } else {
        (x[i + 1] - x[i - 1]) * 0.5 * inv_dx
    }
}

impl<'a> LatentSystem<'a> {
    pub fn new(
        conds: &'a LatentConditions,
        speed: &'a LatentSpeedInterp,
        spec: &RolloutSpec,
    ) -> Result<Self> {
        conds.validate()?;
        let grid = conds.initial.grid;
        if grid.n_cells() < 5 {
            return Err(Error::Dimension(
                "the latent grid needs at least 5 cells".into(),
            ));
        }
        if speed.c_frames[0].grid != grid {
            return Err(Error::Dimension(
                "speed frames and latent state use different grids".into(),
            ));
        }
        let t0 = conds.initial.t;
        let t1 = t0 + spec.n_steps() as f64 * spec.dt;
        let span = (speed.t_knots[speed.t_knots.len() - 1] - speed.t_knots[0]).abs();
        let tol = 1e-9 * span.max(spec.dt);
        if speed.t_knots[0] > t0 + tol || *speed.t_knots.last().unwrap() < t1 - tol {
            return Err(Error::Parameter(format!(
                "speed knots [{}, {}] do not cover the rollout [{t0}, {t1}]",
                speed.t_knots[0],
                speed.t_knots.last().unwrap()
            )));
        }
        let dx = grid.dx();
        let c_max = speed.c_max().max(spec.c_ambient);
        let cfl = c_max * spec.dt / dx;
        if !(cfl <= LATENT_CFL_LIMIT + 1e-12) {
            return Err(Error::Parameter(format!(
                "latent CFL number {cfl:.3} exceeds {LATENT_CFL_LIMIT}"
            )));
        }
        let inv_dx = 1.0 / dx;
        let f = &conds.f_z.values;
        let df = (0..f.len()).map(|i| d_at(f, i, inv_dx)).collect();
        Ok(Self {
            n: grid.n_cells(),
            inv_dx,
            sigma: &conds.sigma_z.values,
            df,
            c_amb2: spec.c_ambient * spec.c_ambient,
            omega: conds.omega,
            speed,
            dt: spec.dt,
        })
    }

    #[inline]
    pub fn forcing(&self, t: f64) -> f64 {
        (2.0 * std::f64::consts::PI * self.omega * t).sin()
    }

    /// Derivative of one `(u, v)` pair.
    #[inline(always)]
    fn pair_rhs(
        &self,
        u: &[f64],
        v: &[f64],
        c2: impl Fn(usize) -> f64,
        s: f64,
        du: &mut [f64],
        dv: &mut [f64],
    ) {
        let n = self.n;
        let (u, v, du, dv) = (&u[..n], &v[..n], &mut du[..n], &mut dv[..n]);
        let (sig, df) = (&self.sigma[..n], &self.df[..n]);
        let h = 0.5 * self.inv_dx;
        du[0] = 0.0;
        du[n - 1] = 0.0;
        dv[0] = (u[1] - u[0]) * self.inv_dx + s * df[0] - sig[0] * v[0];
        dv[n - 1] = (u[n - 1] - u[n - 2]) * self.inv_dx + s * df[n - 1] - sig[n - 1] * v[n - 1];
        for i in 1..n - 1 {
            du[i] = c2(i) * (v[i + 1] - v[i - 1]) * h - sig[i] * u[i];
            dv[i] = (u[i + 1] - u[i - 1]) * h + s * df[i] - sig[i] * v[i];
        }
    }

    /// Full derivative at time `t`; `c2` holds the total-pair `c_z^2`.
    pub fn rhs(&self, y: &Buf4, c2: &[f64], t: f64, out: &mut Buf4) {
        let s = self.forcing(t);
        let [a, b, c, d] = out;
        self.pair_rhs(&y[UT], &y[VT], |i| c2[i], s, a, b);
        let ca = self.c_amb2;
        self.pair_rhs(&y[UI], &y[VI], |_| ca, s, c, d);
    }

    /// One RK4 step from `t`.
    pub fn step(&self, y: &mut Buf4, t: f64, ws: &mut StepWorkspace) {
        let StepWorkspace { k, tmp, acc, c2 } = ws;
        let [t2, t3, t4] = tmp;
        self.step_stages(y, t, k, acc, c2, [t2, t3, t4]);
    }

    /// RK4 step that leaves the inputs of stages 2, 3 and 4 in `stages`.
    pub fn step_stages(
        &self,
        y: &mut Buf4,
        t: f64,
        k: &mut Buf4,
        acc: &mut Buf4,
        c2: &mut [f64],
        stages: [&mut Buf4; 3],
    ) {
        let h = self.dt;
        let [y2, y3, y4] = stages;
        self.speed.fill_c2(t, c2);
        self.rhs(y, c2, t, k);
        for f in 0..4 {
            acc[f].copy_from_slice(&k[f]);
            axpy_into(&mut y2[f], &y[f], 0.5 * h, &k[f]);
        }
        self.speed.fill_c2(t + 0.5 * h, c2);
        self.rhs(y2, c2, t + 0.5 * h, k);
        for f in 0..4 {
            acc_into(&mut acc[f], 2.0, &k[f]);
            axpy_into(&mut y3[f], &y[f], 0.5 * h, &k[f]);
        }
        self.rhs(y3, c2, t + 0.5 * h, k);
        for f in 0..4 {
            acc_into(&mut acc[f], 2.0, &k[f]);
            axpy_into(&mut y4[f], &y[f], h, &k[f]);
        }
        self.speed.fill_c2(t + h, c2);
        self.rhs(y4, c2, t + h, k);
        for f in 0..4 {
            for ((yi, a), ki) in y[f].iter_mut().zip(&acc[f]).zip(&k[f]) {
                *yi += h / 6.0 * (a + ki);
            }
        }
    }
}

/// `out = y + a * k`.
#[inline]
pub(crate) fn axpy_into(out: &mut [f64], y: &[f64], a: f64, k: &[f64]) {
    for ((o, yi), ki) in out.iter_mut().zip(y).zip(k) {
        *o = yi + a * ki;
    }
}

/// `out += a * k`.
#[inline]
pub(crate) fn acc_into(out: &mut [f64], a: f64, k: &[f64]) {
    for (o, ki) in out.iter_mut().zip(k) {
        *o += a * ki;
    }
}

pub(crate) struct StepWorkspace {
    pub k: Buf4,
    pub tmp: [Buf4; 3],
    pub acc: Buf4,
    pub c2: Vec<f64>,
}

impl StepWorkspace {
    pub fn new(n: usize) -> Self {
        Self {
            k: buf4(n),
            tmp: [buf4(n), buf4(n), buf4(n)],
            acc: buf4(n),
            c2: vec![0.0; n],
        }
    }
}

/// Derivative of the latent state at its own time under speed `c_z`.
pub fn latent_rhs(
    state: &LatentState,
    c_z: &Field1D,
    f_z: &Field1D,
    sigma_z: &Field1D,
    omega: f64,
    c_ambient: f64,
) -> Result<LatentState> {
    let g = state.grid;
    if c_z.grid != g || f_z.grid != g || sigma_z.grid != g {
        return Err(Error::Dimension(
            "latent fields live on different grids".into(),
        ));
    }
    state.check_finite()?;
    let speed = LatentSpeedInterp {
        c_frames: vec![c_z.clone(), c_z.clone()],
        t_knots: vec![state.t, state.t + 1.0],
    };
    let sys = LatentSystem {
        n: g.n_cells(),
        inv_dx: 1.0 / g.dx(),
        sigma: &sigma_z.values,
        df: (0..g.n_cells())
            .map(|i| d_at(&f_z.values, i, 1.0 / g.dx()))
            .collect(),
        c_amb2: c_ambient * c_ambient,
        omega,
        speed: &speed,
        dt: 0.0,
    };
    let c2: Vec<f64> = c_z.values.iter().map(|c| c * c).collect();
    let mut out = LatentState::zeros(g, state.t);
    sys.rhs(&state.fields, &c2, state.t, &mut out.fields);
    Ok(out)
}

/// Integrates the latent system for `spec.n_steps()` RK4 steps, recording the
/// predicted energies after every step. `observe` sees the state after each
/// step.
pub fn rollout_with(
    conds: &LatentConditions,
    speed: &LatentSpeedInterp,
    spec: &RolloutSpec,
    mut observe: impl FnMut(usize, &LatentState),
) -> Result<RolloutOutput> {
    let sys = LatentSystem::new(conds, speed, spec)?;
    let mut state = conds.initial.clone();
    state.check_finite()?;
    let t0 = state.t;
    let mut ws = StepWorkspace::new(sys.n);
    let n_steps = spec.n_steps();
    let mut sigmas = LatentSigmas::with_capacity(n_steps);
    for k in 0..n_steps {
        let t = t0 + k as f64 * spec.dt;
        sys.step(&mut state.fields, t, &mut ws);
        state.t = t0 + (k + 1) as f64 * spec.dt;
        if (k + 1) % spec.steps_per_action.max(1) == 0 || k + 1 == n_steps {
            state.check_finite()?;
        }
        sigmas.push(state.sigmas());
        observe(k, &state);
    }
    Ok(RolloutOutput {
        sigmas,
        final_state: state,
    })
}

pub fn rollout(
    conds: &LatentConditions,
    speed: &LatentSpeedInterp,
    spec: &RolloutSpec,
) -> Result<RolloutOutput> {
    rollout_with(conds, speed, spec, |_, _| {})
}

/// `integral(u^2 + c^2 v^2)` for one latent pair; conserved by the undamped,
/// unforced system with uniform speed.
pub fn pair_energy(u: &[f64], v: &[f64], c2: f64, dx: f64) -> f64 {
    let e: Vec<f64> = u.iter().zip(v).map(|(a, b)| a * a + c2 * b * b).collect();
    integrate_1d(&e, dx)
}

#[cfg(test)]
mod tests;
