//! Reverse sweep through the latent RK4 recurrence.
//!
//! The forward pass keeps one checkpoint per action; during the reverse sweep
//! each action's states are recomputed and the stage values of every step are
//! rebuilt from its starting state. The result is the exact gradient of the
//! discrete objective.

use crate::error::{Error, Result};
use crate::field_grid::diff_transpose_into;

use super::{
    acc_into, buf4, Buf4, LatentConditions, LatentSigmas, LatentSpeedInterp, LatentSystem,
    RolloutOutput, RolloutSpec, StepWorkspace, UI, UT, VI, VT,
};

/// Derivatives of the objective with respect to the per-step energies. Empty
/// vectors stand for all zeros.
#[derive(Clone, Debug, Default)]
pub struct SigmaGrads {
    pub sc: Vec<f64>,
    pub tot: Vec<f64>,
    pub inc: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentGradients {
    /// With respect to `[u_tot, v_tot, u_inc, v_inc]` of the initial state.
    pub initial: [Vec<f64>; 4],
    pub f_z: Vec<f64>,
    pub sigma_z: Vec<f64>,
    /// With respect to each speed frame.
    pub c_frames: Vec<Vec<f64>>,
}

struct Accum {
    sigma: Vec<f64>,
    df: Vec<f64>,
    c2: Vec<f64>,
    frames: Vec<Vec<f64>>,
}

struct BackWorkspace {
    kb: [Buf4; 4],
    yb: Buf4,
    c: [Vec<f64>; 3],
}

impl BackWorkspace {
    fn new(n: usize) -> Self {
        Self {
            kb: std::array::from_fn(|_| buf4(n)),
            yb: buf4(n),
            c: std::array::from_fn(|_| vec![0.0; n]),
        }
    }
}

impl LatentSystem<'_> {
    /// Transposed Jacobian of one `(u, v)` pair. Writes `(u_bar, v_bar)` and
    /// accumulates parameter adjoints; `c2_bar` is only touched when given.
    #[allow(clippy::too_many_arguments)]
    #[inline(always)]
    fn pair_rhs_transpose(
        &self,
        u: &[f64],
        v: &[f64],
        c2: impl Fn(usize) -> f64,
        s: f64,
        a: &[f64],
        b: &[f64],
        ub: &mut [f64],
        vb: &mut [f64],
        acc: &mut Accum,
        c2_bar: Option<&mut [f64]>,
    ) {
        let n = self.n;
        let (u, v, a, b) = (&u[..n], &v[..n], &a[..n], &b[..n]);
        let (ub, vb) = (&mut ub[..n], &mut vb[..n]);
        let sig = &self.sigma[..n];
        let (sb, dfb) = (&mut acc.sigma[..n], &mut acc.df[..n]);
        let inv = self.inv_dx;
        let h = 0.5 * inv;
        // q = c^2 a on the unpinned nodes
        let q = |i: usize| c2(i) * a[i];
        for j in 2..n - 2 {
            ub[j] = -sig[j] * a[j] + h * (b[j - 1] - b[j + 1]);
            vb[j] = h * (q(j - 1) - q(j + 1)) - sig[j] * b[j];
            sb[j] -= a[j] * u[j] + b[j] * v[j];
            dfb[j] += s * b[j];
        }
        let (l, m) = (n - 1, n - 2);
        ub[0] = -b[0] * inv - h * b[1];
        vb[0] = -h * q(1) - sig[0] * b[0];
        ub[1] = -sig[1] * a[1] + b[0] * inv - h * b[2];
        vb[1] = -h * q(2) - sig[1] * b[1];
        ub[m] = -sig[m] * a[m] + h * b[m - 1] - b[l] * inv;
        vb[m] = h * q(m - 1) - sig[m] * b[m];
        ub[l] = h * b[m] + b[l] * inv;
        vb[l] = h * q(m) - sig[l] * b[l];
        for j in [0, l] {
            sb[j] -= b[j] * v[j];
            dfb[j] += s * b[j];
        }
        for j in [1, m] {
            sb[j] -= a[j] * u[j] + b[j] * v[j];
            dfb[j] += s * b[j];
        }
        if let Some(cb) = c2_bar {
            let cb = &mut cb[..n];
            for i in 1..n - 1 {
                cb[i] = a[i] * (v[i + 1] - v[i - 1]) * h;
            }
        }
    }

    /// `ybar = J^T kbar` at time `t` and state `y`; parameter adjoints go to
    /// `acc`, with the `c^2` adjoint scattered onto the speed frames.
    fn rhs_transpose(
        &self,
        y: &Buf4,
        c: &[f64],
        t: f64,
        kbar: &Buf4,
        ybar: &mut Buf4,
        acc: &mut Accum,
    ) {
        let s = self.forcing(t);
        let [ut, vt, ui, vi] = ybar;
        let mut c2_bar = std::mem::take(&mut acc.c2);
        self.pair_rhs_transpose(
            &y[UT],
            &y[VT],
            |i| c[i] * c[i],
            s,
            &kbar[UT],
            &kbar[VT],
            ut,
            vt,
            acc,
            Some(&mut c2_bar),
        );
        let ca = self.c_amb2;
        self.pair_rhs_transpose(
            &y[UI],
            &y[VI],
            |_| ca,
            s,
            &kbar[UI],
            &kbar[VI],
            ui,
            vi,
            acc,
            None,
        );
        let (j, a) = self.speed.locate(t);
        let (f0, f1) = {
            let (lo, hi) = acc.frames.split_at_mut(j + 1);
            (&mut lo[j], &mut hi[0])
        };
        let n = self.n;
        for i in 1..n - 1 {
            let cbar = 2.0 * c[i] * c2_bar[i];
            f0[i] += (1.0 - a) * cbar;
            f1[i] += a * cbar;
        }
        acc.c2 = c2_bar;
    }

    /// Replaces `ybar` (adjoint of the state after the step) with the adjoint
    /// of the state `y` before the step taken from time `t`.
    fn step_transpose(
        &self,
        y: &Buf4,
        stages: &[Buf4; 3],
        t: f64,
        ybar: &mut Buf4,
        ws: &mut BackWorkspace,
        acc: &mut Accum,
    ) {
        let h = self.dt;
        let BackWorkspace { kb, yb, c } = ws;
        let [y2, y3, y4] = stages;
        let times = [t, t + 0.5 * h, t + h];
        for (ci, &ti) in c.iter_mut().zip(&times) {
            self.speed.fill_c(ti, ci);
        }
        let w = [h / 6.0, h / 3.0, h / 3.0, h / 6.0];
        for (s, kbs) in kb.iter_mut().enumerate() {
            for f in 0..4 {
                for (o, yb) in kbs[f].iter_mut().zip(&ybar[f]) {
                    *o = w[s] * yb;
                }
            }
        }
        let [kb1, kb2, kb3, kb4] = kb;
        self.rhs_transpose(y4, &c[2], t + h, kb4, yb, acc);
        for f in 0..4 {
            acc_into(&mut ybar[f], 1.0, &yb[f]);
            acc_into(&mut kb3[f], h, &yb[f]);
        }
        self.rhs_transpose(y3, &c[1], t + 0.5 * h, kb3, yb, acc);
        for f in 0..4 {
            acc_into(&mut ybar[f], 1.0, &yb[f]);
            acc_into(&mut kb2[f], 0.5 * h, &yb[f]);
        }
        self.rhs_transpose(y2, &c[1], t + 0.5 * h, kb2, yb, acc);
        for f in 0..4 {
            acc_into(&mut ybar[f], 1.0, &yb[f]);
            acc_into(&mut kb1[f], 0.5 * h, &yb[f]);
        }
        self.rhs_transpose(y, &c[0], t, kb1, yb, acc);
        for f in 0..4 {
            acc_into(&mut ybar[f], 1.0, &yb[f]);
        }
    }
}

/// Adds `d objective / d state` of the energies recorded after step `k`.
fn add_sigma_adjoint(y: &Buf4, k: usize, g: &SigmaGrads, dx: f64, ybar: &mut Buf4) {
    let at = |v: &Vec<f64>| v.get(k).copied().unwrap_or(0.0);
    let (gs, gt, gi) = (at(&g.sc), at(&g.tot), at(&g.inc));
    if gs == 0.0 && gt == 0.0 && gi == 0.0 {
        return;
    }
    let n = y[UT].len();
    for i in 0..n {
        let w = if i == 0 || i + 1 == n { 0.5 * dx } else { dx };
        let (ut, ui) = (y[UT][i], y[UI][i]);
        let d = ut - ui;
        ybar[UT][i] += 2.0 * w * (gs * d + gt * ut);
        ybar[UI][i] += 2.0 * w * (-gs * d + gi * ui);
    }
}

/// Gradient of `sum_k g.sc[k] sigma_sc[k] + g.tot[k] sigma_tot[k] + g.inc[k] sigma_inc[k]`
/// with respect to the latent conditions and speed frames.
pub fn rollout_backward(
    conds: &LatentConditions,
    speed: &LatentSpeedInterp,
    spec: &RolloutSpec,
    grads: &SigmaGrads,
) -> Result<LatentGradients> {
    rollout_with_gradient(conds, speed, spec, |_| Ok(grads.clone())).map(|(_, g)| g)
}

/// Rolls out once, asks `objective` for the energy adjoints of the predicted
/// series, and sweeps back. One checkpoint per action is kept; stage values
/// are rebuilt one action at a time.
pub fn rollout_with_gradient(
    conds: &LatentConditions,
    speed: &LatentSpeedInterp,
    spec: &RolloutSpec,
    objective: impl FnOnce(&LatentSigmas) -> Result<SigmaGrads>,
) -> Result<(RolloutOutput, LatentGradients)> {
    let sys = LatentSystem::new(conds, speed, spec)?;
    let n = sys.n;
    let n_steps = spec.n_steps();
    let seg = spec.steps_per_action.max(1);
    let t0 = conds.initial.t;
    let time = |k: usize| t0 + k as f64 * spec.dt;

    let mut ws = StepWorkspace::new(n);
    let mut checkpoints: Vec<Buf4> = Vec::with_capacity(n_steps / seg + 1);
    let mut state = conds.initial.clone();
    state.check_finite()?;
    let mut sigmas = LatentSigmas::with_capacity(n_steps);
    for k in 0..n_steps {
        if k % seg == 0 {
            checkpoints.push(state.fields.clone());
        }
        sys.step(&mut state.fields, time(k), &mut ws);
        state.t = time(k + 1);
        if (k + 1) % seg == 0 || k + 1 == n_steps {
            state.check_finite()?;
        }
        sigmas.push(state.sigmas());
    }
    let grads = objective(&sigmas)?;
    for g in [&grads.sc, &grads.tot, &grads.inc] {
        if !g.is_empty() && g.len() != n_steps {
            return Err(Error::Shape(format!(
                "energy adjoint has {} entries for {n_steps} steps",
                g.len()
            )));
        }
    }

    let mut acc = Accum {
        sigma: vec![0.0; n],
        df: vec![0.0; n],
        c2: vec![0.0; n],
        frames: vec![vec![0.0; n]; speed.c_frames.len()],
    };
    let mut bws = BackWorkspace::new(n);
    let mut ybar = buf4(n);
    let mut states: Vec<Buf4> = (0..=seg).map(|_| buf4(n)).collect();
    let mut stages: Vec<[Buf4; 3]> = (0..seg).map(|_| [buf4(n), buf4(n), buf4(n)]).collect();
    let StepWorkspace {
        k: kw,
        acc: accw,
        c2: c2w,
        ..
    } = &mut ws;
    for (s, ck) in checkpoints.iter().enumerate().rev() {
        let k0 = s * seg;
        let k1 = (k0 + seg).min(n_steps);
        for f in 0..4 {
            states[0][f].copy_from_slice(&ck[f]);
        }
        for k in k0..k1 {
            let j = k - k0;
            let (lo, hi) = states.split_at_mut(j + 1);
            let y = &mut hi[0];
            for f in 0..4 {
                y[f].copy_from_slice(&lo[j][f]);
            }
            let [a, b, c] = &mut stages[j];
            sys.step_stages(y, time(k), kw, accw, c2w, [a, b, c]);
        }
        for k in (k0..k1).rev() {
            let j = k - k0;
            add_sigma_adjoint(&states[j + 1], k, &grads, 1.0 / sys.inv_dx, &mut ybar);
            sys.step_transpose(
                &states[j],
                &stages[j],
                time(k),
                &mut ybar,
                &mut bws,
                &mut acc,
            );
        }
        if ybar.iter().any(|f| !f.iter().sum::<f64>().is_finite()) {
            return Err(Error::NonFiniteGradient("latent state".into()));
        }
    }
    let mut f_grad = vec![0.0; n];
    diff_transpose_into(&acc.df, 1.0 / sys.inv_dx, &mut f_grad);
    Ok((
        RolloutOutput {
            sigmas,
            final_state: state,
        },
        LatentGradients {
            initial: ybar,
            f_z: f_grad,
            sigma_z: acc.sigma,
            c_frames: acc.frames,
        },
    ))
}
