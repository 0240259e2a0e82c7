use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_grid::{integrate_region_with, Field2D, Grid2D};

use super::dynamics::{
    DesignSpeed, RealState, Rk4Workspace, SpeedSchedule, UniformSpeed, WaveSystem2D,
};
use super::{Design, DesignInterpolation, EnvConfig};

/// Three downsampled displacement frames at the last three action boundaries
/// (oldest first) plus the current radii. Before the third action the
/// earliest frames repeat the initial, at-rest frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub frames: [Vec<f32>; 3],
    pub resolution: usize,
    pub design_radii: Vec<f64>,
}

/// Per-step energies over the non-PML interior.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SigmaSeries {
    pub sc: Vec<f64>,
    pub tot: Vec<f64>,
    pub inc: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    /// Radius changes actually applied after rate and bound clamping.
    pub applied: Vec<f64>,
    pub sigma: SigmaSeries,
    pub observation: Observation,
}

/// `integral((u_tot - u_inc)^2)` over the node box `xs` x `ys`.
pub fn scattered_energy(
    u_tot: &Field2D,
    u_inc: &Field2D,
    xs: std::ops::Range<usize>,
    ys: std::ops::Range<usize>,
) -> Result<f64> {
    if u_tot.grid != u_inc.grid {
        return Err(Error::Dimension(
            "total and incident fields use different grids".into(),
        ));
    }
    let (a, b) = (&u_tot.values, &u_inc.values);
    Ok(integrate_region_with(&u_tot.grid, xs, ys, |k| {
        (a[k] - b[k]).powi(2)
    }))
}

/// Clamps a requested radius change to the rate limit, then to the radius
/// bounds, returning the change that will actually happen.
pub fn clamp_action(action: &[f64], radii: &[f64], max_delta: f64, bounds: (f64, f64)) -> Vec<f64> {
    action
        .iter()
        .zip(radii)
        .map(|(&a, &r)| {
            let a = if a.is_finite() {
                a.clamp(-max_delta, max_delta)
            } else {
                0.0
            };
            (r + a).clamp(bounds.0, bounds.1) - r
        })
        .collect()
}

/// The environment: total and incident simulations advancing in lock step.
#[derive(Clone)]
pub struct Environment {
    cfg: EnvConfig,
    grid: Grid2D,
    system: WaveSystem2D,
    total: RealState,
    incident: RealState,
    design: Design,
    action_index: usize,
    frames: VecDeque<Vec<f32>>,
    ws: Rk4Workspace,
}

impl Environment {
    pub fn new(cfg: EnvConfig, initial_radii: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid()?;
        let (px, py) = cfg.pml_profiles()?;
        let system = WaveSystem2D::new(&cfg.source()?, &px, &py)?;
        let design = Design::new(
            cfg.design.centers.clone(),
            initial_radii,
            (cfg.design.radius_min, cfg.design.radius_max),
        )?;
        let mut env = Self {
            grid,
            system,
            total: RealState::zeros(grid),
            incident: RealState::zeros(grid),
            design,
            action_index: 0,
            frames: VecDeque::with_capacity(3),
            ws: Rk4Workspace::new(grid),
            cfg,
        };
        let f = env.frame()?;
        env.frames.extend([f.clone(), f.clone(), f]);
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn total(&self) -> &RealState {
        &self.total
    }

    pub fn incident(&self) -> &RealState {
        &self.incident
    }

    pub fn action_index(&self) -> usize {
        self.action_index
    }

    pub fn time(&self) -> f64 {
        self.total.t
    }

    fn frame(&self) -> Result<Vec<f32>> {
        let r = self.cfg.observation_resolution;
        let u = Field2D {
            grid: self.grid,
            values: self.total.u().to_vec(),
        };
        Ok(u.downsample(r, r)?
            .values
            .iter()
            .map(|&v| v as f32)
            .collect())
    }

    pub fn observation(&self) -> Observation {
        Observation {
            frames: [
                self.frames[0].clone(),
                self.frames[1].clone(),
                self.frames[2].clone(),
            ],
            resolution: self.cfg.observation_resolution,
            design_radii: self.design.radii.clone(),
        }
    }

    fn sigmas(&self) -> (f64, f64, f64) {
        let r = self.cfg.interior();
        let (t, i) = (self.total.u(), self.incident.u());
        let sc = integrate_region_with(&self.grid, r.clone(), r.clone(), |k| (t[k] - i[k]).powi(2));
        let tot = integrate_region_with(&self.grid, r.clone(), r.clone(), |k| t[k] * t[k]);
        let inc = integrate_region_with(&self.grid, r.clone(), r, |k| i[k] * i[k]);
        (sc, tot, inc)
    }

    /// Applies one action: interpolates the design over the action interval and
    /// advances both simulations `steps_per_action` RK4 steps.
    pub fn step_action(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if action.len() != self.design.len() {
            return Err(Error::Shape(format!(
                "action has {} entries for {} scatterers",
                action.len(),
                self.design.len()
            )));
        }
        let applied = clamp_action(
            action,
            &self.design.radii,
            self.cfg.max_delta(),
            self.design.radius_bounds,
        );
        let next_radii: Vec<f64> = self
            .design
            .radii
            .iter()
            .zip(&applied)
            .map(|(r, a)| r + a)
            .collect();
        let next = self.design.with_radii(next_radii)?;
        let s = self.cfg.steps_per_action;
        let dt = self.cfg.dt;
        let step0 = self.action_index * s;
        let t0 = step0 as f64 * dt;
        let t1 = (step0 + s) as f64 * dt;
        let interp = DesignInterpolation::new(
            self.design.clone(),
            next.clone(),
            t0,
            t1,
            self.cfg.design.actuation_rate,
        )?;
        let mut total_speed = DesignSpeed::new(self.grid, self.cfg.medium, interp);
        let mut inc_speed = UniformSpeed::new(self.cfg.medium.c_ambient);
        let mut sigma = SigmaSeries {
            sc: Vec::with_capacity(s),
            tot: Vec::with_capacity(s),
            inc: Vec::with_capacity(s),
        };
        for n in 0..s {
            let t = (step0 + n) as f64 * dt;
            self.total.t = t;
            self.incident.t = t;
            self.system.rk4_step(
                &mut self.total,
                &mut total_speed as &mut dyn SpeedSchedule,
                dt,
                &mut self.ws,
            )?;
            self.system
                .rk4_step(&mut self.incident, &mut inc_speed, dt, &mut self.ws)?;
            let (sc, tot, inc) = self.sigmas();
            sigma.sc.push(sc);
            sigma.tot.push(tot);
            sigma.inc.push(inc);
        }
        self.total.t = t1;
        self.incident.t = t1;
        self.design = next;
        self.action_index += 1;
        let f = self.frame()?;
        self.frames.pop_front();
        self.frames.push_back(f);
        Ok(StepOutcome {
            applied,
            sigma,
            observation: self.observation(),
        })
    }
}

/// What a policy sees before choosing an action.
pub struct PolicyContext<'a> {
    pub env: &'a Environment,
    pub observation: Observation,
    pub action_index: usize,
}

pub trait Policy {
    /// Radius deltas, one per scatterer; the environment clamps them.
    fn act(&mut self, ctx: &PolicyContext<'_>) -> Result<Vec<f64>>;

    fn label(&self) -> &str;
}

/// Uniform radius deltas within the rate limit.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a0c7_1000_0001),
        }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, ctx: &PolicyContext<'_>) -> Result<Vec<f64>> {
        let d = ctx.env.config().max_delta();
        Ok((0..ctx.env.design().len())
            .map(|_| {
                if d > 0.0 {
                    self.rng.gen_range(-d..=d)
                } else {
                    0.0
                }
            })
            .collect())
    }

    fn label(&self) -> &str {
        "random"
    }
}

pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn act(&mut self, ctx: &PolicyContext<'_>) -> Result<Vec<f64>> {
        Ok(vec![0.0; ctx.env.design().len()])
    }

    fn label(&self) -> &str {
        "zero"
    }
}

/// One rollout of the environment. Frames and sigma series are stored in
/// single precision, the precision of the on-disk dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub policy: String,
    pub resolution: usize,
    /// `n_actions + 1` frames, one per action boundary, each `resolution^2`.
    pub frames: Vec<Vec<f32>>,
    /// `n_actions + 1` radius vectors, one per action boundary.
    pub radii: Vec<Vec<f64>>,
    /// Applied radius deltas.
    pub actions: Vec<Vec<f64>>,
    pub sigma_sc: Vec<f32>,
    pub sigma_tot: Vec<f32>,
    pub sigma_inc: Vec<f32>,
    pub steps_per_action: usize,
    pub config_hash: String,
}

impl EpisodeRecord {
    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    /// Observation at action boundary `tau`, frames clamped to `t >= 0`.
    pub fn observation(&self, tau: usize) -> Observation {
        let f = |k: usize| self.frames[k].clone();
        Observation {
            frames: [f(tau.saturating_sub(2)), f(tau.saturating_sub(1)), f(tau)],
            resolution: self.resolution,
            design_radii: self.radii[tau].clone(),
        }
    }

    pub fn check_consistent(&self) -> Result<()> {
        let n = self.n_actions();
        let steps = n * self.steps_per_action;
        let px = self.resolution * self.resolution;
        if self.frames.len() != n + 1
            || self.radii.len() != n + 1
            || self.sigma_sc.len() != steps
            || self.sigma_tot.len() != steps
            || self.sigma_inc.len() != steps
            || self.frames.iter().any(|f| f.len() != px)
        {
            return Err(Error::Shape(format!(
                "episode lengths inconsistent with {n} actions x {} steps",
                self.steps_per_action
            )));
        }
        Ok(())
    }

    pub fn mean_sigma_sc(&self) -> f64 {
        self.sigma_sc.iter().map(|&v| v as f64).sum::<f64>() / self.sigma_sc.len().max(1) as f64
    }
}

/// Initial radii for an episode: fixed by config or uniform within bounds.
pub(crate) fn initial_radii(cfg: &EnvConfig, seed: u64) -> Vec<f64> {
    if let Some(r) = &cfg.design.initial_radii {
        return r.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (cfg.design.radius_min, cfg.design.radius_max);
    (0..cfg.n_scatterers())
        .map(|_| if hi > lo { rng.gen_range(lo..=hi) } else { lo })
        .collect()
}

/// Runs a full episode under `policy`. Deterministic given `seed` and the policy's own state.
pub fn run_episode(
    cfg: &EnvConfig,
    policy: &mut dyn Policy,
    seed: u64,
    config_hash: &str,
) -> Result<EpisodeRecord> {
    let mut env = Environment::new(cfg.clone(), initial_radii(cfg, seed))?;
    let n = cfg.actions_per_episode;
    let steps = cfg.steps_per_episode();
    let mut rec = EpisodeRecord {
        seed,
        policy: policy.label().to_string(),
        resolution: cfg.observation_resolution,
        frames: Vec::with_capacity(n + 1),
        radii: Vec::with_capacity(n + 1),
        actions: Vec::with_capacity(n),
        sigma_sc: Vec::with_capacity(steps),
        sigma_tot: Vec::with_capacity(steps),
        sigma_inc: Vec::with_capacity(steps),
        steps_per_action: cfg.steps_per_action,
        config_hash: config_hash.to_string(),
    };
    let obs = env.observation();
    rec.frames.push(obs.frames[2].clone());
    rec.radii.push(obs.design_radii);
    for tau in 0..n {
        let ctx = PolicyContext {
            env: &env,
            observation: env.observation(),
            action_index: tau,
        };
        let action = policy.act(&ctx)?;
        let out = env.step_action(&action)?;
        rec.actions.push(out.applied);
        rec.frames.push(out.observation.frames[2].clone());
        rec.radii.push(out.observation.design_radii);
        rec.sigma_sc.extend(out.sigma.sc.iter().map(|&v| v as f32));
        rec.sigma_tot
            .extend(out.sigma.tot.iter().map(|&v| v as f32));
        rec.sigma_inc
            .extend(out.sigma.inc.iter().map(|&v| v as f32));
        log::debug!("{} episode seed {seed}: action {tau}/{n}", policy.label());
    }
    Ok(rec)
}
