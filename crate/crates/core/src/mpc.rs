//! Random-shooting model-predictive control.
//!
//! Each step samples `n_shots` radius-delta sequences, scores them with a
//! model's predicted scattered energy plus an action penalty, and applies the
//! first action of the cheapest sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acoustic_env::{
    clamp_action, run_episode, EnvConfig, Environment, EpisodeRecord, Policy, PolicyContext,
};
use crate::error::{Error, Result};
use crate::latent_dynamics::LatentConditions;
use crate::training::Surrogate;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    pub n_shots: usize,
    /// Planning horizon in actions.
    pub horizon: usize,
    /// Action penalty; `None` uses the model's calibrated default.
    pub beta: Option<f64>,
    /// Sampled deltas are uniform within this fraction of the rate limit.
    pub action_fraction: f64,
    pub seed: u64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            n_shots: 256,
            horizon: 10,
            beta: None,
            action_fraction: 1.0,
            seed: 0,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_shots == 0 || self.horizon == 0 {
            return Err(Error::Config(
                "n_shots and horizon must be at least 1".into(),
            ));
        }
        if let Some(b) = self.beta {
            if !(b >= 0.0) {
                return Err(Error::Config(format!("beta must be non-negative, got {b}")));
            }
        }
        if !(self.action_fraction > 0.0 && self.action_fraction <= 1.0) {
            return Err(Error::Config("action_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// `sum over intervals of (dt * sum of sigma_hat over the interval + beta * |a|^2)`.
pub fn cost(sigma_hat_sc: &[f64], actions: &[Vec<f64>], beta: f64, dt: f64) -> f64 {
    let energy = dt * sigma_hat_sc.iter().sum::<f64>();
    let penalty: f64 = actions.iter().flat_map(|a| a.iter()).map(|v| v * v).sum();
    energy + beta * penalty
}

/// A model that can score candidate design trajectories.
pub trait ShotModel: Sync {
    /// Per-observation state shared by all shots.
    type Context: Sync;

    fn prepare(&self, env: &Environment) -> Result<Self::Context>;

    /// Predicted scattered energy per integration step while the design moves
    /// through `radii_seq` (current radii first).
    fn predict_sc(&self, ctx: &Self::Context, radii_seq: &[Vec<f64>]) -> Result<Vec<f64>>;

    /// Action penalty used when the config leaves it open.
    fn default_beta(&self) -> f64;
}

pub struct SurrogateContext {
    conds: LatentConditions,
    tau: usize,
}

impl ShotModel for Surrogate {
    type Context = SurrogateContext;

    fn prepare(&self, env: &Environment) -> Result<SurrogateContext> {
        let tau = env.action_index();
        Ok(SurrogateContext {
            conds: self.encode(&env.observation(), tau)?,
            tau,
        })
    }

    fn predict_sc(&self, ctx: &SurrogateContext, radii_seq: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self
            .rollout_from(&ctx.conds, radii_seq, ctx.tau, |_, _| {})?
            .sigmas
            .sc)
    }

    fn default_beta(&self) -> f64 {
        self.meta.beta
    }
}

/// Scores shots by running the real environment forward: the best any model
/// could do. Energies are divided by `sigma_scale`.
pub struct EnvironmentOracle {
    pub sigma_scale: f64,
    pub beta: f64,
}

impl ShotModel for EnvironmentOracle {
    type Context = Environment;

    fn prepare(&self, env: &Environment) -> Result<Environment> {
        Ok(env.clone())
    }

    fn predict_sc(&self, ctx: &Environment, radii_seq: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut env = ctx.clone();
        let mut out = Vec::new();
        for w in radii_seq.windows(2) {
            let a: Vec<f64> = w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect();
            let s = env.step_action(&a)?;
            out.extend(s.sigma.sc.iter().map(|v| v / self.sigma_scale));
        }
        Ok(out)
    }

    fn default_beta(&self) -> f64 {
        self.beta
    }
}

/// Candidate sequence: applied deltas and the radii they pass through.
#[derive(Clone, Debug, PartialEq)]
pub struct Shot {
    pub actions: Vec<Vec<f64>>,
    pub radii: Vec<Vec<f64>>,
}

/// Draws `n_shots` sequences of clamped radius deltas.
pub fn sample_shots(env: &Environment, cfg: &MpcConfig, rng: &mut impl Rng) -> Vec<Shot> {
    let c = env.config();
    let d = c.max_delta() * cfg.action_fraction;
    let bounds = env.design().radius_bounds;
    let start = env.design().radii.clone();
    (0..cfg.n_shots)
        .map(|_| {
            let mut radii = vec![start.clone()];
            let mut actions = Vec::with_capacity(cfg.horizon);
            for _ in 0..cfg.horizon {
                let r = radii.last().unwrap();
                let raw: Vec<f64> = r
                    .iter()
                    .map(|_| if d > 0.0 { rng.gen_range(-d..=d) } else { 0.0 })
                    .collect();
                let a = clamp_action(&raw, r, c.max_delta(), bounds);
                radii.push(r.iter().zip(&a).map(|(x, y)| x + y).collect());
                actions.push(a);
            }
            Shot { actions, radii }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanOutcome {
    pub action: Vec<f64>,
    /// Cost of the chosen shot; `None` when every shot blew up.
    pub cost: Option<f64>,
    pub chosen: Option<usize>,
    pub discarded: usize,
}

/// Index of the cheapest finite cost; ties go to the lowest index.
pub fn select(costs: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, c) in costs.iter().enumerate() {
        if let Some(c) = *c {
            if c.is_finite() && best.is_none_or(|(_, b)| c < b) {
                best = Some((k, c));
            }
        }
    }
    best.map(|(k, _)| k)
}

/// Scores given shots and returns the first action of the best one.
pub fn plan_shots<M: ShotModel>(
    model: &M,
    env: &Environment,
    shots: &[Shot],
    beta: f64,
) -> Result<PlanOutcome> {
    let ctx = model.prepare(env)?;
    let dt = env.config().dt;
    let costs: Vec<Option<f64>> = shots
        .par_iter()
        .map(|s| match model.predict_sc(&ctx, &s.radii) {
            Ok(p) => Ok(Some(cost(&p, &s.actions, beta, dt))),
            Err(e) if e.is_blow_up() => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let discarded = costs
        .iter()
        .filter(|c| !matches!(c, Some(v) if v.is_finite()))
        .count();
    match select(&costs) {
        Some(k) => Ok(PlanOutcome {
            action: shots[k].actions[0].clone(),
            cost: costs[k],
            chosen: Some(k),
            discarded,
        }),
        None => {
            log::warn!(
                "all {} shots blew up at action {}; holding the design",
                shots.len(),
                env.action_index()
            );
            Ok(PlanOutcome {
                action: vec![0.0; env.design().len()],
                cost: None,
                chosen: None,
                discarded,
            })
        }
    }
}

/// One planning step with freshly sampled shots.
pub fn plan<M: ShotModel>(
    model: &M,
    env: &Environment,
    cfg: &MpcConfig,
    rng: &mut impl Rng,
) -> Result<PlanOutcome> {
    cfg.validate()?;
    let shots = sample_shots(env, cfg, rng);
    plan_shots(
        model,
        env,
        &shots,
        cfg.beta.unwrap_or_else(|| model.default_beta()),
    )
}

/// Closed-loop controller usable wherever a [`Policy`] is expected.
pub struct MpcPolicy<'m, M> {
    model: &'m M,
    cfg: MpcConfig,
    rng: ChaCha8Rng,
    pub outcomes: Vec<PlanOutcome>,
}

impl<'m, M: ShotModel> MpcPolicy<'m, M> {
    pub fn new(model: &'m M, cfg: MpcConfig, episode_seed: u64) -> Self {
        let rng =
            ChaCha8Rng::seed_from_u64(cfg.seed ^ episode_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        Self {
            model,
            cfg,
            rng,
            outcomes: Vec::new(),
        }
    }
}

impl<M: ShotModel> Policy for MpcPolicy<'_, M> {
    fn act(&mut self, ctx: &PolicyContext<'_>) -> Result<Vec<f64>> {
        let out = plan(self.model, ctx.env, &self.cfg, &mut self.rng)?;
        log::debug!(
            "mpc action {}: shot {:?} cost {:?} ({} discarded)",
            ctx.action_index,
            out.chosen,
            out.cost,
            out.discarded
        );
        let a = out.action.clone();
        self.outcomes.push(out);
        Ok(a)
    }

    fn label(&self) -> &str {
        "mpc"
    }
}

/// A full closed-loop episode; same schema and initial design as a random
/// episode with the same seed.
pub fn control_episode<M: ShotModel>(
    env: &EnvConfig,
    model: &M,
    cfg: &MpcConfig,
    seed: u64,
    config_hash: &str,
) -> Result<EpisodeRecord> {
    cfg.validate()?;
    let mut policy = MpcPolicy::new(model, cfg.clone(), seed);
    run_episode(env, &mut policy, seed, config_hash)
}
