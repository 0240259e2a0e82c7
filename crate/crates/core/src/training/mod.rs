//! Loss, exact gradients and the optimisation loop.
//!
//! A [`Surrogate`] bundles both encoders with the normalisation constants
//! measured on the training data. Energies are compared in normalised units:
//! every measured series is divided by `sigma_scale` (the mean incident
//! energy of the dataset), and the latent model predicts those units
//! directly.

mod adam;

pub use adam::Adam;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acoustic_env::{EnvConfig, EpisodeRecord, Observation};
use crate::encoders::{EncoderConfig, Encoders, EnvFacts};
use crate::error::{Error, Result};
use crate::latent_dynamics::{
    rollout_with, rollout_with_gradient, LatentConditions, LatentSigmas, LatentSpeedInterp,
    LatentState, RolloutOutput, RolloutSpec, SigmaGrads,
};
use crate::storage::{self, CheckpointManifest, Dataset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub horizon_actions: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    /// Optimiser steps per epoch.
    pub batches_per_epoch: usize,
    pub seed: u64,
    /// Weights of the `sigma_tot` and `sigma_inc` terms.
    pub aux_loss_weights: [f64; 2],
    /// Optional bound on the global gradient norm.
    pub grad_clip: Option<f64>,
    /// Probability that a window starts at the first boundary of its episode
    /// instead of a uniformly drawn one. The blank first observation is
    /// otherwise almost never seen.
    pub start_window_prob: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            horizon_actions: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 20,
            batches_per_epoch: 10,
            seed: 0,
            aux_loss_weights: [0.5, 0.5],
            grad_clip: None,
            start_window_prob: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.horizon_actions == 0 || self.batch_size == 0 || self.batches_per_epoch == 0 {
            return bad(
                "horizon_actions, batch_size and batches_per_epoch must be positive".into(),
            );
        }
        if self.aux_loss_weights.iter().any(|w| !(*w >= 0.0)) {
            return bad(format!(
                "aux_loss_weights must be non-negative, got {:?}",
                self.aux_loss_weights
            ));
        }
        if !(self.learning_rate > 0.0 && self.epsilon > 0.0) {
            return bad("learning_rate and epsilon must be positive".into());
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("moment coefficients must lie in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.start_window_prob) {
            return bad(format!(
                "start_window_prob must lie in [0, 1], got {}",
                self.start_window_prob
            ));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad("grad_clip must be positive".into());
            }
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            sc: 1.0,
            tot: self.aux_loss_weights[0],
            inc: self.aux_loss_weights[1],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub sc: f64,
    pub tot: f64,
    pub inc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            sc: 1.0,
            tot: 0.5,
            inc: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub mse_sc: f64,
    pub mse_tot: f64,
    pub mse_inc: f64,
    pub total: f64,
}

impl LossReport {
    fn add(&mut self, o: &LossReport) {
        self.mse_sc += o.mse_sc;
        self.mse_tot += o.mse_tot;
        self.mse_inc += o.mse_inc;
        self.total += o.total;
    }

    fn scale(&mut self, s: f64) {
        self.mse_sc *= s;
        self.mse_tot *= s;
        self.mse_inc *= s;
        self.total *= s;
    }
}

fn mse(p: &[f64], t: &[f64]) -> f64 {
    p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len().max(1) as f64
}

fn check_lengths(pred: &LatentSigmas, target: &LatentSigmas) -> Result<()> {
    let n = pred.sc.len();
    if [
        pred.tot.len(),
        pred.inc.len(),
        target.sc.len(),
        target.tot.len(),
        target.inc.len(),
    ]
    .iter()
    .any(|&l| l != n)
    {
        return Err(Error::Shape(
            "predicted and measured series differ in length".into(),
        ));
    }
    Ok(())
}

/// Mean squared error of each series and their weighted sum.
pub fn loss(pred: &LatentSigmas, target: &LatentSigmas, w: LossWeights) -> Result<LossReport> {
    check_lengths(pred, target)?;
    let mse_sc = mse(&pred.sc, &target.sc);
    let mse_tot = mse(&pred.tot, &target.tot);
    let mse_inc = mse(&pred.inc, &target.inc);
    Ok(LossReport {
        mse_sc,
        mse_tot,
        mse_inc,
        total: w.sc * mse_sc + w.tot * mse_tot + w.inc * mse_inc,
    })
}

/// Derivative of [`loss`]'s total with respect to each predicted value.
pub fn loss_gradient(
    pred: &LatentSigmas,
    target: &LatentSigmas,
    w: LossWeights,
) -> Result<SigmaGrads> {
    check_lengths(pred, target)?;
    let n = pred.sc.len().max(1) as f64;
    let g = |p: &[f64], t: &[f64], wk: f64| -> Vec<f64> {
        if wk == 0.0 {
            return Vec::new();
        }
        p.iter()
            .zip(t)
            .map(|(a, b)| 2.0 * wk * (a - b) / n)
            .collect()
    };
    Ok(SigmaGrads {
        sc: g(&pred.sc, &target.sc, w.sc),
        tot: g(&pred.tot, &target.tot, w.tot),
        inc: g(&pred.inc, &target.inc, w.inc),
    })
}

/// Everything besides the parameters needed to rebuild a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub env: EnvConfig,
    pub env_config_hash: String,
    pub encoder: EncoderConfig,
    pub facts: EnvFacts,
    /// Multiplies frame pixels before the wave encoder.
    pub input_scale: f64,
    /// Energy unit of the model's predictions.
    pub sigma_scale: f64,
    /// Default action penalty for planning, in the model's energy units.
    pub beta: f64,
}

/// The trained latent model.
#[derive(Clone, Debug)]
pub struct Surrogate {
    pub encoders: Encoders,
    pub meta: ModelMeta,
}

/// Measured energies of one window in the model's units.
fn targets(ep: &EpisodeRecord, tau: usize, horizon: usize, scale: f64) -> LatentSigmas {
    let s = ep.steps_per_action;
    let r = tau * s..(tau + horizon) * s;
    let f = |v: &[f32]| v[r.clone()].iter().map(|&x| x as f64 / scale).collect();
    LatentSigmas {
        sc: f(&ep.sigma_sc),
        tot: f(&ep.sigma_tot),
        inc: f(&ep.sigma_inc),
    }
}

impl Surrogate {
    pub fn new(env: &EnvConfig, encoder: &EncoderConfig, seed: u64) -> Result<Self> {
        env.validate()?;
        let facts = EnvFacts::from_env(env);
        let encoders = Encoders::new(encoder, &facts, seed)?;
        Ok(Self {
            encoders,
            meta: ModelMeta {
                env: env.clone(),
                env_config_hash: storage::config_hash(env),
                encoder: encoder.clone(),
                facts,
                input_scale: 1.0,
                sigma_scale: 1.0,
                beta: 0.0,
            },
        })
    }

    /// Sets the input and energy scales and the default action penalty from
    /// the data: pixels are scaled to unit RMS, energies by the mean incident
    /// energy, and `beta` is a tenth of the mean scattered energy integrated
    /// over one action.
    pub fn calibrate(&mut self, data: &Dataset) -> Result<()> {
        self.check_dataset(data)?;
        let (mut sq, mut n) = (0.0, 0usize);
        for f in data.episodes.iter().flat_map(|e| &e.frames) {
            sq += f.iter().map(|&v| (v as f64).powi(2)).sum::<f64>();
            n += f.len();
        }
        let rms = (sq / n.max(1) as f64).sqrt();
        self.meta.input_scale = if rms > 0.0 { 1.0 / rms } else { 1.0 };
        let mean = |f: fn(&EpisodeRecord) -> &Vec<f32>| {
            let (s, k) = data.episodes.iter().fold((0.0, 0usize), |(s, k), e| {
                (
                    s + f(e).iter().map(|&v| v as f64).sum::<f64>(),
                    k + f(e).len(),
                )
            });
            s / k.max(1) as f64
        };
        let inc = mean(|e| &e.sigma_inc);
        self.meta.sigma_scale = if inc > 0.0 { inc } else { 1.0 };
        let sc = mean(|e| &e.sigma_sc) / self.meta.sigma_scale;
        self.meta.beta = 0.1 * sc * self.meta.env.action_dt();
        self.encoders.wave.input_scale = self.meta.input_scale;
        Ok(())
    }

    pub fn check_dataset(&self, data: &Dataset) -> Result<()> {
        storage::check_config(&self.meta.env_config_hash, &self.meta.env, &data.config)
    }

    pub fn latent_pml(&self) -> bool {
        self.encoders.wave.latent_pml()
    }

    /// Disables (or re-enables) the latent damping at rollout time.
    pub fn set_latent_pml(&mut self, enabled: bool) {
        self.encoders.wave.set_latent_pml(enabled);
    }

    pub fn spec(&self, horizon_actions: usize) -> RolloutSpec {
        RolloutSpec {
            horizon_actions,
            steps_per_action: self.meta.env.steps_per_action,
            dt: self.meta.env.dt,
            c_ambient: self.meta.facts.c_ambient,
        }
    }

    fn t_at(&self, tau: usize) -> f64 {
        tau as f64 * self.meta.env.action_dt()
    }

    fn knots(&self, tau: usize, n: usize) -> Vec<f64> {
        (0..n).map(|k| self.t_at(tau + k)).collect()
    }

    /// Latent conditions for an observation taken at action boundary `tau`.
    pub fn encode(&self, obs: &Observation, tau: usize) -> Result<LatentConditions> {
        let (c, _) = self
            .encoders
            .wave
            .encode(&self.encoders.params, obs, self.t_at(tau))?;
        Ok(c)
    }

    /// Speed frames for the design states at boundaries `tau, tau+1, ...`.
    pub fn speed(&self, radii_seq: &[Vec<f64>], tau: usize) -> Result<LatentSpeedInterp> {
        let knots = self.knots(tau, radii_seq.len());
        let (s, _) =
            self.encoders
                .design
                .encode_window(&self.encoders.params, radii_seq, &knots)?;
        Ok(s)
    }

    /// Rolls out from pre-encoded conditions over `radii_seq.len() - 1` actions.
    pub fn rollout_from(
        &self,
        conds: &LatentConditions,
        radii_seq: &[Vec<f64>],
        tau: usize,
        observe: impl FnMut(usize, &LatentState),
    ) -> Result<RolloutOutput> {
        let speed = self.speed(radii_seq, tau)?;
        rollout_with(conds, &speed, &self.spec(radii_seq.len() - 1), observe)
    }

    /// Predicted energies (model units) for the actions following boundary `tau`.
    pub fn predict(
        &self,
        obs: &Observation,
        tau: usize,
        radii_seq: &[Vec<f64>],
    ) -> Result<LatentSigmas> {
        let conds = self.encode(obs, tau)?;
        Ok(self.rollout_from(&conds, radii_seq, tau, |_, _| {})?.sigmas)
    }

    fn check_window(ep: &EpisodeRecord, tau: usize, horizon: usize) -> Result<()> {
        if horizon == 0 || tau + horizon > ep.n_actions() {
            return Err(Error::Shape(format!(
                "window [{tau}, {}) outside an episode of {} actions",
                tau + horizon,
                ep.n_actions()
            )));
        }
        Ok(())
    }

    /// Loss of one window without gradients.
    pub fn window_loss(
        &self,
        ep: &EpisodeRecord,
        tau: usize,
        horizon: usize,
        w: LossWeights,
    ) -> Result<LossReport> {
        Self::check_window(ep, tau, horizon)?;
        let pred = self.predict(&ep.observation(tau), tau, &ep.radii[tau..=tau + horizon])?;
        loss(&pred, &targets(ep, tau, horizon, self.meta.sigma_scale), w)
    }

    /// Loss of one window and its gradient with respect to every parameter.
    pub fn window_gradient(
        &self,
        ep: &EpisodeRecord,
        tau: usize,
        horizon: usize,
        w: LossWeights,
    ) -> Result<(LossReport, Vec<f64>)> {
        Self::check_window(ep, tau, horizon)?;
        let target = targets(ep, tau, horizon, self.meta.sigma_scale);
        self.gradient_against(
            &ep.observation(tau),
            tau,
            &ep.radii[tau..=tau + horizon],
            &target,
            w,
        )
    }

    /// Loss and parameter gradient of one prediction against given targets.
    pub fn gradient_against(
        &self,
        obs: &Observation,
        tau: usize,
        radii: &[Vec<f64>],
        target: &LatentSigmas,
        w: LossWeights,
    ) -> Result<(LossReport, Vec<f64>)> {
        let store = &self.encoders.params;
        let (conds, wcache) = self.encoders.wave.encode(store, obs, self.t_at(tau))?;
        let (speed, dcache) =
            self.encoders
                .design
                .encode_window(store, radii, &self.knots(tau, radii.len()))?;
        let mut report = LossReport::default();
        let (_, lg) = rollout_with_gradient(&conds, &speed, &self.spec(radii.len() - 1), |pred| {
            report = loss(pred, target, w)?;
            loss_gradient(pred, target, w)
        })?;
        let mut grad = store.zeros_like();
        self.encoders.wave.backward(store, &wcache, &lg, &mut grad);
        self.encoders
            .design
            .backward(store, &dcache, &lg.c_frames, &mut grad);
        store.check_finite(&grad, true)?;
        Ok((report, grad))
    }

    /// Mean loss and gradient over a batch of `(episode, start)` windows.
    /// Elements run in parallel; the reduction is a fixed pairwise tree, so
    /// the result does not depend on scheduling.
    pub fn batch_gradient(
        &self,
        episodes: &[EpisodeRecord],
        batch: &[(usize, usize)],
        horizon: usize,
        w: LossWeights,
    ) -> Result<(LossReport, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let parts: Vec<(LossReport, Vec<f64>)> = batch
            .par_iter()
            .map(|&(e, tau)| self.window_gradient(&episodes[e], tau, horizon, w))
            .collect::<Result<_>>()?;
        let inv = 1.0 / batch.len() as f64;
        let mut report = LossReport::default();
        let mut grads = Vec::with_capacity(parts.len());
        for (r, g) in parts {
            report.add(&r);
            grads.push(g);
        }
        report.scale(inv);
        let mut grad = tree_sum(grads);
        grad.iter_mut().for_each(|g| *g *= inv);
        Ok((report, grad))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let m = CheckpointManifest {
            format: storage::CHECKPOINT_FORMAT.into(),
            config_hash: self.meta.env_config_hash.clone(),
            seed: self.encoders.params.seed(),
            tensors: self.encoders.params.specs().to_vec(),
            params_file: "params.f32".into(),
            model: self.meta.clone(),
        };
        storage::save_checkpoint(dir, &m, self.encoders.params.data())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (m, data) = storage::load_checkpoint::<ModelMeta>(dir)?;
        if m.config_hash != storage::config_hash(&m.model.env) {
            return Err(Error::format(
                dir.join("manifest.json"),
                "config hash does not match the stored config",
            ));
        }
        let mut s = Self::new(&m.model.env, &m.model.encoder, m.seed)?;
        s.encoders.params.load(&m.tensors, data)?;
        s.encoders.wave.input_scale = m.model.input_scale;
        s.meta = m.model;
        Ok(s)
    }
}

/// Pairwise sum of equal-length vectors in a fixed order.
pub fn tree_sum(mut parts: Vec<Vec<f64>>) -> Vec<f64> {
    assert!(!parts.is_empty(), "tree_sum of nothing");
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub epoch: usize,
    pub total: f64,
    pub mse_sc: f64,
    pub mse_tot: f64,
    pub mse_inc: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub curve: Vec<LossPoint>,
    /// Steps whose batch blew up and was skipped.
    pub skipped: Vec<usize>,
}

impl TrainReport {
    /// Mean batch loss of each epoch that completed at least one step.
    pub fn epoch_means(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64, usize)> = Vec::new();
        for p in &self.curve {
            match out.last_mut() {
                Some(l) if l.0 == p.epoch => {
                    l.1 += p.total;
                    l.2 += 1;
                }
                _ => out.push((p.epoch, p.total, 1)),
            }
        }
        out.into_iter().map(|(e, s, k)| (e, s / k as f64)).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        for p in &self.curve {
            w.serialize(p)
                .map_err(|e| Error::format(path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Trains `model` in place on windows drawn uniformly from `data`.
///
/// Start offsets range over every boundary leaving room for the horizon; the
/// observation frames before the episode start are clamped to the first one.
/// A batch in which any rollout blows up is logged and skipped.
pub fn train(model: &mut Surrogate, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    model.check_dataset(data)?;
    let h = cfg.horizon_actions;
    let usable: Vec<usize> = (0..data.episodes.len())
        .filter(|&e| data.episodes[e].n_actions() >= h)
        .collect();
    if usable.is_empty() {
        return Err(Error::Config(format!(
            "no episode covers the training horizon of {h} actions"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(model.encoders.params.len(), cfg);
    let w = cfg.weights();
    let mut report = TrainReport::default();
    let mut step = 0;
    for epoch in 0..cfg.max_epochs {
        for _ in 0..cfg.batches_per_epoch {
            let batch: Vec<(usize, usize)> = (0..cfg.batch_size)
                .map(|_| {
                    let e = usable[rng.gen_range(0..usable.len())];
                    let first = rng.gen_bool(cfg.start_window_prob);
                    (
                        e,
                        if first {
                            0
                        } else {
                            rng.gen_range(0..=data.episodes[e].n_actions() - h)
                        },
                    )
                })
                .collect();
            match model.batch_gradient(&data.episodes, &batch, h, w) {
                Ok((r, mut g)) => {
                    if let Some(c) = cfg.grad_clip {
                        clip_norm(&mut g, c);
                    }
                    opt.step(model.encoders.params.data_mut(), &g);
                    model
                        .encoders
                        .params
                        .check_finite(model.encoders.params.data(), false)?;
                    log::info!("epoch {epoch} step {step}: loss {:.6e}", r.total);
                    report.curve.push(LossPoint {
                        step,
                        epoch,
                        total: r.total,
                        mse_sc: r.mse_sc,
                        mse_tot: r.mse_tot,
                        mse_inc: r.mse_inc,
                    });
                }
                Err(e) if e.is_blow_up() => {
                    log::warn!("epoch {epoch} step {step}: skipping batch ({e})");
                    report.skipped.push(step);
                }
                Err(e) => return Err(e),
            }
            step += 1;
        }
    }
    Ok(report)
}

fn clip_norm(g: &mut [f64], max: f64) {
    let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > max {
        let s = max / n;
        g.iter_mut().for_each(|v| *v *= s);
    }
}

/// Anything that can predict the normalised scattered energy of a recorded
/// episode from one of its action boundaries.
pub trait EpisodePredictor {
    /// Energy unit of the predictions.
    fn sigma_scale(&self) -> f64;
    /// One value per integration step for actions `tau..tau + horizon`.
    /// Steps past a numerical blow-up are reported as infinite.
    fn predict_window(&self, ep: &EpisodeRecord, tau: usize, horizon: usize) -> Result<Vec<f64>>;
}

impl EpisodePredictor for Surrogate {
    fn sigma_scale(&self) -> f64 {
        self.meta.sigma_scale
    }

    fn predict_window(&self, ep: &EpisodeRecord, tau: usize, horizon: usize) -> Result<Vec<f64>> {
        Self::check_window(ep, tau, horizon)?;
        let conds = self.encode(&ep.observation(tau), tau)?;
        let n = horizon * ep.steps_per_action;
        let mut out = Vec::with_capacity(n);
        let res = self.rollout_from(&conds, &ep.radii[tau..=tau + horizon], tau, |_, s| {
            let (sc, _, _) = s.sigmas();
            out.push(sc);
        });
        match res {
            Ok(_) => Ok(out),
            Err(e) if e.is_blow_up() => {
                log::warn!(
                    "prediction of episode {} from action {tau} blew up: {e}",
                    ep.seed
                );
                // Steps since the last finite check are suspect too.
                let keep = out.iter().position(|v| !v.is_finite()).unwrap_or(out.len());
                out.truncate(keep);
                out.resize(n, f64::INFINITY);
                Ok(out)
            }
            Err(e) => Err(e),
        }
    }
}

/// Which horizons to score, how many windows to draw for each, and from
/// which stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HorizonEval {
    pub horizons: Vec<usize>,
    pub samples: usize,
    pub seed: u64,
}

impl Default for HorizonEval {
    fn default() -> Self {
        Self {
            horizons: default_horizons(),
            samples: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonStats {
    pub horizon: usize,
    pub mean_mse: f64,
    pub std_mse: f64,
    pub samples: usize,
}

/// The horizons 20, 30, ..., 200.
pub fn default_horizons() -> Vec<usize> {
    (20..=200).step_by(10).collect()
}

/// Scattered-energy MSE (model units) of open-loop predictions over windows
/// of each horizon length. Every horizon gets its own batch of windows,
/// uniform over episodes and over the start boundaries that fit.
pub fn evaluate_horizon(
    model: &(impl EpisodePredictor + Sync),
    episodes: &[EpisodeRecord],
    eval: &HorizonEval,
) -> Result<Vec<HorizonStats>> {
    let horizons = &eval.horizons;
    if episodes.is_empty() || eval.samples == 0 {
        return Err(Error::Config(
            "horizon evaluation needs episodes and samples".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(eval.seed);
    let mut windows = Vec::new();
    for &h in horizons.iter() {
        for _ in 0..eval.samples {
            let e = rng.gen_range(0..episodes.len());
            let n = episodes[e].n_actions();
            if h == 0 || h > n {
                return Err(Error::Shape(format!(
                    "episode {} has {n} actions, fewer than the horizon {h}",
                    episodes[e].seed
                )));
            }
            windows.push((h, e, rng.gen_range(0..=n - h)));
        }
    }
    let scale = model.sigma_scale();
    let errs: Vec<f64> = windows
        .par_iter()
        .map(|&(h, e, tau)| {
            let ep = &episodes[e];
            let p = model.predict_window(ep, tau, h)?;
            Ok(mse(&p, &targets(ep, tau, h, scale).sc))
        })
        .collect::<Result<_>>()?;
    Ok(horizons
        .iter()
        .zip(errs.chunks(eval.samples))
        .map(|(&h, errs)| {
            let k = errs.len() as f64;
            let mean = errs.iter().sum::<f64>() / k;
            let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / k;
            HorizonStats {
                horizon: h,
                mean_mse: mean,
                std_mse: if var.is_finite() {
                    var.sqrt()
                } else {
                    f64::INFINITY
                },
                samples: errs.len(),
            }
        })
        .collect())
}

pub fn write_horizon_csv(path: &Path, stats: &[HorizonStats]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for s in stats {
        w.serialize(s)
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests;
