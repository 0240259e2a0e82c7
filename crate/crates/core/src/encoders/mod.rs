//! Trainable maps into the latent space.
//!
//! The wave encoder reads the three most recent observation frames (stacked
//! as channels) through a small strided CNN and emits sine coefficients for
//! the four initial latent fields and the forcing shape, plus the raw latent
//! damping parameters. The design encoder maps one radius vector to the sine
//! coefficients of a speed frame. All reverse rules are written out by hand.

mod layers;
mod params;

pub use layers::{Layer, Sequential, Shape};
pub use params::{ParamId, ParamStore, TensorSpec};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acoustic_env::{EnvConfig, Observation};
use crate::error::{Error, Result};
use crate::field_grid::{Field1D, Grid1D};
use crate::latent_dynamics::{
    LatentConditions, LatentGradients, LatentSpeedInterp, LatentState, SineBasis, LATENT_CFL_LIMIT,
};
use crate::pml::{realize_profile, realize_profile_backward, softplus_inverse};

/// Architecture and latent-space settings shared by both encoders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub latent_cells: usize,
    /// Latent domain length in metres; `None` means twice the real diagonal.
    pub latent_length: Option<f64>,
    pub n_modes: usize,
    pub pml_params: usize,
    pub conv_channels: [usize; 3],
    pub pool_size: usize,
    pub wave_hidden: usize,
    pub design_hidden: usize,
    /// Damping rate (1/s) per unit of softplus output.
    pub pml_scale: f64,
    /// Initial damping ramp: fraction of the latent length on each side and
    /// peak value in softplus units.
    pub pml_init_fraction: f64,
    pub pml_init_peak: f64,
    /// Initial scale of the emitted sine coefficients.
    pub head_gain: f64,
    /// Speed-frame coefficient scale as a fraction of the ambient speed.
    pub speed_scale: f64,
    /// Lower bound of the speed frames as a fraction of the ambient speed.
    pub c_min_fraction: f64,
    /// Enables the trainable latent damping; off for the no-PML ablation.
    pub latent_pml: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            latent_cells: 1024,
            latent_length: None,
            n_modes: 64,
            pml_params: 64,
            conv_channels: [4, 8, 8],
            pool_size: 4,
            wave_hidden: 16,
            design_hidden: 128,
            pml_scale: 1000.0,
            pml_init_fraction: 0.15,
            pml_init_peak: 4.0,
            head_gain: 0.1,
            speed_scale: 0.25,
            c_min_fraction: 0.2,
            latent_pml: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.latent_cells < 5 {
            return bad("latent_cells must be at least 5");
        }
        if self.n_modes == 0 || self.pml_params == 0 {
            return bad("n_modes and pml_params must be positive");
        }
        if self.conv_channels.contains(&0) || self.wave_hidden == 0 || self.design_hidden == 0 {
            return bad("layer widths must be positive");
        }
        if !(self.pml_scale > 0.0 && self.speed_scale > 0.0 && self.head_gain > 0.0) {
            return bad("pml_scale, speed_scale and head_gain must be positive");
        }
        if !(self.c_min_fraction > 0.0 && self.c_min_fraction < 1.0) {
            return bad("c_min_fraction must lie in (0, 1)");
        }
        if !(self.pml_init_fraction > 0.0 && self.pml_init_fraction < 0.5) {
            return bad("pml_init_fraction must lie in (0, 0.5)");
        }
        if let Some(l) = self.latent_length {
            if !(l > 0.0) {
                return bad("latent_length must be positive");
            }
        }
        Ok(())
    }
}

/// Raw damping parameters whose softplus traces a cubic ramp over
/// `fraction` of each side, peaking at `peak`.
pub fn ramp_raw(p: usize, fraction: f64, peak: f64) -> Vec<f64> {
    let floor = 1e-3;
    (0..p)
        .map(|k| {
            let x = if p == 1 {
                0.5
            } else {
                k as f64 / (p - 1) as f64
            };
            let depth = x.min(1.0 - x);
            let s = if depth < fraction {
                peak * ((fraction - depth) / fraction).powi(3)
            } else {
                0.0
            };
            softplus_inverse(s.max(floor))
        })
        .collect()
}

/// Observation to latent initial state, forcing shape and damping.
#[derive(Clone, Debug)]
pub struct WaveEncoder {
    net: Sequential,
    basis: SineBasis,
    resolution: usize,
    pml_params: usize,
    pml_scale: f64,
    latent_pml: bool,
    c_ambient: f64,
    omega: f64,
    /// Multiplies the raw frame values before the first layer.
    pub input_scale: f64,
}

/// Activations of one wave-encoder pass.
#[derive(Clone, Debug)]
pub struct WaveCache {
    acts: Vec<Vec<f64>>,
}

impl WaveEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cfg: &EncoderConfig,
        grid: Grid1D,
        resolution: usize,
        c_ambient: f64,
        omega: f64,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let [c1, c2, c3] = cfg.conv_channels;
        let n = cfg.n_modes;
        let p = cfg.pml_params;
        let net = Sequential::new((3, resolution, resolution))
            .conv(store, rng, "wave.conv1", c1)
            .tanh()
            .conv(store, rng, "wave.conv2", c2)
            .tanh()
            .conv(store, rng, "wave.conv3", c3)
            .tanh()
            .pool(cfg.pool_size)
            .dense(store, rng, "wave.dense", cfg.wave_hidden, 1.0)
            .tanh()
            .dense(store, rng, "wave.head", 5 * n + p, cfg.head_gain);
        let head_bias = store.id("wave.head.bias").expect("head bias");
        let ramp = ramp_raw(p, cfg.pml_init_fraction, cfg.pml_init_peak);
        let bias = store.get_mut(head_bias);
        bias[5 * n..].copy_from_slice(&ramp);
        // A silent latent state is a saddle of the energy loss, so the forcing
        // shape starts nonzero even for blank observations.
        for b in &mut bias[4 * n..5 * n] {
            *b = cfg.head_gain * rng.gen_range(-1.0..1.0);
        }
        Ok(Self {
            net,
            basis: SineBasis::new(grid, n)?,
            resolution,
            pml_params: p,
            pml_scale: cfg.pml_scale,
            latent_pml: cfg.latent_pml,
            c_ambient,
            omega,
            input_scale: 1.0,
        })
    }

    pub fn grid(&self) -> Grid1D {
        self.basis.grid()
    }

    pub fn n_outputs(&self) -> usize {
        self.net.output_len()
    }

    pub fn latent_pml(&self) -> bool {
        self.latent_pml
    }

    /// Switches the latent damping off (or back on) without touching parameters.
    pub fn set_latent_pml(&mut self, enabled: bool) {
        self.latent_pml = enabled;
    }

    fn input(&self, obs: &Observation) -> Result<Vec<f64>> {
        let px = self.resolution * self.resolution;
        if obs.resolution != self.resolution || obs.frames.iter().any(|f| f.len() != px) {
            return Err(Error::Shape(format!(
                "observation at resolution {} but the encoder expects {}",
                obs.resolution, self.resolution
            )));
        }
        Ok(obs
            .frames
            .iter()
            .flat_map(|f| f.iter().map(|&v| v as f64 * self.input_scale))
            .collect())
    }

    /// Raw outputs `[u_tot, v_tot, u_inc, v_inc, f_z]` coefficients then the
    /// damping parameters.
    pub fn forward_raw(
        &self,
        store: &ParamStore,
        obs: &Observation,
    ) -> Result<(Vec<f64>, WaveCache)> {
        let acts = self.net.forward(store, &self.input(obs)?);
        Ok((acts.last().unwrap().clone(), WaveCache { acts }))
    }

    /// Encodes an observation taken at time `t0`.
    pub fn encode(
        &self,
        store: &ParamStore,
        obs: &Observation,
        t0: f64,
    ) -> Result<(LatentConditions, WaveCache)> {
        let (out, cache) = self.forward_raw(store, obs)?;
        Ok((self.conditions(&out, t0), cache))
    }

    fn conditions(&self, out: &[f64], t0: f64) -> LatentConditions {
        let n = self.basis.n_modes();
        let grid = self.grid();
        let field = |k: usize, scale: f64| {
            let mut f = self.basis.embed(&out[k * n..(k + 1) * n]);
            if scale != 1.0 {
                f.values.iter_mut().for_each(|v| *v *= scale);
            }
            f
        };
        let inv_c = 1.0 / self.c_ambient;
        let initial = LatentState {
            grid,
            fields: [
                field(0, 1.0).values,
                field(1, inv_c).values,
                field(2, 1.0).values,
                field(3, inv_c).values,
            ],
            t: t0,
        };
        let sigma = if self.latent_pml {
            realize_profile(&out[5 * n..], grid.n_cells(), self.pml_scale)
        } else {
            vec![0.0; grid.n_cells()]
        };
        LatentConditions {
            initial,
            f_z: field(4, 1.0),
            sigma_z: Field1D {
                grid,
                values: sigma,
            },
            omega: self.omega,
        }
    }

    /// Accumulates parameter gradients given the gradients with respect to
    /// the latent conditions; returns the gradient with respect to the raw
    /// frame pixels (channel-major).
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &WaveCache,
        g: &LatentGradients,
        grad: &mut [f64],
    ) -> Vec<f64> {
        let out = cache.acts.last().unwrap();
        let n = self.basis.n_modes();
        let mut og = vec![0.0; out.len()];
        let inv_c = 1.0 / self.c_ambient;
        let sources: [(&[f64], f64); 5] = [
            (&g.initial[0], 1.0),
            (&g.initial[1], inv_c),
            (&g.initial[2], 1.0),
            (&g.initial[3], inv_c),
            (&g.f_z, 1.0),
        ];
        for (k, (node_grad, scale)) in sources.iter().enumerate() {
            let dst = &mut og[k * n..(k + 1) * n];
            self.basis.embed_transpose(node_grad, dst);
            if *scale != 1.0 {
                dst.iter_mut().for_each(|v| *v *= scale);
            }
        }
        if self.latent_pml {
            realize_profile_backward(
                &out[5 * n..5 * n + self.pml_params],
                self.pml_scale,
                &g.sigma_z,
                &mut og[5 * n..],
            );
        }
        let gin = self.net.backward(store, &cache.acts, &og, grad);
        gin.iter().map(|v| v * self.input_scale).collect()
    }
}

/// Radius vector to speed frame.
#[derive(Clone, Debug)]
pub struct DesignEncoder {
    net: Sequential,
    basis: SineBasis,
    radius_bounds: (f64, f64),
    c_ambient: f64,
    speed_scale: f64,
    c_min: f64,
    c_max: f64,
}

#[derive(Clone, Debug)]
pub struct DesignCache {
    acts: Vec<Vec<Vec<f64>>>,
    /// Unclamped speeds of each frame.
    raw_c: Vec<Vec<f64>>,
}

impl DesignEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cfg: &EncoderConfig,
        grid: Grid1D,
        n_scatterers: usize,
        radius_bounds: (f64, f64),
        c_ambient: f64,
        dt: f64,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let h = cfg.design_hidden;
        let net = Sequential::new((n_scatterers, 1, 1))
            .dense(store, rng, "design.dense1", h, 1.0)
            .tanh()
            .dense(store, rng, "design.dense2", h, 1.0)
            .tanh()
            .dense(store, rng, "design.head", cfg.n_modes, cfg.head_gain);
        let c_min = cfg.c_min_fraction * c_ambient;
        let c_max = LATENT_CFL_LIMIT * grid.dx() / dt;
        if c_max <= c_ambient {
            return Err(Error::Config(format!(
                "latent grid too fine for dt: ambient speed {c_ambient} exceeds the latent CFL bound {c_max:.1}"
            )));
        }
        Ok(Self {
            net,
            basis: SineBasis::new(grid, cfg.n_modes)?,
            radius_bounds,
            c_ambient,
            speed_scale: cfg.speed_scale * c_ambient,
            c_min,
            c_max,
        })
    }

    pub fn c_bounds(&self) -> (f64, f64) {
        (self.c_min, self.c_max)
    }

    fn normalize(&self, radii: &[f64]) -> Vec<f64> {
        let (lo, hi) = self.radius_bounds;
        let span = (hi - lo).max(f64::EPSILON);
        radii.iter().map(|r| 2.0 * (r - lo) / span - 1.0).collect()
    }

    /// One speed frame per design state, knots at `t_knots`.
    pub fn encode_window(
        &self,
        store: &ParamStore,
        radii_seq: &[Vec<f64>],
        t_knots: &[f64],
    ) -> Result<(LatentSpeedInterp, DesignCache)> {
        if radii_seq.len() < 2 || radii_seq.len() != t_knots.len() {
            return Err(Error::Shape(format!(
                "{} design states for {} knots (need at least 2)",
                radii_seq.len(),
                t_knots.len()
            )));
        }
        let m = self.net.input_len();
        let mut acts = Vec::with_capacity(radii_seq.len());
        let mut raw_c = Vec::with_capacity(radii_seq.len());
        let mut frames = Vec::with_capacity(radii_seq.len());
        for r in radii_seq {
            if r.len() != m {
                return Err(Error::Shape(format!(
                    "{} radii for {m} scatterers",
                    r.len()
                )));
            }
            let a = self.net.forward(store, &self.normalize(r));
            let coeffs: Vec<f64> = a
                .last()
                .unwrap()
                .iter()
                .map(|v| v * self.speed_scale)
                .collect();
            let mut c = self.basis.embed(&coeffs);
            c.values.iter_mut().for_each(|v| *v += self.c_ambient);
            raw_c.push(c.values.clone());
            c.values
                .iter_mut()
                .for_each(|v| *v = v.clamp(self.c_min, self.c_max));
            frames.push(c);
            acts.push(a);
        }
        let interp = LatentSpeedInterp::new(frames, t_knots.to_vec())?;
        Ok((interp, DesignCache { acts, raw_c }))
    }

    /// Accumulates parameter gradients from per-frame speed gradients and
    /// returns the gradient with respect to each radius vector.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &DesignCache,
        frame_grads: &[Vec<f64>],
        grad: &mut [f64],
    ) -> Vec<Vec<f64>> {
        let (lo, hi) = self.radius_bounds;
        let norm = 2.0 / (hi - lo).max(f64::EPSILON);
        let mut out = Vec::with_capacity(frame_grads.len());
        for ((fg, acts), raw) in frame_grads.iter().zip(&cache.acts).zip(&cache.raw_c) {
            let masked: Vec<f64> = fg
                .iter()
                .zip(raw)
                .map(|(g, &c)| {
                    if c < self.c_min || c > self.c_max {
                        0.0
                    } else {
                        *g
                    }
                })
                .collect();
            let mut cg = vec![0.0; self.basis.n_modes()];
            self.basis.embed_transpose(&masked, &mut cg);
            cg.iter_mut().for_each(|v| *v *= self.speed_scale);
            let gin = self.net.backward(store, acts, &cg, grad);
            out.push(gin.iter().map(|v| v * norm).collect());
        }
        out
    }
}

/// Both encoders and their parameters.
#[derive(Clone, Debug)]
pub struct Encoders {
    pub params: ParamStore,
    pub wave: WaveEncoder,
    pub design: DesignEncoder,
}

/// What the encoders need to know about the real environment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvFacts {
    pub resolution: usize,
    pub n_scatterers: usize,
    pub radius_bounds: (f64, f64),
    pub c_ambient: f64,
    pub omega: f64,
    pub dt: f64,
    pub real_diagonal: f64,
}

impl EnvFacts {
    pub fn from_env(cfg: &EnvConfig) -> Self {
        Self {
            resolution: cfg.observation_resolution,
            n_scatterers: cfg.n_scatterers(),
            radius_bounds: (cfg.design.radius_min, cfg.design.radius_max),
            c_ambient: cfg.medium.c_ambient,
            omega: cfg.source.omega,
            dt: cfg.dt,
            real_diagonal: cfg.domain_length * std::f64::consts::SQRT_2,
        }
    }
}

impl Encoders {
    /// Seeded initialization; identical seeds give identical parameters.
    pub fn new(cfg: &EncoderConfig, env: &EnvFacts, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let length = cfg.latent_length.unwrap_or(2.0 * env.real_diagonal);
        let grid = Grid1D::new(cfg.latent_cells, length)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new(seed);
        let wave = WaveEncoder::new(
            cfg,
            grid,
            env.resolution,
            env.c_ambient,
            env.omega,
            &mut params,
            &mut rng,
        )?;
        let design = DesignEncoder::new(
            cfg,
            grid,
            env.n_scatterers,
            env.radius_bounds,
            env.c_ambient,
            env.dt,
            &mut params,
            &mut rng,
        )?;
        Ok(Self {
            params,
            wave,
            design,
        })
    }

    pub fn grid(&self) -> Grid1D {
        self.wave.grid()
    }
}

/// Encodes an observation at `t0` into latent conditions.
pub fn encode_wave(enc: &Encoders, obs: &Observation, t0: f64) -> Result<LatentConditions> {
    enc.wave.encode(&enc.params, obs, t0).map(|(c, _)| c)
}

/// Encodes a window of design states into a latent speed interpolation.
pub fn encode_design_window(
    enc: &Encoders,
    radii_seq: &[Vec<f64>],
    t_knots: &[f64],
) -> Result<LatentSpeedInterp> {
    enc.design
        .encode_window(&enc.params, radii_seq, t_knots)
        .map(|(s, _)| s)
}

#[cfg(test)]
mod tests;
