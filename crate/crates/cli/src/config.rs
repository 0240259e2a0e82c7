use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wavesurrogate::acoustic_env::EnvConfig;
use wavesurrogate::encoders::{EncoderConfig, Encoders, EnvFacts};
use wavesurrogate::mpc::MpcConfig;
use wavesurrogate::training::{HorizonEval, TrainConfig};
use wavesurrogate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectConfig {
    pub episodes: usize,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self { episodes: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    /// Paired MPC/random episodes per comparison.
    pub episodes: usize,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self { episodes: 6 }
    }
}

/// Everything a run needs, loaded from one TOML file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Base seed; episode `k` of a collection uses `seed + k`.
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub env: EnvConfig,
    pub latent: EncoderConfig,
    pub train: TrainConfig,
    /// Windows drawn per horizon by `eval-horizon`.
    pub eval: HorizonEval,
    pub mpc: MpcConfig,
    pub collect: CollectConfig,
    pub control: ControlConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg: RunConfig = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every block, including the real and latent stability limits.
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.latent.validate()?;
        Encoders::new(&self.latent, &EnvFacts::from_env(&self.env), 0).map_err(|e| match e {
            Error::Config(_) => e,
            e => Error::Config(e.to_string()),
        })?;
        self.train.validate()?;
        self.mpc.validate()?;
        if self.eval.samples == 0 || self.eval.horizons.is_empty() {
            return Err(Error::Config(
                "eval needs at least one horizon and one sample".into(),
            ));
        }
        if let Some(h) = self
            .eval
            .horizons
            .iter()
            .find(|&&h| h == 0 || h > self.env.actions_per_episode)
        {
            return Err(Error::Config(format!(
                "eval horizon {h} must lie in 1..={}",
                self.env.actions_per_episode
            )));
        }
        if self.train.horizon_actions > self.env.actions_per_episode {
            return Err(Error::Config(format!(
                "training horizon {} exceeds the episode length {}",
                self.train.horizon_actions, self.env.actions_per_episode
            )));
        }
        Ok(())
    }
}
