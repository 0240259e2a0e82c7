//! On-disk formats: episode datasets, model checkpoints and config hashes.
//!
//! Both formats are a directory holding `manifest.json` plus flat
//! little-endian `f32` arrays. Datasets additionally keep one CSV per episode
//! with the radii and applied actions.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acoustic_env::{EnvConfig, EpisodeRecord};
use crate::error::{Error, Result};

pub const DATASET_FORMAT: &str = "wavesurrogate-dataset/1";
pub const CHECKPOINT_FORMAT: &str = "wavesurrogate-checkpoint/1";

/// SHA-256 of the canonical (key-sorted, compact) JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("config serializes");
    let text = serde_json::to_string(&v).expect("json value serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Human-readable list of the leaves that differ between two configs.
pub fn config_diff<T: Serialize>(expected: &T, found: &T) -> String {
    let a = serde_json::to_value(expected).expect("config serializes");
    let b = serde_json::to_value(found).expect("config serializes");
    let mut out = Vec::new();
    diff_values("", &a, &b, &mut out);
    if out.is_empty() {
        "no differing keys".into()
    } else {
        out.join("; ")
    }
}

fn diff_values(path: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
    use serde_json::Value;
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let keys: std::collections::BTreeSet<&String> = x.keys().chain(y.keys()).collect();
            for k in keys {
                let p = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                match (x.get(k), y.get(k)) {
                    (Some(u), Some(v)) => diff_values(&p, u, v, out),
                    (u, v) => out.push(format!("{p}: {} vs {}", show(u), show(v))),
                }
            }
        }
        _ if a != b => out.push(format!("{path}: {a} vs {b}")),
        _ => {}
    }
}

fn show(v: Option<&serde_json::Value>) -> String {
    v.map_or_else(|| "missing".to_string(), |v| v.to_string())
}

/// Fails unless `found` hashes to `expected_hash`, listing the differences
/// against `expected` when it does not.
pub fn check_config<T: Serialize>(expected_hash: &str, expected: &T, found: &T) -> Result<()> {
    let h = config_hash(found);
    if h != expected_hash {
        return Err(Error::ConfigMismatch {
            expected: short(expected_hash),
            found: short(&h),
            diff: config_diff(expected, found),
        });
    }
    Ok(())
}

fn short(h: &str) -> String {
    h.chars().take(12).collect()
}

pub fn write_f32(path: &Path, values: impl IntoIterator<Item = f32>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for v in values {
        w.write_all(&v.to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_f32(path: &Path, expected_len: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 4 * expected_len {
        return Err(Error::format(
            path,
            format!(
                "expected {expected_len} float32 values, found {} bytes",
                bytes.len()
            ),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("manifest serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayFile {
    pub file: String,
    pub dtype: String,
    pub shape: Vec<usize>,
}

impl ArrayFile {
    fn f32(file: String, shape: Vec<usize>) -> Self {
        Self {
            file,
            dtype: "float32-le".into(),
            shape,
        }
    }

    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEntry {
    pub seed: u64,
    pub policy: String,
    pub n_actions: usize,
    /// `(n_actions + 1, resolution, resolution)`.
    pub frames: ArrayFile,
    /// `(3, steps)`: sigma_sc, sigma_tot, sigma_inc.
    pub sigma: ArrayFile,
    /// Columns `action, r0.., a0..`; row `k` holds the radii at boundary `k`
    /// and the action applied from it (empty on the final row).
    pub actions: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub config_hash: String,
    pub config: EnvConfig,
    pub steps_per_action: usize,
    pub resolution: usize,
    pub episodes: Vec<EpisodeEntry>,
}

/// Episodes collected under one environment config.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: EnvConfig,
    pub config_hash: String,
    pub episodes: Vec<EpisodeRecord>,
}

impl Dataset {
    pub fn new(config: EnvConfig, episodes: Vec<EpisodeRecord>) -> Result<Self> {
        let config_hash = config_hash(&config);
        for e in &episodes {
            e.check_consistent()?;
            if e.config_hash != config_hash {
                return Err(Error::ConfigMismatch {
                    expected: short(&config_hash),
                    found: short(&e.config_hash),
                    diff: "episode was recorded under another environment config".into(),
                });
            }
        }
        Ok(Self {
            config,
            config_hash,
            episodes,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.episodes.len());
        for (k, e) in self.episodes.iter().enumerate() {
            let n = e.n_actions();
            let res = e.resolution;
            let frames =
                ArrayFile::f32(format!("episode_{k:04}_frames.f32"), vec![n + 1, res, res]);
            write_f32(&dir.join(&frames.file), e.frames.iter().flatten().copied())?;
            let sigma = ArrayFile::f32(
                format!("episode_{k:04}_sigma.f32"),
                vec![3, e.sigma_sc.len()],
            );
            write_f32(
                &dir.join(&sigma.file),
                e.sigma_sc
                    .iter()
                    .chain(&e.sigma_tot)
                    .chain(&e.sigma_inc)
                    .copied(),
            )?;
            let actions = format!("episode_{k:04}_actions.csv");
            write_actions(&dir.join(&actions), e)?;
            entries.push(EpisodeEntry {
                seed: e.seed,
                policy: e.policy.clone(),
                n_actions: n,
                frames,
                sigma,
                actions,
            });
        }
        let manifest = DatasetManifest {
            format: DATASET_FORMAT.into(),
            config_hash: self.config_hash.clone(),
            config: self.config.clone(),
            steps_per_action: self.config.steps_per_action,
            resolution: self.config.observation_resolution,
            episodes: entries,
        };
        write_json(&dir.join("manifest.json"), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest.json");
        let m: DatasetManifest = read_json(&mpath)?;
        if m.format != DATASET_FORMAT {
            return Err(Error::format(
                &mpath,
                format!("unsupported format `{}`", m.format),
            ));
        }
        let recomputed = config_hash(&m.config);
        if recomputed != m.config_hash {
            return Err(Error::format(
                &mpath,
                "config hash does not match the stored config",
            ));
        }
        let mut episodes = Vec::with_capacity(m.episodes.len());
        for entry in &m.episodes {
            let res = m.resolution;
            let px = res * res;
            if entry.frames.shape != [entry.n_actions + 1, res, res] {
                return Err(Error::format(
                    &mpath,
                    format!("bad frame shape {:?}", entry.frames.shape),
                ));
            }
            let raw = read_f32(&dir.join(&entry.frames.file), entry.frames.len())?;
            let frames = raw.chunks_exact(px).map(|c| c.to_vec()).collect();
            let steps = entry.n_actions * m.steps_per_action;
            if entry.sigma.shape != [3, steps] {
                return Err(Error::format(
                    &mpath,
                    format!("bad sigma shape {:?}", entry.sigma.shape),
                ));
            }
            let s = read_f32(&dir.join(&entry.sigma.file), 3 * steps)?;
            let (radii, actions) = read_actions(&dir.join(&entry.actions), entry.n_actions)?;
            let rec = EpisodeRecord {
                seed: entry.seed,
                policy: entry.policy.clone(),
                resolution: res,
                frames,
                radii,
                actions,
                sigma_sc: s[..steps].to_vec(),
                sigma_tot: s[steps..2 * steps].to_vec(),
                sigma_inc: s[2 * steps..].to_vec(),
                steps_per_action: m.steps_per_action,
                config_hash: m.config_hash.clone(),
            };
            rec.check_consistent()?;
            episodes.push(rec);
        }
        Ok(Self {
            config: m.config,
            config_hash: m.config_hash,
            episodes,
        })
    }
}

fn write_actions(path: &Path, e: &EpisodeRecord) -> Result<()> {
    let m = e.radii.first().map_or(0, |r| r.len());
    let mut w = csv::Writer::from_path(path).map_err(|err| csv_err(path, err))?;
    let mut header = vec!["action".to_string()];
    header.extend((0..m).map(|i| format!("r{i}")));
    header.extend((0..m).map(|i| format!("a{i}")));
    w.write_record(&header).map_err(|err| csv_err(path, err))?;
    for (k, r) in e.radii.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(r.iter().map(|v| v.to_string()));
        match e.actions.get(k) {
            Some(a) => row.extend(a.iter().map(|v| v.to_string())),
            None => row.extend((0..m).map(|_| String::new())),
        }
        w.write_record(&row).map_err(|err| csv_err(path, err))?;
    }
    w.flush().map_err(|err| Error::io(path, err))
}

type RadiiAndActions = (Vec<Vec<f64>>, Vec<Vec<f64>>);

fn read_actions(path: &Path, n_actions: usize) -> Result<RadiiAndActions> {
    let mut r = csv::Reader::from_path(path).map_err(|err| csv_err(path, err))?;
    let m = (r.headers().map_err(|err| csv_err(path, err))?.len() - 1) / 2;
    let mut radii = Vec::with_capacity(n_actions + 1);
    let mut actions = Vec::with_capacity(n_actions);
    for rec in r.records() {
        let rec = rec.map_err(|err| csv_err(path, err))?;
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::format(path, e.to_string()))
        };
        radii.push(
            (1..=m)
                .map(|i| parse(&rec[i]))
                .collect::<Result<Vec<_>>>()?,
        );
        if radii.len() <= n_actions {
            actions.push(
                (m + 1..=2 * m)
                    .map(|i| parse(&rec[i]))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
    }
    if radii.len() != n_actions + 1 {
        return Err(Error::format(
            path,
            format!("expected {} rows, found {}", n_actions + 1, radii.len()),
        ));
    }
    Ok((radii, actions))
}

fn csv_err(path: &Path, err: csv::Error) -> Error {
    Error::format(path, err.to_string())
}

/// A parameter snapshot with everything needed to rebuild the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest<M> {
    pub format: String,
    /// Hash of the environment config the model was trained against.
    pub config_hash: String,
    pub seed: u64,
    pub tensors: Vec<crate::encoders::TensorSpec>,
    pub params_file: String,
    pub model: M,
}

pub fn save_checkpoint<M: Serialize>(
    dir: &Path,
    manifest: &CheckpointManifest<M>,
    params: &[f64],
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_f32(
        &dir.join(&manifest.params_file),
        params.iter().map(|&v| v as f32),
    )?;
    write_json(&dir.join("manifest.json"), manifest)
}

pub fn load_checkpoint<M: for<'de> Deserialize<'de>>(
    dir: &Path,
) -> Result<(CheckpointManifest<M>, Vec<f64>)> {
    let mpath = dir.join("manifest.json");
    let m: CheckpointManifest<M> = read_json(&mpath)?;
    if m.format != CHECKPOINT_FORMAT {
        return Err(Error::format(
            &mpath,
            format!("unsupported format `{}`", m.format),
        ));
    }
    let n = m.tensors.iter().map(|t| t.len()).sum();
    let params = read_f32(&dir.join(&m.params_file), n)?
        .into_iter()
        .map(|v| v as f64)
        .collect();
    Ok((m, params))
}

/// `dir/name`, for callers composing output locations.
pub fn output_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustic_env::{run_episode, RandomPolicy};

    fn small_config() -> EnvConfig {
        let mut c = EnvConfig {
            grid_cells: 40,
            dt: 2e-5,
            steps_per_action: 25,
            actions_per_episode: 3,
            observation_resolution: 20,
            ..EnvConfig::default()
        };
        c.source.width_cells = 1.5;
        c.pml.thickness_cells = 6;
        c
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = EnvConfig::default();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.source.omega = 900.0;
        assert_ne!(config_hash(&a), config_hash(&b));
        let d = config_diff(&a, &b);
        assert!(d.contains("source.omega: 1000.0 vs 900.0"), "{d}");
        let err = check_config(&config_hash(&a), &a, &b).unwrap_err();
        assert!(matches!(err, Error::ConfigMismatch { .. }));
    }

    #[test]
    fn dataset_round_trips() {
        let cfg = small_config();
        let h = config_hash(&cfg);
        let eps = (0..2)
            .map(|s| run_episode(&cfg, &mut RandomPolicy::new(s), s, &h).unwrap())
            .collect();
        let d = Dataset::new(cfg, eps).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn truncated_array_is_a_format_error() {
        let cfg = small_config();
        let h = config_hash(&cfg);
        let e = run_episode(&cfg, &mut RandomPolicy::new(0), 0, &h).unwrap();
        let d = Dataset::new(cfg, vec![e]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path()).unwrap();
        let f = dir.path().join("episode_0000_sigma.f32");
        let bytes = fs::read(&f).unwrap();
        fs::write(&f, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(
            Dataset::load(dir.path()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn f32_arrays_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.f32");
        let v = vec![1.5f32, -0.0, f32::MIN_POSITIVE, 3.25e7];
        write_f32(&p, v.iter().copied()).unwrap();
        assert_eq!(read_f32(&p, 4).unwrap(), v);
        assert!(read_f32(&p, 5).is_err());
    }
}
