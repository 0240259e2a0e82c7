use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use wavesurrogate::acoustic_env::{run_episode, EpisodeRecord, RandomPolicy};
use wavesurrogate::mpc::control_episode;
use wavesurrogate::storage::{self, config_hash, Dataset};
use wavesurrogate::training::{self, evaluate_horizon, Surrogate};
use wavesurrogate::{Error, Result};

use crate::config::RunConfig;
use crate::plot::{Chart, Series};
use crate::Common;

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
        cfg.train.seed = s;
        cfg.mpc.seed = s;
        cfg.eval.seed = s;
    }
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &RunConfig, default: &str) -> Result<PathBuf> {
    let dir = common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    write_text(
        path,
        &(serde_json::to_string_pretty(v).expect("serializable") + "\n"),
    )
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Provenance written next to every command's outputs.
#[derive(Serialize)]
struct RunManifest<'a, T: Serialize> {
    command: &'a str,
    config_hash: String,
    details: T,
}

fn manifest<T: Serialize>(dir: &Path, command: &str, hash: String, details: T) -> Result<()> {
    write_json(
        &dir.join(format!("{command}.json")),
        &RunManifest {
            command,
            config_hash: hash,
            details,
        },
    )
}

fn load_model(path: &Path, no_pml: bool) -> Result<Surrogate> {
    let mut m = Surrogate::load(path)?;
    if no_pml {
        m.set_latent_pml(false);
    }
    Ok(m)
}

fn load_data(model: &Surrogate, path: &Path) -> Result<Dataset> {
    let data = Dataset::load(path)?;
    model.check_dataset(&data)?;
    Ok(data)
}

pub fn collect(common: &Common, episodes: Option<usize>) -> Result<()> {
    let cfg = load_config(common)?;
    let dir = out_dir(common, &cfg, "dataset")?;
    let n = episodes.unwrap_or(cfg.collect.episodes);
    let hash = config_hash(&cfg.env);
    let eps: Vec<EpisodeRecord> = (0..n as u64)
        .into_par_iter()
        .map(|k| {
            let seed = cfg.seed + k;
            let r = run_episode(&cfg.env, &mut RandomPolicy::new(seed), seed, &hash);
            match &r {
                Ok(e) => log::info!(
                    "episode seed {seed}: mean sigma_sc {:.4e}",
                    e.mean_sigma_sc()
                ),
                Err(e) => log::error!("episode seed {seed}: {e}"),
            }
            r
        })
        .collect::<Result<_>>()?;
    Dataset::new(cfg.env.clone(), eps)?.save(&dir)?;
    log::info!("wrote {n} episodes to {}", dir.display());
    Ok(())
}

pub fn train(common: &Common, data_dir: &Path, no_pml: bool) -> Result<()> {
    let mut cfg = load_config(common)?;
    if no_pml {
        cfg.latent.latent_pml = false;
    }
    let dir = out_dir(common, &cfg, "model")?;
    let data = Dataset::load(data_dir)?;
    storage::check_config(&config_hash(&cfg.env), &cfg.env, &data.config)?;
    let mut model = Surrogate::new(&cfg.env, &cfg.latent, cfg.train.seed)?;
    model.calibrate(&data)?;
    let report = training::train(&mut model, &data, &cfg.train)?;
    model.save(&dir.join("checkpoint"))?;
    report.write_csv(&dir.join("loss.csv"))?;
    let chart = Chart {
        title: "training loss",
        x_label: "step",
        y_label: "batch loss",
        log_y: true,
    };
    let pts = report
        .curve
        .iter()
        .map(|p| (p.step as f64, p.total))
        .collect();
    write_text(
        &dir.join("loss.svg"),
        &chart.render(&[Series {
            label: "total",
            points: pts,
        }]),
    )?;
    #[derive(Serialize)]
    struct Details<'a> {
        train: &'a training::TrainConfig,
        latent_pml: bool,
        steps: usize,
        skipped: &'a [usize],
        epoch_means: Vec<(usize, f64)>,
    }
    manifest(
        &dir,
        "train",
        model.meta.env_config_hash.clone(),
        Details {
            train: &cfg.train,
            latent_pml: model.latent_pml(),
            steps: report.curve.len(),
            skipped: &report.skipped,
            epoch_means: report.epoch_means(),
        },
    )
}

pub fn eval_horizon(common: &Common, ck: &Path, data_dir: &Path, no_pml: bool) -> Result<()> {
    let cfg = load_config(common)?;
    let dir = out_dir(common, &cfg, "eval")?;
    let model = load_model(ck, no_pml)?;
    let data = load_data(&model, data_dir)?;
    let stats = evaluate_horizon(&model, &data.episodes, &cfg.eval)?;
    training::write_horizon_csv(&dir.join("horizon.csv"), &stats)?;
    let chart = Chart {
        title: "prediction error against horizon",
        x_label: "horizon (actions)",
        y_label: "MSE",
        log_y: true,
    };
    let pts = stats
        .iter()
        .map(|s| (s.horizon as f64, s.mean_mse))
        .collect();
    write_text(
        &dir.join("horizon.svg"),
        &chart.render(&[Series {
            label: "mean MSE",
            points: pts,
        }]),
    )?;
    for s in &stats {
        log::info!(
            "horizon {:>3}: mse {:.4e} +- {:.2e}",
            s.horizon,
            s.mean_mse,
            s.std_mse
        );
    }
    manifest(
        &dir,
        "eval-horizon",
        model.meta.env_config_hash.clone(),
        &stats,
    )
}

pub fn predict(
    common: &Common,
    ck: &Path,
    data_dir: &Path,
    episode: usize,
    no_pml: bool,
) -> Result<()> {
    use wavesurrogate::training::EpisodePredictor;
    let cfg = load_config(common)?;
    let dir = out_dir(common, &cfg, "predict")?;
    let model = load_model(ck, no_pml)?;
    let data = load_data(&model, data_dir)?;
    let ep = data.episodes.get(episode).ok_or_else(|| {
        Error::Config(format!(
            "dataset has {} episodes, asked for {episode}",
            data.episodes.len()
        ))
    })?;
    let pred = model.predict_window(ep, 0, ep.n_actions())?;
    let scale = model.meta.sigma_scale;
    let dt = model.meta.env.dt;
    #[derive(Serialize)]
    struct Row {
        step: usize,
        t: f64,
        sigma_sc: f64,
        sigma_sc_hat: f64,
    }
    let rows: Vec<Row> = pred
        .iter()
        .enumerate()
        .map(|(k, p)| Row {
            step: k,
            t: (k + 1) as f64 * dt,
            sigma_sc: ep.sigma_sc[k] as f64,
            sigma_sc_hat: p * scale,
        })
        .collect();
    write_csv(&dir.join("predict.csv"), &rows)?;
    let chart = Chart {
        title: "scattered energy over one episode",
        x_label: "t (s)",
        y_label: "sigma_sc",
        log_y: false,
    };
    write_text(
        &dir.join("predict.svg"),
        &chart.render(&[
            Series {
                label: "measured",
                points: rows.iter().map(|r| (r.t, r.sigma_sc)).collect(),
            },
            Series {
                label: "predicted",
                points: rows.iter().map(|r| (r.t, r.sigma_sc_hat)).collect(),
            },
        ]),
    )?;
    manifest(
        &dir,
        "predict",
        model.meta.env_config_hash.clone(),
        serde_json::json!({ "episode": episode, "seed": ep.seed, "steps": rows.len(), "latent_pml": model.latent_pml() }),
    )
}

#[derive(Clone, Debug, Serialize)]
struct ControlSummary {
    seeds: Vec<u64>,
    mpc_means: Vec<f64>,
    random_means: Vec<f64>,
    mpc_mean: f64,
    random_mean: f64,
    /// `1 - mpc_mean / random_mean` over all episodes.
    reduction: f64,
    /// Mean and standard deviation of the per-seed reductions.
    paired_reduction_mean: f64,
    paired_reduction_std: f64,
}

fn summarize(seeds: Vec<u64>, mpc: &[EpisodeRecord], random: &[EpisodeRecord]) -> ControlSummary {
    let mpc_means: Vec<f64> = mpc.iter().map(|e| e.mean_sigma_sc()).collect();
    let random_means: Vec<f64> = random.iter().map(|e| e.mean_sigma_sc()).collect();
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let paired: Vec<f64> = mpc_means
        .iter()
        .zip(&random_means)
        .map(|(m, r)| 1.0 - m / r)
        .collect();
    let pm = avg(&paired);
    let pv = paired.iter().map(|p| (p - pm) * (p - pm)).sum::<f64>() / paired.len().max(1) as f64;
    let (m, r) = (avg(&mpc_means), avg(&random_means));
    ControlSummary {
        seeds,
        mpc_means,
        random_means,
        mpc_mean: m,
        random_mean: r,
        reduction: 1.0 - m / r,
        paired_reduction_mean: pm,
        paired_reduction_std: pv.sqrt(),
    }
}

pub fn control(common: &Common, ck: &Path, episodes: Option<usize>) -> Result<()> {
    let cfg = load_config(common)?;
    let dir = out_dir(common, &cfg, "control")?;
    let model = Surrogate::load(ck)?;
    storage::check_config(&model.meta.env_config_hash, &model.meta.env, &cfg.env)?;
    let n = episodes.unwrap_or(cfg.control.episodes);
    let hash = config_hash(&cfg.env);
    let seeds: Vec<u64> = (0..n as u64).map(|k| cfg.seed + k).collect();
    let mpc: Vec<EpisodeRecord> = seeds
        .par_iter()
        .map(|&s| control_episode(&cfg.env, &model, &cfg.mpc, s, &hash))
        .collect::<Result<_>>()?;
    let random: Vec<EpisodeRecord> = seeds
        .par_iter()
        .map(|&s| run_episode(&cfg.env, &mut RandomPolicy::new(s), s, &hash))
        .collect::<Result<_>>()?;
    #[derive(Serialize)]
    struct Row<'a> {
        policy: &'a str,
        seed: u64,
        step: usize,
        sigma_sc: f32,
    }
    let rows = mpc.iter().chain(&random).flat_map(|e| {
        e.sigma_sc.iter().enumerate().map(move |(k, &v)| Row {
            policy: &e.policy,
            seed: e.seed,
            step: k,
            sigma_sc: v,
        })
    });
    write_csv(&dir.join("control.csv"), rows)?;
    #[derive(Serialize)]
    struct ActionRow<'a> {
        policy: &'a str,
        seed: u64,
        action: usize,
        radii: String,
    }
    let actions = mpc.iter().chain(&random).flat_map(|e| {
        e.radii.iter().enumerate().map(move |(k, r)| ActionRow {
            policy: &e.policy,
            seed: e.seed,
            action: k,
            radii: r
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(" "),
        })
    });
    write_csv(&dir.join("control_radii.csv"), actions)?;
    let curve = |eps: &[EpisodeRecord]| -> Vec<(f64, f64)> {
        let s = cfg.env.steps_per_action;
        (0..cfg.env.actions_per_episode)
            .map(|a| {
                let v: f64 = eps
                    .iter()
                    .map(|e| {
                        e.sigma_sc[a * s..(a + 1) * s]
                            .iter()
                            .map(|&x| x as f64)
                            .sum::<f64>()
                            / s as f64
                    })
                    .sum();
                (a as f64, v / eps.len().max(1) as f64)
            })
            .collect()
    };
    let chart = Chart {
        title: "scattered energy under control",
        x_label: "action",
        y_label: "mean sigma_sc",
        log_y: false,
    };
    write_text(
        &dir.join("control.svg"),
        &chart.render(&[
            Series {
                label: "mpc",
                points: curve(&mpc),
            },
            Series {
                label: "random",
                points: curve(&random),
            },
        ]),
    )?;
    let summary = summarize(seeds, &mpc, &random);
    log::info!(
        "mpc mean {:.4e}, random mean {:.4e}, reduction {:.1}%",
        summary.mpc_mean,
        summary.random_mean,
        100.0 * summary.reduction
    );
    manifest(
        &dir,
        "control",
        hash,
        serde_json::json!({ "mpc": cfg.mpc, "summary": summary }),
    )
}

#[allow(clippy::too_many_arguments)]
pub fn latent_field(
    common: &Common,
    ck: &Path,
    data_dir: &Path,
    episode: usize,
    actions: usize,
    every: usize,
    no_pml: bool,
) -> Result<()> {
    let cfg = load_config(common)?;
    let dir = out_dir(common, &cfg, "latent")?;
    let model = load_model(ck, no_pml)?;
    let data = load_data(&model, data_dir)?;
    let ep = data.episodes.get(episode).ok_or_else(|| {
        Error::Config(format!(
            "dataset has {} episodes, asked for {episode}",
            data.episodes.len()
        ))
    })?;
    if actions == 0 || actions > ep.n_actions() || every == 0 {
        return Err(Error::Config(format!(
            "need 1..={} actions and a positive stride",
            ep.n_actions()
        )));
    }
    let conds = model.encode(&ep.observation(0), 0)?;
    let n = conds.initial.grid.n_cells();
    let mut field: Vec<f32> = Vec::new();
    let mut rows = 0;
    let res = model.rollout_from(&conds, &ep.radii[..=actions], 0, |k, s| {
        if (k + 1) % every == 0 {
            field.extend(
                s.u_tot()
                    .iter()
                    .zip(s.u_inc())
                    .map(|(a, b)| ((a - b) * (a - b)) as f32),
            );
            rows += 1;
        }
    });
    match res {
        Ok(_) => {}
        Err(e) if e.is_blow_up() => {
            log::warn!("latent rollout blew up ({e}); keeping {rows} finite rows")
        }
        Err(e) => return Err(e),
    }
    storage::write_f32(&dir.join("latent_field.f32"), field.iter().copied())?;
    let g = conds.initial.grid;
    manifest(
        &dir,
        "latent-field",
        model.meta.env_config_hash.clone(),
        serde_json::json!({
            "file": "latent_field.f32",
            "dtype": "float32-le",
            "shape": [rows, n],
            "row_dt": every as f64 * model.meta.env.dt,
            "dx": g.dx(),
            "length": g.length(),
            "episode": episode,
            "latent_pml": model.latent_pml(),
        }),
    )
}
