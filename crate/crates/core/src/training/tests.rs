use super::*;
use crate::acoustic_env::{run_episode, RandomPolicy};

pub(crate) fn tiny_env() -> EnvConfig {
    let mut c = EnvConfig {
        grid_cells: 40,
        dt: 2e-5,
        steps_per_action: 25,
        actions_per_episode: 4,
        observation_resolution: 20,
        ..EnvConfig::default()
    };
    c.source.width_cells = 1.5;
    c.pml.thickness_cells = 6;
    c
}

pub(crate) fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        latent_cells: 64,
        n_modes: 8,
        pml_params: 6,
        conv_channels: [2, 3, 2],
        pool_size: 2,
        wave_hidden: 4,
        design_hidden: 6,
        ..EncoderConfig::default()
    }
}

fn tiny_data(n: u64) -> Dataset {
    let cfg = tiny_env();
    let h = storage::config_hash(&cfg);
    let eps = (0..n)
        .map(|s| run_episode(&cfg, &mut RandomPolicy::new(s), s, &h).unwrap())
        .collect();
    Dataset::new(cfg, eps).unwrap()
}

fn model(data: &Dataset, seed: u64) -> Surrogate {
    let mut m = Surrogate::new(&data.config, &tiny_encoder(), seed).unwrap();
    m.calibrate(data).unwrap();
    m
}

fn series(sc: &[f64], tot: &[f64], inc: &[f64]) -> LatentSigmas {
    LatentSigmas {
        sc: sc.to_vec(),
        tot: tot.to_vec(),
        inc: inc.to_vec(),
    }
}

#[test]
fn loss_examples() {
    let t = series(&[1.0, 2.0], &[0.5, 0.0], &[3.0, 3.0]);
    let r = loss(&t, &t, LossWeights::default()).unwrap();
    assert_eq!(r.total, 0.0);
    let shifted = series(&[2.0, 3.0], &[1.5, 1.0], &[4.0, 4.0]);
    let r = loss(&shifted, &t, LossWeights::default()).unwrap();
    assert_eq!((r.mse_sc, r.mse_tot, r.mse_inc), (1.0, 1.0, 1.0));

    let z = series(&[0.0], &[0.0], &[0.0]);
    let p = series(&[2f64.sqrt()], &[2.0], &[6f64.sqrt()]);
    let r = loss(&p, &z, LossWeights::default()).unwrap();
    assert!((r.total - 7.0).abs() < 1e-12, "{}", r.total);
    assert!(loss(
        &series(&[0.0; 3], &[0.0; 3], &[0.0; 3]),
        &t,
        LossWeights::default()
    )
    .is_err());
}

#[test]
fn loss_gradient_is_the_derivative() {
    let p = series(&[0.3, -1.0, 2.0], &[1.0, 1.5, 0.2], &[0.0, 0.1, 0.7]);
    let t = series(&[0.1, 0.2, 0.3], &[1.0, 1.0, 1.0], &[0.5, 0.5, 0.5]);
    let w = LossWeights {
        sc: 1.0,
        tot: 0.3,
        inc: 0.7,
    };
    let g = loss_gradient(&p, &t, w).unwrap();
    let f = |q: &LatentSigmas| loss(q, &t, w).unwrap().total;
    for k in 0..3 {
        let eps = 1e-6;
        let mut hi = p.clone();
        hi.tot[k] += eps;
        let mut lo = p.clone();
        lo.tot[k] -= eps;
        let fd = (f(&hi) - f(&lo)) / (2.0 * eps);
        assert!((fd - g.tot[k]).abs() < 1e-8);
    }
}

#[test]
fn matching_targets_give_zero_gradient() {
    let data = tiny_data(1);
    let m = model(&data, 1);
    let ep = &data.episodes[0];
    let obs = ep.observation(1);
    let radii = &ep.radii[1..=3];
    let pred = m.predict(&obs, 1, radii).unwrap();
    let (r, g) = m
        .gradient_against(&obs, 1, radii, &pred, LossWeights::default())
        .unwrap();
    assert_eq!(r.total, 0.0);
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn latent_damping_receives_gradient() {
    let data = tiny_data(1);
    let m = model(&data, 2);
    let (r, g) = m
        .window_gradient(&data.episodes[0], 0, 3, LossWeights::default())
        .unwrap();
    assert!(r.total > 0.0);
    let head = m
        .encoders
        .params
        .specs()
        .iter()
        .find(|s| s.name == "wave.head.bias")
        .unwrap();
    let n = tiny_encoder().n_modes;
    let pml = &g[head.offset + 5 * n..head.offset + head.len()];
    assert!(pml.iter().any(|&v| v != 0.0), "{pml:?}");

    let mut off = m.clone();
    off.set_latent_pml(false);
    let (_, g) = off
        .window_gradient(&data.episodes[0], 0, 3, LossWeights::default())
        .unwrap();
    assert!(g[head.offset + 5 * n..head.offset + head.len()]
        .iter()
        .all(|&v| v == 0.0));
}

#[test]
fn zero_aux_weights_ignore_aux_targets() {
    let data = tiny_data(1);
    let m = model(&data, 3);
    let ep = &data.episodes[0];
    let obs = ep.observation(0);
    let radii = &ep.radii[0..=2];
    let w = LossWeights {
        sc: 1.0,
        tot: 0.0,
        inc: 0.0,
    };
    let t = targets(ep, 0, 2, m.meta.sigma_scale);
    let mut bent = t.clone();
    bent.tot.iter_mut().for_each(|v| *v = 5.0 * *v + 1.0);
    bent.inc.iter_mut().for_each(|v| *v -= 3.0);
    let (_, a) = m.gradient_against(&obs, 0, radii, &t, w).unwrap();
    let (_, b) = m.gradient_against(&obs, 0, radii, &bent, w).unwrap();
    assert_eq!(a, b);
    let (_, c) = m
        .gradient_against(&obs, 0, radii, &bent, LossWeights::default())
        .unwrap();
    assert_ne!(a, c);
}

#[test]
fn zero_gradient_step_keeps_parameters() {
    let mut p = vec![0.5, -1.0, 3.0];
    let mut opt = Adam::new(3, &TrainConfig::default());
    opt.step(&mut p, &[0.0; 3]);
    assert_eq!(p, vec![0.5, -1.0, 3.0]);
    let mut opt = Adam::new(3, &TrainConfig::default());
    opt.step(&mut p, &[1.0, -1.0, 0.0]);
    assert!((p[0] - (0.5 - 1e-3)).abs() < 1e-9);
    assert!((p[1] - (-1.0 + 1e-3)).abs() < 1e-9);
    assert_eq!(p[2], 3.0);
}

#[test]
fn tree_sum_adds_everything() {
    let parts: Vec<Vec<f64>> = (0..7).map(|k| vec![k as f64, 1.0]).collect();
    assert_eq!(tree_sum(parts), vec![21.0, 7.0]);
}

#[test]
fn batch_loss_ignores_order() {
    let data = tiny_data(2);
    let m = model(&data, 4);
    let batch = [(0, 0), (1, 1), (0, 2), (1, 0), (0, 1)];
    let mut rev = batch;
    rev.reverse();
    let (a, ga) = m
        .batch_gradient(&data.episodes, &batch, 2, LossWeights::default())
        .unwrap();
    let (b, gb) = m
        .batch_gradient(&data.episodes, &rev, 2, LossWeights::default())
        .unwrap();
    assert!((a.total - b.total).abs() <= 1e-12 * a.total);
    for (x, y) in ga.iter().zip(&gb) {
        assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-30) + 1e-300);
    }
}

fn train_cfg() -> TrainConfig {
    TrainConfig {
        horizon_actions: 2,
        batch_size: 3,
        max_epochs: 2,
        batches_per_epoch: 2,
        seed: 9,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_reproducible() {
    let data = tiny_data(2);
    let run = || {
        let mut m = model(&data, 5);
        let r = train(&mut m, &data, &train_cfg()).unwrap();
        (m.encoders.params, r)
    };
    let (pa, ra) = run();
    let (pb, rb) = run();
    assert_eq!(pa, pb);
    assert_eq!(ra, rb);
    assert_eq!(ra.curve.len() + ra.skipped.len(), 4);
    assert_ne!(pa, model(&data, 5).encoders.params);
}

#[test]
fn horizon_longer_than_episodes_is_rejected() {
    let data = tiny_data(1);
    let mut m = model(&data, 0);
    let cfg = TrainConfig {
        horizon_actions: 10,
        ..train_cfg()
    };
    assert!(matches!(train(&mut m, &data, &cfg), Err(Error::Config(_))));
}

#[test]
fn foreign_dataset_is_refused_with_a_diff() {
    let data = tiny_data(1);
    let m = model(&data, 0);
    let mut other = data.clone();
    other.config.source.amplitude = 2.0;
    match m.check_dataset(&other) {
        Err(Error::ConfigMismatch { diff, .. }) => {
            assert!(diff.contains("source.amplitude"), "{diff}")
        }
        r => panic!("{r:?}"),
    }
}

#[test]
fn checkpoint_round_trips() {
    let data = tiny_data(1);
    let m = model(&data, 6);
    let dir = tempfile::tempdir().unwrap();
    m.save(dir.path()).unwrap();
    let back = Surrogate::load(dir.path()).unwrap();
    assert_eq!(back.meta, m.meta);
    assert_eq!(back.encoders.params.specs(), m.encoders.params.specs());
    for (a, b) in back
        .encoders
        .params
        .data()
        .iter()
        .zip(m.encoders.params.data())
    {
        assert_eq!(*a, *b as f32 as f64);
    }
    back.save(dir.path()).unwrap();
    let again = Surrogate::load(dir.path()).unwrap();
    assert_eq!(again.encoders.params, back.encoders.params);
}

struct Replay(f64);

impl EpisodePredictor for Replay {
    fn sigma_scale(&self) -> f64 {
        self.0
    }

    fn predict_window(&self, ep: &EpisodeRecord, tau: usize, horizon: usize) -> Result<Vec<f64>> {
        let s = ep.steps_per_action;
        Ok(ep.sigma_sc[tau * s..(tau + horizon) * s]
            .iter()
            .map(|&v| v as f64 / self.0)
            .collect())
    }
}

#[test]
fn perfect_predictor_scores_zero() {
    let data = tiny_data(2);
    let eval = HorizonEval {
        horizons: vec![1, 2, 4],
        samples: 5,
        seed: 1,
    };
    let stats = evaluate_horizon(&Replay(3.0), &data.episodes, &eval).unwrap();
    assert_eq!(stats.len(), 3);
    assert!(stats
        .iter()
        .all(|s| s.mean_mse == 0.0 && s.std_mse == 0.0 && s.samples == 5));
    let long = HorizonEval {
        horizons: vec![5],
        ..eval
    };
    assert!(evaluate_horizon(&Replay(1.0), &data.episodes, &long).is_err());
}

#[test]
fn horizon_windows_are_seeded() {
    let data = tiny_data(2);
    let m = model(&data, 0);
    let eval = HorizonEval {
        horizons: vec![1, 3],
        samples: 3,
        seed: 4,
    };
    let a = evaluate_horizon(&m, &data.episodes, &eval).unwrap();
    let b = evaluate_horizon(&m, &data.episodes, &eval).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|s| s.mean_mse.is_finite() && s.mean_mse > 0.0));
}

#[test]
fn horizon_rows_cover_twenty_to_two_hundred() {
    let h = HorizonEval::default().horizons;
    assert_eq!(h.len(), 19);
    assert_eq!((h[0], h[18]), (20, 200));
}

#[test]
fn calibration_normalises_energy() {
    let data = tiny_data(2);
    let m = model(&data, 0);
    let t: Vec<f64> = data
        .episodes
        .iter()
        .flat_map(|e| e.sigma_inc.iter().map(|&v| v as f64 / m.meta.sigma_scale))
        .collect();
    let mean = t.iter().sum::<f64>() / t.len() as f64;
    assert!((mean - 1.0).abs() < 1e-9, "{mean}");
    assert!(m.meta.beta > 0.0 && m.meta.input_scale > 0.0);
}
