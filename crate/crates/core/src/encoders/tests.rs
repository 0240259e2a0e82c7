use super::*;

fn tiny_cfg() -> EncoderConfig {
    EncoderConfig {
        latent_cells: 16,
        latent_length: Some(4.0),
        n_modes: 4,
        pml_params: 3,
        conv_channels: [2, 3, 2],
        pool_size: 2,
        wave_hidden: 5,
        design_hidden: 6,
        head_gain: 0.5,
        ..EncoderConfig::default()
    }
}

fn facts() -> EnvFacts {
    EnvFacts {
        resolution: 8,
        n_scatterers: 3,
        radius_bounds: (0.2, 1.0),
        c_ambient: 10.0,
        omega: 2.0,
        dt: 1e-3,
        real_diagonal: 2.0,
    }
}

fn obs(seed: u64) -> Observation {
    let px = 64;
    let f = |k: u64| -> Vec<f32> {
        (0..px)
            .map(|i| ((i as f64 * 0.37 + (seed + k) as f64).sin() * 0.8) as f32)
            .collect()
    };
    Observation {
        frames: [f(0), f(1), f(2)],
        resolution: 8,
        design_radii: vec![0.5, 0.6, 0.7],
    }
}

fn weights(n: usize, k: usize) -> Vec<f64> {
    (0..n)
        .map(|i| ((i * 7 + k * 3) % 11) as f64 / 5.0 - 1.0)
        .collect()
}

fn random_latent_grads(n: usize) -> LatentGradients {
    LatentGradients {
        initial: std::array::from_fn(|f| weights(n, f)),
        f_z: weights(n, 5),
        sigma_z: weights(n, 6).iter().map(|v| v * 1e-3).collect(),
        c_frames: vec![],
    }
}

fn wave_objective(enc: &Encoders, store: &ParamStore, x: &[f64], g: &LatentGradients) -> f64 {
    let acts = enc.wave.net.forward(store, x);
    let c = enc.wave.conditions(acts.last().unwrap(), 0.0);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    (0..4)
        .map(|f| dot(&c.initial.fields[f], &g.initial[f]))
        .sum::<f64>()
        + dot(&c.f_z.values, &g.f_z)
        + dot(&c.sigma_z.values, &g.sigma_z)
}

fn close(fd: f64, an: f64) -> bool {
    let err = (fd - an).abs();
    err <= 1e-4 * fd.abs().max(an.abs()) || err <= 1e-7
}

#[test]
fn wave_encoding_is_deterministic_and_pinned() {
    let enc = Encoders::new(&tiny_cfg(), &facts(), 3).unwrap();
    let a = encode_wave(&enc, &obs(1), 0.5).unwrap();
    let b = encode_wave(&enc, &obs(1), 0.5).unwrap();
    assert_eq!(a, b);
    for f in &a.initial.fields {
        assert_eq!(f[0], 0.0);
        assert_eq!(f[15], 0.0);
    }
    assert!(a.sigma_z.values.iter().all(|&s| s >= 0.0));
    assert_eq!(enc.wave.n_outputs(), 5 * 4 + 3);
}

#[test]
fn wrong_resolution_is_rejected() {
    let enc = Encoders::new(&tiny_cfg(), &facts(), 3).unwrap();
    let mut o = obs(0);
    o.resolution = 4;
    assert!(matches!(encode_wave(&enc, &o, 0.0), Err(Error::Shape(_))));
}

#[test]
fn same_seed_same_parameters() {
    let a = Encoders::new(&tiny_cfg(), &facts(), 11).unwrap();
    let b = Encoders::new(&tiny_cfg(), &facts(), 11).unwrap();
    let c = Encoders::new(&tiny_cfg(), &facts(), 12).unwrap();
    assert_eq!(a.params, b.params);
    assert_ne!(a.params.data(), c.params.data());
}

#[test]
fn initial_damping_follows_the_ramp() {
    let cfg = EncoderConfig {
        latent_cells: 200,
        pml_params: 40,
        ..tiny_cfg()
    };
    let enc = Encoders::new(&cfg, &facts(), 0).unwrap();
    let s = encode_wave(&enc, &obs(0), 0.0).unwrap().sigma_z.values;
    assert!(s[0] > 100.0 * s[100]);
    assert!(s[199] > 100.0 * s[100]);
}

#[test]
fn wave_pixel_jacobian_matches_finite_differences() {
    let enc = Encoders::new(&tiny_cfg(), &facts(), 5).unwrap();
    let o = obs(2);
    let x = enc.wave.input(&o).unwrap();
    let g = random_latent_grads(16);
    let (_, cache) = enc.wave.forward_raw(&enc.params, &o).unwrap();
    let mut grad = enc.params.zeros_like();
    let gin = enc.wave.backward(&enc.params, &cache, &g, &mut grad);
    for i in [0, 17, 64, 100, 191] {
        let eps = 1e-5;
        let mut hi = x.clone();
        hi[i] += eps;
        let mut lo = x.clone();
        lo[i] -= eps;
        let fd = (wave_objective(&enc, &enc.params, &hi, &g)
            - wave_objective(&enc, &enc.params, &lo, &g))
            / (2.0 * eps);
        assert!(close(fd, gin[i]), "pixel {i}: fd {fd} an {}", gin[i]);
    }
}

#[test]
fn wave_parameter_gradients_match_finite_differences() {
    let enc = Encoders::new(&tiny_cfg(), &facts(), 9).unwrap();
    let o = obs(4);
    let x = enc.wave.input(&o).unwrap();
    let g = random_latent_grads(16);
    let (_, cache) = enc.wave.forward_raw(&enc.params, &o).unwrap();
    let mut grad = enc.params.zeros_like();
    enc.wave.backward(&enc.params, &cache, &g, &mut grad);
    for spec in enc
        .params
        .specs()
        .iter()
        .filter(|s| s.name.starts_with("wave"))
    {
        for k in [0, spec.len() / 2, spec.len() - 1] {
            let idx = spec.offset + k;
            let eps = 1e-5;
            let mut p = enc.params.clone();
            p.data_mut()[idx] += eps;
            let hi = wave_objective(&enc, &p, &x, &g);
            p.data_mut()[idx] -= 2.0 * eps;
            let lo = wave_objective(&enc, &p, &x, &g);
            let fd = (hi - lo) / (2.0 * eps);
            assert!(
                close(fd, grad[idx]),
                "{}[{k}]: fd {fd} an {}",
                spec.name,
                grad[idx]
            );
        }
    }
}

fn design_objective(enc: &Encoders, store: &ParamStore, radii: &[Vec<f64>], w: &[Vec<f64>]) -> f64 {
    let knots: Vec<f64> = (0..radii.len()).map(|k| k as f64).collect();
    let (s, _) = enc.design.encode_window(store, radii, &knots).unwrap();
    s.c_frames
        .iter()
        .zip(w)
        .map(|(f, w)| f.values.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

#[test]
fn design_gradients_match_finite_differences() {
    let enc = Encoders::new(&tiny_cfg(), &facts(), 21).unwrap();
    let radii = vec![
        vec![0.3, 0.5, 0.9],
        vec![0.35, 0.45, 0.8],
        vec![0.4, 0.5, 0.7],
    ];
    let w: Vec<Vec<f64>> = (0..3).map(|k| weights(16, k)).collect();
    let knots = [0.0, 1.0, 2.0];
    let (_, cache) = enc
        .design
        .encode_window(&enc.params, &radii, &knots)
        .unwrap();
    let mut grad = enc.params.zeros_like();
    let rg = enc.design.backward(&enc.params, &cache, &w, &mut grad);
    for spec in enc
        .params
        .specs()
        .iter()
        .filter(|s| s.name.starts_with("design"))
    {
        for k in [0, spec.len() / 2, spec.len() - 1] {
            let idx = spec.offset + k;
            let eps = 1e-5;
            let mut p = enc.params.clone();
            p.data_mut()[idx] += eps;
            let hi = design_objective(&enc, &p, &radii, &w);
            p.data_mut()[idx] -= 2.0 * eps;
            let lo = design_objective(&enc, &p, &radii, &w);
            let fd = (hi - lo) / (2.0 * eps);
            assert!(
                close(fd, grad[idx]),
                "{}[{k}]: fd {fd} an {}",
                spec.name,
                grad[idx]
            );
        }
    }
    for (f, r) in [(0, 0), (1, 2), (2, 1)] {
        let eps = 1e-6;
        let mut hi = radii.clone();
        hi[f][r] += eps;
        let mut lo = radii.clone();
        lo[f][r] -= eps;
        let fd = (design_objective(&enc, &enc.params, &hi, &w)
            - design_objective(&enc, &enc.params, &lo, &w))
            / (2.0 * eps);
        assert!(
            close(fd, rg[f][r]),
            "radius {f}/{r}: fd {fd} an {}",
            rg[f][r]
        );
    }
}

#[test]
fn constant_design_gives_constant_speed() {
    let enc = Encoders::new(&tiny_cfg(), &facts(), 1).unwrap();
    let radii = vec![vec![0.5, 0.5, 0.5]; 4];
    let s = encode_design_window(&enc, &radii, &[0.0, 0.1, 0.2, 0.3]).unwrap();
    assert!(s.c_frames.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn speed_frames_respect_the_floor() {
    let cfg = EncoderConfig {
        head_gain: 50.0,
        ..tiny_cfg()
    };
    for seed in 0..5 {
        let enc = Encoders::new(&cfg, &facts(), seed).unwrap();
        let (lo, hi) = enc.design.c_bounds();
        let radii = vec![vec![0.2, 1.0, 0.6], vec![1.0, 0.2, 0.3]];
        let s = encode_design_window(&enc, &radii, &[0.0, 1.0]).unwrap();
        assert!(s
            .c_frames
            .iter()
            .flat_map(|f| &f.values)
            .all(|&c| c >= lo && c <= hi));
    }
}

#[test]
fn default_encoders_stay_small() {
    let cfg = EncoderConfig {
        design_hidden: 32,
        ..EncoderConfig::default()
    };
    let env = EnvFacts {
        resolution: 128,
        n_scatterers: 4,
        radius_bounds: (0.2, 1.0),
        c_ambient: 1531.0,
        omega: 1000.0,
        dt: 1e-5,
        real_diagonal: 15.0 * 2f64.sqrt(),
    };
    let enc = Encoders::new(&cfg, &env, 0).unwrap();
    let count = |prefix: &str| -> usize {
        enc.params
            .specs()
            .iter()
            .filter(|s| s.name.starts_with(prefix))
            .map(|s| s.len())
            .sum()
    };
    assert!(count("wave") <= 10_000, "{}", count("wave"));
    assert!(count("design") <= 10_000, "{}", count("design"));
}
