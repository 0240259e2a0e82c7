use super::*;
use crate::pml::build_ramp;
use std::f64::consts::PI;

fn grid(n: usize, len: f64) -> Grid1D {
    Grid1D::new(n, len).unwrap()
}

fn conds(initial: LatentState, f: Vec<f64>, sigma: Vec<f64>, omega: f64) -> LatentConditions {
    let g = initial.grid;
    LatentConditions {
        initial,
        f_z: Field1D::new(g, f).unwrap(),
        sigma_z: Field1D::new(g, sigma).unwrap(),
        omega,
    }
}

fn windowed_means(v: &[f64], parts: usize) -> Vec<f64> {
    let w = v.len() / parts;
    (0..parts)
        .map(|p| v[p * w..(p + 1) * w].iter().sum::<f64>() / w as f64)
        .collect()
}

#[test]
fn embedding_examples() {
    let g = grid(101, 8.0);
    let e = sinusoidal_embed(&[1.0, 0.0, 0.0], g).unwrap();
    assert!((e.values[50] - 1.0).abs() < 1e-14);
    let e = sinusoidal_embed(&[0.0, 1.0], g).unwrap();
    assert!((e.values[25] - 1.0).abs() < 1e-14);
    let e = sinusoidal_embed(&[0.3, -2.0, 1.1, 5.0, 0.7], g).unwrap();
    assert_eq!(e.values[0], 0.0);
    assert_eq!(e.values[100], 0.0);
    assert!(sinusoidal_embed(&[], g).is_err());
}

#[test]
fn embedding_transpose_is_adjoint() {
    let b = SineBasis::new(grid(37, 2.0), 6).unwrap();
    let c: Vec<f64> = (0..6).map(|k| (k as f64 * 0.7).sin()).collect();
    let w: Vec<f64> = (0..37).map(|i| (i as f64 * 0.3).cos()).collect();
    let lhs: f64 = b.embed(&c).values.iter().zip(&w).map(|(a, b)| a * b).sum();
    let mut ct = vec![0.0; 6];
    b.embed_transpose(&w, &mut ct);
    let rhs: f64 = ct.iter().zip(&c).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
}

#[test]
fn zero_state_has_zero_derivative() {
    let g = grid(50, 3.0);
    let s = LatentState::zeros(g, 0.3);
    let z = Field1D::zeros(g);
    let c = Field1D::from_fn(g, |_| 2.0);
    let d = latent_rhs(&s, &c, &z, &Field1D::from_fn(g, |_| 4.0), 7.0, 2.0).unwrap();
    assert!(d.fields.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn fixed_end_standing_wave() {
    let (n, len, c) = (201, 1.0, 1.0);
    let g = grid(n, len);
    let dt = 0.4 * g.dx() / c;
    let period = 2.0 * len / c;
    let steps_per_action = 25;
    let actions = (period / dt / steps_per_action as f64).ceil() as usize;
    let mode = |t: f64| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let xi = i as f64 * g.dx();
                (PI * xi / len).sin() * (PI * c * t / len).cos()
            })
            .collect()
    };
    let mut init = LatentState::zeros(g, 0.0);
    init.fields[UT] = mode(0.0);
    let cd = conds(init, vec![0.0; n], vec![0.0; n], 1.0);
    let spec = RolloutSpec {
        horizon_actions: actions,
        steps_per_action,
        dt,
        c_ambient: c,
    };
    let speed = LatentSpeedInterp::constant(g, c, 0.0, spec.n_steps() as f64 * dt).unwrap();
    let mut worst: f64 = 0.0;
    rollout_with(&cd, &speed, &spec, |k, s| {
        if (k + 1) as f64 * dt > period {
            return;
        }
        let exact = mode(s.t);
        let err: f64 = s.fields[UT]
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        let norm: f64 = exact
            .iter()
            .map(|b| b * b)
            .sum::<f64>()
            .max(1e-3 * n as f64 / 2.0);
        worst = worst.max((err / norm).sqrt());
    })
    .unwrap();
    assert!(worst < 0.01, "relative L2 error {worst}");
}

#[test]
fn uniform_damping_decays_exponentially() {
    let (n, len) = (101, 10.0);
    let g = grid(n, len);
    let s = 30.0;
    let dt = 1e-3;
    let mut init = LatentState::zeros(g, 0.0);
    init.fields[UT] = vec![1.0; n];
    init.fields[UI] = vec![1.0; n];
    let cd = conds(init, vec![0.0; n], vec![s; n], 5.0);
    // slow waves keep the pinned ends from reaching the centre
    let c = 0.5;
    let spec = RolloutSpec {
        horizon_actions: 5,
        steps_per_action: 20,
        dt,
        c_ambient: c,
    };
    let speed = LatentSpeedInterp::constant(g, c, 0.0, 0.1).unwrap();
    let out = rollout(&cd, &speed, &spec).unwrap();
    let t = out.final_state.t;
    let exact = (-s * t).exp();
    for i in 40..61 {
        let rel = (out.final_state.fields[UT][i] - exact).abs() / exact;
        assert!(rel < 1e-6, "node {i}: rel {rel}");
    }
}

#[test]
fn identical_pairs_scatter_nothing() {
    let (n, len, c) = (64, 20.0, 1531.0);
    let g = grid(n, len);
    let b = SineBasis::new(g, 8).unwrap();
    let u = b.embed(&[0.1, 0.5, -0.3, 0.0, 0.2, 0.0, 0.0, 0.1]).values;
    let v = b.embed(&[0.0, 0.2, 0.1, 0.0, 0.0, -0.3, 0.0, 0.0]).values;
    let mut init = LatentState::zeros(g, 0.0);
    init.fields = [u.clone(), v.clone(), u, v];
    let f = b.embed(&[1.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0]).values;
    let sigma = build_ramp(g, 8, 2000.0).unwrap().sigma;
    let cd = conds(init, f, sigma, 1000.0);
    let spec = RolloutSpec {
        horizon_actions: 20,
        steps_per_action: 100,
        dt: 1e-5,
        c_ambient: c,
    };
    let speed = LatentSpeedInterp::constant(g, c, 0.0, 0.02).unwrap();
    let out = rollout(&cd, &speed, &spec).unwrap();
    assert_eq!(out.sigmas.sc.len(), 2000);
    assert!(out.sigmas.sc.iter().all(|&s| s == 0.0));
    assert!(out.sigmas.tot.iter().all(|&s| s > 0.0));
}

#[test]
fn unforced_rollout_is_linear_in_state() {
    let (n, len, c) = (48, 10.0, 1531.0);
    let g = grid(n, len);
    let b = SineBasis::new(g, 6).unwrap();
    let mut init = LatentState::zeros(g, 0.0);
    init.fields = [
        b.embed(&[0.3, 0.1, 0.0, 0.2, 0.0, 0.1]).values,
        b.embed(&[0.0, 0.001, 0.0, 0.0, 0.0, 0.0]).values,
        b.embed(&[0.1, 0.0, 0.3, 0.0, 0.0, 0.0]).values,
        vec![0.0; n],
    ];
    let sigma = build_ramp(g, 6, 3000.0).unwrap().sigma;
    let speed = LatentSpeedInterp::new(
        vec![
            Field1D::from_fn(g, |x| c + 100.0 * x),
            Field1D::from_fn(g, |_| c),
        ],
        vec![0.0, 0.005],
    )
    .unwrap();
    let spec = RolloutSpec {
        horizon_actions: 5,
        steps_per_action: 100,
        dt: 1e-5,
        c_ambient: c,
    };
    let base = rollout(
        &conds(init.clone(), vec![0.0; n], sigma.clone(), 1000.0),
        &speed,
        &spec,
    )
    .unwrap();
    let mut scaled = init.clone();
    scaled.fields.iter_mut().flatten().for_each(|v| *v *= 3.0);
    let tri = rollout(&conds(scaled, vec![0.0; n], sigma, 1000.0), &speed, &spec).unwrap();
    for (a, b) in base
        .final_state
        .fields
        .iter()
        .flatten()
        .zip(tri.final_state.fields.iter().flatten())
    {
        assert!((3.0 * a - b).abs() <= 1e-10 * b.abs().max(1e-6));
    }
}

#[test]
fn undamped_unforced_energy_is_conserved() {
    let (n, len, c) = (80, 10.0, 1.0);
    let g = grid(n, len);
    let b = SineBasis::new(g, 10).unwrap();
    let mut init = LatentState::zeros(g, 0.0);
    init.fields[UT] = b
        .embed(&[0.0, 1.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.3])
        .values;
    init.fields[VT] = b
        .embed(&[0.2, 0.0, 0.0, 0.4, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        .values;
    let dt = 0.4 * g.dx();
    let spec = RolloutSpec {
        horizon_actions: 10,
        steps_per_action: 100,
        dt,
        c_ambient: c,
    };
    let cd = conds(init.clone(), vec![0.0; n], vec![0.0; n], 1.0);
    let speed = LatentSpeedInterp::constant(g, c, 0.0, 1000.0 * dt).unwrap();
    let e0 = pair_energy(&init.fields[UT], &init.fields[VT], c * c, g.dx());
    let out = rollout(&cd, &speed, &spec).unwrap();
    let e1 = pair_energy(
        &out.final_state.fields[UT],
        &out.final_state.fields[VT],
        c * c,
        g.dx(),
    );
    assert!(((e1 - e0) / e0).abs() < 1e-3, "drift {}", (e1 - e0) / e0);
}

#[test]
fn damped_energy_never_increases_between_windows() {
    let (n, len, c) = (128, 40.0, 1531.0);
    let g = grid(n, len);
    let b = SineBasis::new(g, 16).unwrap();
    let coeffs: Vec<f64> = (0..16).map(|k| ((k * 5 % 7) as f64 - 3.0) * 0.1).collect();
    let mut init = LatentState::zeros(g, 0.0);
    init.fields[UT] = b.embed(&coeffs).values;
    init.fields[UI] = b
        .embed(&coeffs[..16].iter().rev().copied().collect::<Vec<_>>())
        .values;
    let sigma = build_ramp(g, 20, 5000.0).unwrap().sigma;
    let spec = RolloutSpec {
        horizon_actions: 30,
        steps_per_action: 100,
        dt: 1e-5,
        c_ambient: c,
    };
    let cd = conds(init, vec![0.0; n], sigma, 1000.0);
    let speed = LatentSpeedInterp::constant(g, c, 0.0, 0.03).unwrap();
    let mut energies = Vec::new();
    rollout_with(&cd, &speed, &spec, |k, s| {
        if (k + 1) % 100 == 0 {
            let e = pair_energy(&s.fields[UT], &s.fields[VT], c * c, g.dx())
                + pair_energy(&s.fields[UI], &s.fields[VI], c * c, g.dx());
            energies.push(e);
        }
    })
    .unwrap();
    assert!(energies.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    assert!(energies.last().unwrap() < &(0.5 * energies[0]));
}

#[test]
fn rejects_latent_cfl_violation_and_short_knots() {
    let g = grid(32, 1.0);
    let cd = conds(
        LatentState::zeros(g, 0.0),
        vec![0.0; 32],
        vec![0.0; 32],
        1.0,
    );
    let spec = RolloutSpec {
        horizon_actions: 1,
        steps_per_action: 10,
        dt: 0.1,
        c_ambient: 1.0,
    };
    let speed = LatentSpeedInterp::constant(g, 1.0, 0.0, 1.0).unwrap();
    assert!(rollout(&cd, &speed, &spec).is_err());
    let spec = RolloutSpec { dt: 0.001, ..spec };
    let short = LatentSpeedInterp::constant(g, 1.0, 0.0, 0.005).unwrap();
    assert!(rollout(&cd, &short, &spec).is_err());
    assert!(rollout(&cd, &speed, &spec).is_ok());
}

#[test]
fn blow_up_names_the_field() {
    let g = grid(16, 1.0);
    let mut init = LatentState::zeros(g, 0.0);
    init.fields[VI][5] = f64::NAN;
    let cd = conds(init, vec![0.0; 16], vec![0.0; 16], 1.0);
    let spec = RolloutSpec {
        horizon_actions: 1,
        steps_per_action: 2,
        dt: 1e-3,
        c_ambient: 1.0,
    };
    let speed = LatentSpeedInterp::constant(g, 1.0, 0.0, 1.0).unwrap();
    match rollout(&cd, &speed, &spec) {
        Err(Error::BlowUp { field, .. }) => assert_eq!(field, "v_inc"),
        other => panic!("expected blow-up, got {other:?}"),
    }
}

#[test]
fn forcing_builds_up_without_damping_and_settles_with_it() {
    // closed box forced at one of its own frequencies
    let (n, len, c) = (256, 20.0, 1531.0);
    let g = grid(n, len);
    let dt = 1e-5;
    let mode = 13.0;
    let omega = resonant_frequency(n, len, c, mode);
    let f: Vec<f64> = (0..n)
        .map(|i| (-((g.coord(i) - 2.0) / 0.8).powi(2)).exp())
        .collect();
    let spec = RolloutSpec {
        horizon_actions: 80,
        steps_per_action: 100,
        dt,
        c_ambient: c,
    };
    let speed = LatentSpeedInterp::constant(g, c, 0.0, 0.08).unwrap();
    let run = |sigma: Vec<f64>| {
        let cd = conds(LatentState::zeros(g, 0.0), f.clone(), sigma, omega);
        rollout(&cd, &speed, &spec).unwrap().sigmas.tot
    };
    let closed = windowed_means(&run(vec![0.0; n]), 4);
    assert!(closed.windows(2).all(|w| w[1] > w[0]), "{closed:?}");
    assert!(closed[3] >= 2.0 * closed[0], "{closed:?}");
    let open = windowed_means(&run(build_ramp(g, 40, 3000.0).unwrap().sigma), 4);
    assert!(open[3] <= 2.0 * open[1], "{open:?}");
}

/// Frequency (Hz) of the discrete closed-box mode nearest to `sin(m pi xi / L)`:
/// the collocated central stencil propagates wavenumber `k` at `c sin(k dx) / dx`.
fn resonant_frequency(n: usize, len: f64, c: f64, m: f64) -> f64 {
    let dx = len / (n - 1) as f64;
    let k = m * PI / len;
    c * (k * dx).sin() / dx / (2.0 * PI)
}

mod adjoint {
    use super::*;

    struct Case {
        conds: LatentConditions,
        speed: LatentSpeedInterp,
        spec: RolloutSpec,
        weights: SigmaGrads,
    }

    fn case() -> Case {
        let (n, len, c) = (24, 6.0, 300.0);
        let g = grid(n, len);
        let b = SineBasis::new(g, 5).unwrap();
        let mut init = LatentState::zeros(g, 0.0123);
        init.fields = [
            b.embed(&[0.3, -0.2, 0.1, 0.05, 0.0]).values,
            b.embed(&[0.001, 0.0, -0.002, 0.0, 0.001]).values,
            b.embed(&[0.2, 0.1, 0.0, -0.1, 0.05]).values,
            b.embed(&[0.0, 0.001, 0.0, 0.0, 0.002]).values,
        ];
        let spec = RolloutSpec {
            horizon_actions: 2,
            steps_per_action: 15,
            dt: 2e-4,
            c_ambient: c,
        };
        let f = b.embed(&[0.4, 0.0, -0.3, 0.2, 0.1]).values;
        let sigma: Vec<f64> = (0..n).map(|i| 2.0 + 0.5 * (i as f64 * 0.7).sin()).collect();
        let t0 = init.t;
        let frames = (0..3)
            .map(|k| {
                Field1D::from_fn(g, |x| {
                    c * (0.8 + 0.05 * k as f64) + 20.0 * (x + k as f64).sin()
                })
            })
            .collect();
        let knots = (0..3).map(|k| t0 + k as f64 * 0.003).collect();
        let steps = spec.n_steps();
        let w = |a: f64| {
            (0..steps)
                .map(|k| a * (1.0 + (k as f64 * 0.37).cos()))
                .collect()
        };
        Case {
            conds: conds(init, f, sigma, 17.0),
            speed: LatentSpeedInterp::new(frames, knots).unwrap(),
            spec,
            weights: SigmaGrads {
                sc: w(1.0),
                tot: w(0.3),
                inc: w(-0.7),
            },
        }
    }

    fn objective(c: &Case) -> f64 {
        let out = rollout(&c.conds, &c.speed, &c.spec).unwrap();
        let s = &out.sigmas;
        (0..s.sc.len())
            .map(|k| {
                c.weights.sc[k] * s.sc[k]
                    + c.weights.tot[k] * s.tot[k]
                    + c.weights.inc[k] * s.inc[k]
            })
            .sum()
    }

    fn check(name: &str, an: f64, perturb: impl Fn(&mut Case, f64)) {
        let probe = |e: f64| {
            let mut c = case();
            perturb(&mut c, e);
            objective(&c)
        };
        let eps = 1e-4;
        let fd = (probe(eps) - probe(-eps)) / (2.0 * eps);
        let err = (fd - an).abs();
        assert!(
            err <= 1e-4 * fd.abs().max(an.abs()) || err <= 1e-7,
            "{name}: fd {fd:e} adjoint {an:e}"
        );
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        let c = case();
        let g = rollout_backward(&c.conds, &c.speed, &c.spec, &c.weights).unwrap();
        for f in 0..4 {
            for i in [0, 3, 11, 23] {
                check(&format!("initial[{f}][{i}]"), g.initial[f][i], |c, e| {
                    c.conds.initial.fields[f][i] += e
                });
            }
        }
        for i in [0, 1, 7, 22, 23] {
            check(&format!("f_z[{i}]"), g.f_z[i], |c, e| {
                c.conds.f_z.values[i] += e
            });
            check(&format!("sigma_z[{i}]"), g.sigma_z[i], |c, e| {
                c.conds.sigma_z.values[i] += e
            });
        }
        for k in 0..3 {
            for i in [0, 5, 12, 23] {
                check(&format!("frame[{k}][{i}]"), g.c_frames[k][i], |c, e| {
                    c.speed.c_frames[k].values[i] += e
                });
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_gradient() {
        let c = case();
        let g = rollout_backward(&c.conds, &c.speed, &c.spec, &SigmaGrads::default()).unwrap();
        assert!(g.initial.iter().flatten().all(|&v| v == 0.0));
        assert!(g.sigma_z.iter().chain(&g.f_z).all(|&v| v == 0.0));
    }
}
