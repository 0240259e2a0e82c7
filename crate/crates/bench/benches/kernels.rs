use criterion::{black_box, criterion_group, criterion_main, Criterion};
use wavesurrogate::acoustic_env::{EnvConfig, Environment};
use wavesurrogate::field_grid::{Field1D, Grid1D};
use wavesurrogate::latent_dynamics::{
    rollout, rollout_backward, LatentConditions, LatentSpeedInterp, LatentState, RolloutSpec,
    SigmaGrads, SineBasis,
};
use wavesurrogate::pml::build_ramp;

fn environment(c: &mut Criterion) {
    let cfg = EnvConfig::default();
    let env = Environment::new(cfg, vec![0.6; 4]).unwrap();
    let mut g = c.benchmark_group("environment");
    g.sample_size(10);
    g.bench_function("one action, 128x128, 100 RK4 steps", |b| {
        b.iter_batched(
            || env.clone(),
            |mut e| black_box(e.step_action(&[0.3, -0.2, 0.1, 0.0]).unwrap()),
            criterion::BatchSize::LargeInput,
        )
    });
    g.finish();
}

fn latent_setup(actions: usize) -> (LatentConditions, LatentSpeedInterp, RolloutSpec) {
    let grid = Grid1D::new(1024, 42.4).unwrap();
    let basis = SineBasis::new(grid, 64).unwrap();
    let coeffs: Vec<f64> = (0..64).map(|k| 0.01 * (k as f64).sin()).collect();
    let mut initial = LatentState::zeros(grid, 0.0);
    initial.fields[0] = basis.embed(&coeffs).values;
    let conds = LatentConditions {
        initial,
        f_z: basis.embed(&coeffs),
        sigma_z: build_ramp(grid, 150, 3000.0).unwrap().as_field(),
        omega: 1000.0,
    };
    let frames = (0..=actions)
        .map(|k| Field1D::from_fn(grid, |x| 1531.0 - 200.0 * (x + k as f64).sin().abs()))
        .collect();
    let knots = (0..=actions).map(|k| k as f64 * 1e-3).collect();
    let speed = LatentSpeedInterp::new(frames, knots).unwrap();
    let spec = RolloutSpec {
        horizon_actions: actions,
        steps_per_action: 100,
        dt: 1e-5,
        c_ambient: 1531.0,
    };
    (conds, speed, spec)
}

fn latent(c: &mut Criterion) {
    let (conds, speed, spec) = latent_setup(20);
    let grads = SigmaGrads {
        sc: vec![1.0; spec.n_steps()],
        ..SigmaGrads::default()
    };
    let mut g = c.benchmark_group("latent");
    g.sample_size(10);
    g.bench_function("rollout, 1024 cells, 2000 steps", |b| {
        b.iter(|| black_box(rollout(&conds, &speed, &spec).unwrap()))
    });
    g.bench_function("adjoint, 1024 cells, 2000 steps", |b| {
        b.iter(|| black_box(rollout_backward(&conds, &speed, &spec, &grads).unwrap()))
    });
    g.finish();
}

criterion_group!(benches, environment, latent);
criterion_main!(benches);
