use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::{DMatrix, Vector4};

use piezoleg::estimator::{augment, build_augmented_system, compute_kalman_gain, kalman_update};
use piezoleg::gait::GaitParams;
use piezoleg::harness::{calibrate, identify, Environment, ExperimentConfig, Pipeline, TrialSpec};
use piezoleg::plant::{BodyParams, Robot, SurfaceModel, TransmissionParams, LEGS};
use piezoleg::{solve_dare, DareOptions, DareProblem};

fn dare(c: &mut Criterion) {
    let n = 6;
    let a = DMatrix::from_fn(n, n, |i, j| if i == j { 0.95 } else { 0.05 * ((i + 2 * j) as f64).sin() });
    let b = DMatrix::from_fn(n, 2, |i, j| ((i + j) as f64).cos());
    let p = DareProblem::new(a, b, DMatrix::identity(n, n), DMatrix::identity(2, 2) * 0.1).unwrap();
    c.bench_function("solve_dare_6x6", |bench| {
        bench.iter(|| solve_dare(black_box(&p), DareOptions::default()).unwrap())
    });
}

fn estimator(c: &mut Criterion) {
    let cfg = ExperimentConfig::new(1);
    let cal = calibrate(&cfg).unwrap();
    let model = identify(&cfg).unwrap();
    let sys = build_augmented_system(
        &model.process,
        &cal.measurement_model(0, 0).unwrap(),
        &cal.measurement_model(0, 1).unwrap(),
    )
    .unwrap();
    c.bench_function("kalman_gain", |bench| bench.iter(|| compute_kalman_gain(black_box(&sys)).unwrap()));
    let gain = compute_kalman_gain(&sys).unwrap();
    let x = augment(&Vector4::new(0.01, 0.5, -0.02, 0.1));
    let u = Vector4::new(10.0, -5.0, 9.0, -4.0);
    let y = Vector4::new(1.0, 2.0, 0.5, 1.5);
    c.bench_function("kalman_update", |bench| {
        bench.iter(|| kalman_update(black_box(&x), &sys, &gain.k, &u, &u, black_box(&y)).unwrap())
    });
}

fn plant(c: &mut Criterion) {
    let robot = Robot::new(BodyParams::default(), TransmissionParams::default());
    let surface = SurfaceModel::default();
    let state = robot.rest_state(&surface);
    let u = [[40.0, -20.0]; LEGS];
    c.bench_function("robot_step", |bench| {
        bench.iter(|| robot.step(black_box(&state), &u, Some(&surface), 1.0, 4e-4).unwrap())
    });
}

fn trial(c: &mut Criterion) {
    let cfg = ExperimentConfig::new(1);
    let cal = calibrate(&cfg).unwrap();
    let model = identify(&cfg).unwrap();
    let p = Pipeline::new(cfg, cal, model).unwrap();
    let spec = TrialSpec::closed_loop(0, GaitParams::trot(30.0, 60.0, 10.0), Environment::Ground);
    let mut group = c.benchmark_group("trial");
    group.sample_size(10);
    group.bench_function("closed_loop_trot_30hz", |bench| bench.iter(|| p.run_trial(black_box(&spec)).unwrap()));
    group.finish();
}

criterion_group!(benches, dare, estimator, plant, trial);
criterion_main!(benches);
