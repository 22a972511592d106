use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::Vector3;

use pegsim_core::geometry::{manipulation_frame, InsertionParams};
use pegsim_core::hand::{fit_inverse_model, generate_dataset, DatasetOptions, FitOptions, Hand};
use pegsim_core::harness::{builtin_faces, Experiment};
use pegsim_core::{ExperimentConfig, Pose, Twist};

fn pose_math(c: &mut Criterion) {
    let xi = Twist::new(Vector3::new(0.3, -0.2, 0.7), Vector3::new(12.0, -4.0, 30.0));
    let p = Pose::exp(&xi);
    let q = Pose::exp(&Twist::new(Vector3::new(-0.1, 0.5, 0.2), Vector3::new(1.0, 2.0, 3.0)));
    c.bench_function("pose_exp", |b| b.iter(|| Pose::exp(black_box(&xi))));
    c.bench_function("pose_log", |b| b.iter(|| black_box(&p).log().unwrap()));
    c.bench_function("pose_compose", |b| b.iter(|| black_box(&p).compose(black_box(&q))));
}

fn geometry(c: &mut Criterion) {
    let (_, pear) = builtin_faces().into_iter().find(|(n, _)| *n == "pear").unwrap();
    c.bench_function("manipulation_frame_pear", |b| b.iter(|| manipulation_frame(black_box(&pear)).unwrap()));
    let exp = Experiment::new(ExperimentConfig::default()).unwrap();
    let opts = ExperimentConfig::default().controller.insertion_options();
    c.bench_function("insertion_params", |b| b.iter(|| InsertionParams::derive(&exp.peg, &exp.hole, &opts).unwrap()));
}

fn hand(c: &mut Criterion) {
    let hand = Hand::default();
    let state = hand.state_at(&[[0.6, 0.7]; 3]).unwrap();
    c.bench_function("hand_step", |b| b.iter(|| hand.step(black_box(&state), &[0.02, -0.01, 0.0], 1.0 / 30.0).unwrap()));

    let data = generate_dataset(&hand, &DatasetOptions { n_transitions: 2000, n_triangles: 4, ..DatasetOptions::default() }).unwrap();
    let model = fit_inverse_model(&data, &FitOptions { epochs: 5, ..FitOptions::default() }).unwrap();
    c.bench_function("model_predict", |b| b.iter(|| model.predict(black_box(&[0.5, -0.3]))));
}

fn trial(c: &mut Criterion) {
    let exp = Experiment::new(ExperimentConfig::default()).unwrap();
    let mut g = c.benchmark_group("trial");
    g.sample_size(10);
    g.bench_function("full_compliant", |b| b.iter(|| exp.run_trial(black_box(0), false)));
    g.finish();
}

criterion_group!(benches, pose_math, geometry, hand, trial);
criterion_main!(benches);
