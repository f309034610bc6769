use criterion::{criterion_group, criterion_main, Criterion};
use lyacert_bench::{oscillator_raw, oscillator_training_data};
use lyacert_core::{batch_grad, certify, differentiate, resample, train};
use lyacert_core::{CertifyConfig, LearnerParams, Mode, TrainConfig};
use std::hint::black_box;

fn bench_preprocess(c: &mut Criterion) {
    let raw = oscillator_raw(0.05);
    c.bench_function("resample_and_differentiate_3k_samples", |b| {
        b.iter(|| {
            let r = resample(black_box(&raw), 0.1).unwrap();
            differentiate(&r, 0.1).unwrap()
        })
    });
}

fn bench_gradient(c: &mut Criterion) {
    let traj = oscillator_training_data(0.05);
    let cfg = TrainConfig::default();
    let constant = LearnerParams::init(Mode::Constant, 2, &[], 1).unwrap();
    c.bench_function("batch_grad_constant_299_samples", |b| {
        b.iter(|| batch_grad(black_box(&constant), black_box(&traj), &cfg).unwrap())
    });
    let mlp = LearnerParams::init(Mode::Mlp, 2, &[16], 1).unwrap();
    c.bench_function("batch_grad_mlp16_299_samples", |b| {
        b.iter(|| batch_grad(black_box(&mlp), black_box(&traj), &cfg).unwrap())
    });
}

fn bench_training(c: &mut Criterion) {
    let traj = oscillator_training_data(0.0);
    let cfg = TrainConfig {
        epochs: 100,
        tol_loss: 0.0,
        ..TrainConfig::default()
    };
    c.bench_function("train_constant_100_epochs", |b| {
        b.iter(|| train(black_box(&traj), &cfg).unwrap())
    });
}

fn bench_certify(c: &mut Criterion) {
    let raw = oscillator_raw(0.0);
    let cfg = CertifyConfig {
        dt: 0.1,
        ..CertifyConfig::default()
    };
    c.bench_function("certify_noiseless_oscillator", |b| {
        b.iter(|| certify(black_box(&raw), &cfg).unwrap())
    });
}

criterion_group!(
    benches,
    bench_preprocess,
    bench_gradient,
    bench_training,
    bench_certify
);
criterion_main!(benches);
