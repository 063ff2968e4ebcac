use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use waveletcond::diffusion::train::{datasets, train};
use waveletcond::metrics::ssim;
use waveletcond::ops::conv2d;
use waveletcond::wavelet::{dwt2, dwt2_batched, idwt2};
use waveletcond_bench::{random, step_config};

fn wavelet(c: &mut Criterion) {
    let x = random(&[64, 64], 1);
    c.bench_function("dwt2 64x64", |b| b.iter(|| dwt2(black_box(&x)).unwrap()));
    let s = dwt2(&x).unwrap();
    c.bench_function("idwt2 64x64", |b| b.iter(|| idwt2(black_box(&s)).unwrap()));
    let batch = random(&[16, 16, 8, 8], 2);
    c.bench_function("dwt2 batched 16x16x8x8", |b| b.iter(|| dwt2_batched(black_box(&batch)).unwrap()));
}

fn convolution(c: &mut Criterion) {
    let x = random(&[16, 8, 16, 16], 3);
    let w = random(&[16, 8, 3, 3], 4);
    let bias = random(&[16], 5);
    c.bench_function("conv2d 16x8x16x16 -> 16", |b| b.iter(|| conv2d(black_box(&x), &w, &bias, 1).unwrap()));
}

fn metrics(c: &mut Criterion) {
    let a = random(&[64, 64], 6);
    let b2 = random(&[64, 64], 7);
    c.bench_function("ssim 64x64", |b| b.iter(|| ssim(black_box(&a), &b2, 1.0).unwrap()));
}

fn training(c: &mut Criterion) {
    let cfg = step_config(5);
    let (ds, _) = datasets(&cfg).unwrap();
    let mut group = c.benchmark_group("toy unet");
    group.sample_size(10);
    group.bench_function("5 training steps", |b| b.iter(|| train(black_box(&ds), &cfg).unwrap()));
    group.finish();
}

criterion_group!(benches, wavelet, convolution, metrics, training);
criterion_main!(benches);
