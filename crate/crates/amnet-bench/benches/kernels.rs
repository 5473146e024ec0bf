//! Hot numeric kernels in isolation, at the geometries the tracker hits.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use amnet_bench::{rand_input, rand_tensor};
use amnet_core::ops::{avg_pool2d, bilinear_resize, conv2d, xcorr, ConvSpec, PoolSpec};

fn bench_conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d");

    let input = rand_input(3, 192, 192, 1);
    let spec = ConvSpec::same(3, 6, 5, 1);
    let w = rand_tensor(spec.weight_dims(), 2);
    let b = vec![0.01f32; 6];
    g.bench_function("5x5 3->6 @192", |bench| {
        bench.iter(|| conv2d(black_box(&input), &w, Some(&b), &spec).unwrap())
    });

    let input = rand_input(12, 48, 48, 3);
    let spec = ConvSpec::same(12, 24, 3, 3);
    let w = rand_tensor(spec.weight_dims(), 4);
    let b = vec![0.01f32; 24];
    g.bench_function("3x3 d3 12->24 @48", |bench| {
        bench.iter(|| conv2d(black_box(&input), &w, Some(&b), &spec).unwrap())
    });

    g.finish();
}

fn bench_xcorr(c: &mut Criterion) {
    let mut g = c.benchmark_group("xcorr");

    let roi = rand_input(42, 48, 48, 5);
    let tmpl = rand_input(42, 16, 16, 6);
    g.bench_function("42ch 48x48 / 16x16", |bench| {
        bench.iter(|| xcorr(black_box(&roi), &tmpl).unwrap())
    });

    let roi = rand_input(42, 192, 192, 7);
    let tmpl = rand_input(42, 64, 64, 8);
    g.sample_size(10);
    g.bench_function("42ch 192x192 / 64x64", |bench| {
        bench.iter(|| xcorr(black_box(&roi), &tmpl).unwrap())
    });

    g.finish();
}

fn bench_pool_resize(c: &mut Criterion) {
    let mut g = c.benchmark_group("pool+resize");

    let input = rand_input(3, 192, 192, 9);
    let spec = PoolSpec::halving(7);
    g.bench_function("avg halving k7 @192", |bench| {
        bench.iter(|| avg_pool2d(black_box(&input), &spec).unwrap())
    });

    let input = rand_input(1, 129, 129, 10);
    g.bench_function("bilinear 129->192", |bench| {
        bench.iter(|| bilinear_resize(black_box(&input), 192, 192).unwrap())
    });

    g.finish();
}

criterion_group!(kernels, bench_conv, bench_xcorr, bench_pool_resize);
criterion_main!(kernels);
