//! Parallel vs sequential kernel comparison.

use criterion::{criterion_group, criterion_main, Criterion};
use tgan3d::autodiff::kernels::{conv_forward, conv_transpose_forward, ConvGeom};
use tgan3d::prng::Prng;

fn bench_conv3d(c: &mut Criterion) {
    let mut prng = Prng::new(1);
    let geom = ConvGeom::conv(4, 8, 16, [8, 16, 16], [4, 4, 4], 2, [1, 1, 1]).unwrap();
    let input: Vec<f64> = (0..4 * 8 * geom.in_total()).map(|_| prng.normal()).collect();
    let weight: Vec<f64> = (0..16 * 8 * geom.k_total()).map(|_| prng.normal()).collect();
    let mut group = c.benchmark_group("conv3d_forward");
    group.bench_function("sequential", |b| {
        b.iter(|| conv_forward(&input, &weight, &geom, false))
    });
    #[cfg(feature = "parallel")]
    group.bench_function("parallel", |b| {
        b.iter(|| conv_forward(&input, &weight, &geom, true))
    });
    group.finish();
}

fn bench_conv_transpose3d(c: &mut Criterion) {
    let mut prng = Prng::new(2);
    let geom =
        ConvGeom::conv_transpose(4, 16, 8, [4, 8, 8], [4, 4, 4], 2, [1, 1, 1]).unwrap();
    let input: Vec<f64> = (0..4 * 16 * geom.in_total()).map(|_| prng.normal()).collect();
    let weight: Vec<f64> = (0..16 * 8 * geom.k_total()).map(|_| prng.normal()).collect();
    let mut group = c.benchmark_group("conv_transpose3d_forward");
    group.bench_function("sequential", |b| {
        b.iter(|| conv_transpose_forward(&input, &weight, &geom, false))
    });
    #[cfg(feature = "parallel")]
    group.bench_function("parallel", |b| {
        b.iter(|| conv_transpose_forward(&input, &weight, &geom, true))
    });
    group.finish();
}

fn bench_conv2d(c: &mut Criterion) {
    // 2-D case runs through the same kernels with a dummy leading axis
    let mut prng = Prng::new(3);
    let geom = ConvGeom::conv(8, 8, 16, [1, 32, 32], [1, 4, 4], 2, [0, 1, 1]).unwrap();
    let input: Vec<f64> = (0..8 * 8 * geom.in_total()).map(|_| prng.normal()).collect();
    let weight: Vec<f64> = (0..16 * 8 * geom.k_total()).map(|_| prng.normal()).collect();
    let mut group = c.benchmark_group("conv2d_forward");
    group.bench_function("sequential", |b| {
        b.iter(|| conv_forward(&input, &weight, &geom, false))
    });
    #[cfg(feature = "parallel")]
    group.bench_function("parallel", |b| {
        b.iter(|| conv_forward(&input, &weight, &geom, true))
    });
    group.finish();
}

criterion_group!(benches, bench_conv3d, bench_conv_transpose3d, bench_conv2d);
criterion_main!(benches);
