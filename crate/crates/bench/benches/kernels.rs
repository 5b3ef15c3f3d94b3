use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use slowfast::measure::{gaussian_cloud, w2_1d, w2_exact_small};
use slowfast::model::{linear_benchmark, LinearBenchmarkParams};
use slowfast::noise::{CounterNoise, NoiseRole, NoiseSource};
use slowfast::solvers::{slowfast_step_bound, SlowFastEnsemble};

fn noise(c: &mut Criterion) {
    let source = CounterNoise::new(1);
    let mut out = vec![0.0; 1024];
    c.bench_function("fill_normals_1024", |b| {
        let mut step = 0u64;
        b.iter(|| {
            step += 1;
            source.fill_normals(NoiseRole::Fast, 0, 0, step, &mut out);
            black_box(out[0])
        })
    });
}

fn slowfast_step(c: &mut Criterion) {
    let model = linear_benchmark(LinearBenchmarkParams::default()).unwrap();
    let source = CounterNoise::new(2);
    let eps = 0.5f64.powi(6);
    let h = slowfast_step_bound(eps, model.beta);
    let mut group = c.benchmark_group("slowfast_step");
    for n in [256usize, 2000] {
        let mut ens = SlowFastEnsemble::new(&model, eps, &[1.0], &[1.0], n, 0).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| ens.step(&model, h, &source).unwrap()));
    }
    group.finish();
}

fn wasserstein(c: &mut Criterion) {
    let a = gaussian_cloud(2000, 1, 3, 0).unwrap();
    let b = gaussian_cloud(2000, 1, 3, 1).unwrap();
    c.bench_function("w2_1d_2000", |bench| bench.iter(|| w2_1d(black_box(&a), black_box(&b)).unwrap()));
    let a = gaussian_cloud(8, 2, 4, 0).unwrap();
    let b = gaussian_cloud(8, 2, 4, 1).unwrap();
    c.bench_function("w2_exact_small_8", |bench| bench.iter(|| w2_exact_small(black_box(&a), black_box(&b)).unwrap()));
}

criterion_group!(benches, noise, slowfast_step, wasserstein);
criterion_main!(benches);
