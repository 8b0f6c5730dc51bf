use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use mallows_core::identifiability::{parse_rational, zagier_determinant};
use mallows_core::model::sample_many;
use mallows_core::perm::kendall_tau;
use mallows_core::seed::rng_for;
use mallows_core::{MallowsMixture, MallowsModel, Permutation};

fn rim_sampling(c: &mut Criterion) {
    let mut g = c.benchmark_group("rim_sample");
    for n in [8usize, 16, 64] {
        let m = MallowsModel::new(0.6, Permutation::identity(n)).unwrap();
        let sampler = m.sampler();
        let mut rng = rng_for(1, "bench", 0);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| sampler.sample(&mut rng))
        });
    }
    g.finish();
    let mix = MallowsMixture::single(MallowsModel::new(0.5, Permutation::identity(10)).unwrap());
    c.bench_function("sample_many_100k_n10", |b| {
        b.iter(|| sample_many(black_box(&mix), 100_000, 7))
    });
}

fn vectorize(c: &mut Criterion) {
    let mut g = c.benchmark_group("vectorize");
    g.sample_size(20);
    for n in [5usize, 6, 7, 8] {
        let mix = MallowsMixture::new(
            vec![
                MallowsModel::new(0.3, Permutation::identity(n)).unwrap(),
                MallowsModel::new(0.7, Permutation::identity(n).reversed()).unwrap(),
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &mix, |b, mix| {
            b.iter(|| mix.vectorize().unwrap())
        });
    }
    g.finish();
}

fn bareiss(c: &mut Criterion) {
    let mut g = c.benchmark_group("zagier_determinant");
    g.sample_size(10);
    let phi = parse_rational("1/2").unwrap();
    for n in [3usize, 4] {
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| zagier_determinant(n, &phi).unwrap())
        });
    }
    g.finish();
}

fn kendall(c: &mut Criterion) {
    let mut g = c.benchmark_group("kendall_tau");
    for n in [10usize, 100, 1000] {
        let p = Permutation::identity(n);
        let mut rng = rng_for(2, "bench", n as u64);
        let q = MallowsModel::new(0.9, p.clone())
            .unwrap()
            .sample_rim(&mut rng);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| kendall_tau(black_box(&p), black_box(&q)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, rim_sampling, vectorize, bareiss, kendall);
criterion_main!(benches);
