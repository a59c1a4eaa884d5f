use std::hint::black_box;

use arml::exact::exact_minimal_perturbation;
use arml::trainer::{neighbor_lists, objective_and_gradient, sample_triplets, LossFn};
use arml::{gcd_qp, knn_lower_bound, Screening};
use arml_bench::fixture;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn predict(c: &mut Criterion) {
    let mut group = c.benchmark_group("knn_predict");
    for n in [500, 2000] {
        let (model, test) = fixture(n, 60, 11);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| model.predict(black_box(test.row(0)), None).unwrap())
        });
    }
    group.finish();
}

fn lower_bound(c: &mut Criterion) {
    let (model, test) = fixture(500, 60, 11);
    c.bench_function("knn_lower_bound/500x60/K=11", |b| {
        b.iter(|| knn_lower_bound(&model, black_box(test.row(0)), test.label(0), None).unwrap())
    });
}

fn exact(c: &mut Criterion) {
    let (model, test) = fixture(500, 20, 1);
    // a correctly classified instance, so the solver actually runs
    let i = (0..test.len())
        .find(|&i| model.predict(test.row(i), None).unwrap() == test.label(i))
        .expect("fixture has a correct prediction");
    let mut group = c.benchmark_group("exact_1nn/500x20");
    for (name, screening) in [("screening", Screening::Enabled), ("no_screening", Screening::Disabled)] {
        group.bench_function(name, |b| {
            b.iter(|| {
                exact_minimal_perturbation(&model, black_box(test.row(i)), test.label(i), None, screening).unwrap()
            })
        });
    }
    group.finish();
}

fn qp(c: &mut Criterion) {
    let s = 20;
    let b = Array2::from_shape_fn((s, 2 * s), |(i, j)| ((i * 31 + j * 17) % 13) as f64 - 6.0);
    let p = b.dot(&b.t());
    let q: Vec<f64> = (0..s).map(|i| (i as f64 * 0.7).sin()).collect();
    c.bench_function("gcd_qp/20", |bch| {
        bch.iter(|| gcd_qp(black_box(&p), &q, 100_000, 1e-9).unwrap())
    });
}

fn gradient(c: &mut Criterion) {
    let (model, _) = fixture(1000, 60, 1);
    let data = model.train();
    let lists = neighbor_lists(data, model.metric(), 10).unwrap();
    let (triplets, _) = sample_triplets(&lists, &mut ChaCha8Rng::seed_from_u64(0));
    let g = model.metric().factor().clone();
    c.bench_function("objective_and_gradient/1000x60", |b| {
        b.iter(|| objective_and_gradient(data, black_box(&g), LossFn::Negative, &triplets).unwrap())
    });
    c.bench_function("neighbor_lists/1000x60", |b| {
        b.iter(|| neighbor_lists(data, black_box(model.metric()), 10).unwrap())
    });
}

criterion_group!(benches, predict, lower_bound, exact, qp, gradient);
criterion_main!(benches);
