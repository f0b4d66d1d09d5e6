use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;

use regime_bench::imputers::{impute, Method};
use regime_bench::mask::{generate_bits, generate_mask};
use regime_bench::metrics::{dtw_distance, evaluate};
use regime_bench::missingness::{fit_histogram, DurationHistogram, FitConfig, MixtureParams};
use regime_bench::protocols::find_stable_windows;
use regime_bench::rng::rng_from_seed;
use regime_bench::router::adaptive_impute;
use regime_bench::synth::{generate, reference_model, SynthConfig};
use regime_bench::StabilityCriteria;

fn dtw(c: &mut Criterion) {
    let mut group = c.benchmark_group("dtw");
    let mut rng = rng_from_seed(1);
    for n in [12, 48, 288] {
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(40.0..300.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(40.0..300.0)).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| dtw_distance(black_box(&a), black_box(&b)).unwrap())
        });
    }
    group.finish();
}

fn mixture_fit(c: &mut Criterion) {
    let hist = DurationHistogram::from_density(&MixtureParams {
        a: 0.02,
        k: 0.05,
        b: 0.01,
        mu: 120.0,
        sigma: 15.0,
        gamma: 0.0005,
    });
    let cfg = FitConfig::default();
    c.bench_function("mixture_fit", |b| b.iter(|| fit_histogram(black_box(&hist), &cfg).unwrap()));
}

fn masks(c: &mut Criterion) {
    let model = reference_model();
    let mut rng = rng_from_seed(2);
    c.bench_function("generate_day", |b| b.iter(|| generate_bits(288, 0, black_box(&model), &mut rng)));
    c.bench_function("generate_30_days", |b| b.iter(|| generate_mask(288 * 30, 0, black_box(&model), 3)));
}

fn imputation(c: &mut Criterion) {
    let out = generate(&SynthConfig {
        days: 30,
        noise_std: 1.0,
        ..SynthConfig::default()
    })
    .unwrap();
    let ep = &out.episode;
    let truth = ep.complete_values().unwrap();
    let mask = generate_mask(ep.len(), 0, &reference_model(), 4);
    let crit = StabilityCriteria::default();

    let mut group = c.benchmark_group("30_days");
    for m in Method::ALL {
        group.bench_function(m.name(), |b| b.iter(|| impute(m, black_box(ep), &mask).unwrap()));
    }
    let lerp = impute(Method::Lerp, ep, &mask).unwrap();
    group.bench_function("evaluate", |b| b.iter(|| evaluate(&truth, black_box(&lerp.values), mask.bits()).unwrap()));
    group.bench_function("stable_windows", |b| b.iter(|| find_stable_windows(black_box(ep), &crit)));
    let mean = impute(Method::Mean, ep, &mask).unwrap();
    group.bench_function("adaptive", |b| {
        b.iter(|| adaptive_impute(black_box(ep), &mask, Some(&mean), &crit, 30).unwrap())
    });
    group.finish();
}

criterion_group!(benches, dtw, mixture_fit, masks, imputation);
criterion_main!(benches);
