use std::hint::black_box;

use bless_bench::{fixture_data, fixture_model};
use bless_core::em::{e_step_counts, fit_known_g_counts, EmConfig};
use bless_core::identify::chi2_independence_test;
use bless_core::model::{response_pmf_direct, response_pmf_kr};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn pmf(c: &mut Criterion) {
    let mut group = c.benchmark_group("response_pmf");
    for (k, copies, d) in [(2, 2, 3), (3, 2, 3), (3, 3, 2)] {
        let m = fixture_model(k, copies, d, 1);
        let id = format!("K{k}_p{}_d{d}", k * copies);
        group.bench_with_input(BenchmarkId::new("direct", &id), &m, |b, m| {
            b.iter(|| response_pmf_direct(black_box(m)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("khatri_rao", &id), &m, |b, m| {
            b.iter(|| response_pmf_kr(black_box(m)).unwrap())
        });
    }
    group.finish();
}

fn em(c: &mut Criterion) {
    let m = fixture_model(2, 2, 3, 2);
    let (data, counts) = fixture_data(&m, 10_000, 3);
    c.bench_function("e_step_counts/K2_p4_d3_n1e4", |b| {
        b.iter(|| e_step_counts(black_box(&m), black_box(&counts)).unwrap())
    });
    let config = EmConfig::default().with_restarts(1);
    c.bench_function("fit_known_g/K2_p4_d3_n1e4_1restart", |b| {
        b.iter(|| fit_known_g_counts(black_box(&counts), &m.g, &config).unwrap())
    });
    c.bench_function("chi2_test/K2_p4_d3_n1e4", |b| {
        b.iter(|| chi2_independence_test(black_box(&data), &[0, 2], &[1, 3], 0.05).unwrap())
    });
}

criterion_group!(benches, pmf, em);
criterion_main!(benches);
