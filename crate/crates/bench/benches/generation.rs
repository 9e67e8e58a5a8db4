use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use relscm_bench::small_schema_config;
use relscm_core::pipeline::{build_schema, relational_run, with_threads};
use relscm_core::relational::generate_relational;

fn schema_sampling(c: &mut Criterion) {
    let cfg = small_schema_config(7, 0);
    c.bench_function("build_schema", |b| b.iter(|| build_schema(black_box(&cfg)).unwrap()));
}

fn relational_rows(c: &mut Criterion) {
    let mut group = c.benchmark_group("generate_relational");
    group.sample_size(10);
    for rows in [1_000usize, 10_000] {
        let cfg = small_schema_config(7, rows);
        let schema = build_schema(&cfg).unwrap();
        let run = relational_run(&cfg);
        group.throughput(Throughput::Elements(rows as u64));
        group.bench_with_input(BenchmarkId::new("1-thread", rows), &rows, |b, _| {
            b.iter(|| with_threads(1, || generate_relational(&schema, &run)).unwrap().unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, schema_sampling, relational_rows);
criterion_main!(benches);
