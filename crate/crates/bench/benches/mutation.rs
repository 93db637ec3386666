use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use promptsens::mutator::{run_mutation_loop, LoopConfig, SyntheticMutator};
use promptsens::store::{RunConfig, RunStore};
use promptsens::validation::StubEmbedder;
use promptsens::MetaTemplate;

const SEED: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/meta/cruxeval_input.json");

fn seed() -> MetaTemplate {
    MetaTemplate::parse(&std::fs::read_to_string(SEED).unwrap()).unwrap()
}

fn bench_loop(c: &mut Criterion) {
    let seed = seed();
    let embedder = StubEmbedder::default();
    let cfg = LoopConfig::default();
    let mut group = c.benchmark_group("mutation_loop");
    group.sample_size(10);
    group.bench_function("threshold_100", |b| {
        b.iter(|| {
            let mut client = SyntheticMutator::new(1);
            run_mutation_loop(black_box(seed.clone()), 100, &mut client, &embedder, &cfg).unwrap()
        })
    });
    group.finish();
}

fn bench_store(c: &mut Criterion) {
    let lines: Vec<String> = (0..100)
        .map(|i| format!("{{\"i\":{i},\"text\":\"{}\"}}", "x".repeat(200)))
        .collect();
    let mut group = c.benchmark_group("store");
    group.sample_size(20);
    group.bench_function("append_100_lines", |b| {
        let tmp = tempfile::tempdir().unwrap();
        let instances = tmp.path().join("instances.jsonl");
        std::fs::write(&instances, "").unwrap();
        let cfg = RunConfig::new("bench", SEED.into(), instances, vec!["m".into()], 2);
        let mut store = RunStore::create(&tmp.path().join("run"), "bench", &cfg).unwrap();
        b.iter(|| store.append_lines("log.jsonl", black_box(&lines)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_loop, bench_store);
criterion_main!(benches);
