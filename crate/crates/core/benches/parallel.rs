use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use droidlens::features::{ExtractionContext, Family};
use droidlens::fixture::AppModel;
use droidlens::forest::{train_forest_with, TrainConfig};
use droidlens::par::Execution;
use droidlens::pipeline::{extract_many, obfuscate_all, vectorize_all, ObfuscationPlan};
use droidlens::synth::{generate_corpus, Recipe};
use droidlens::vocab::{assemble_matrix, build_vocabulary};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn pipeline(c: &mut Criterion) {
    let corpus = generate_corpus(120, &Recipe::default(), 1, Execution::Parallel);
    let apps: Vec<(String, AppModel)> = corpus.apps.iter().map(|a| (a.app_id.clone(), a.model.clone())).collect();
    let items: Vec<(String, Vec<u8>)> = apps.iter().map(|(id, m)| (id.clone(), m.to_apk().unwrap())).collect();
    let ctx = ExtractionContext::default();
    let raws = extract_many(&items, &ctx, Execution::Parallel).unwrap();
    let vocab = build_vocabulary(raws.iter().map(|r| r.1.as_slice()), "bench", 0.01).unwrap();
    let store = vectorize_all(&raws, &vocab);
    let ids: Vec<&str> = raws.iter().map(|r| r.0.as_str()).collect();
    let labels = corpus.apps.iter().map(|a| a.label).collect();
    let x = assemble_matrix(&ids, &store, &vocab, &Family::ALL, &Default::default(), Some(labels)).unwrap();
    let plan = ObfuscationPlan::full(2);
    let cfg = TrainConfig::default();

    let mut g = c.benchmark_group("extract");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| b.iter(|| extract_many(&items, &ctx, e).unwrap()));
    }
    g.finish();

    let mut g = c.benchmark_group("obfuscate");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| obfuscate_all(&apps[..20], &plan, e).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("train_forest");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| train_forest_with(&x, &cfg, vocab.fingerprint(), e).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, pipeline);
criterion_main!(benches);
