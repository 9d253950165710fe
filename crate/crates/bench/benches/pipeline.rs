use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fairlex::classifier::train;
use fairlex::explainer::{aggregate_global, explain_documents, ExplainerMethod};
use fairlex::moderator::{moderate, MitigationPlan, Resources, Strategy};
use fairlex::synth;
use fairlex::TrainConfig;
use fairlex_bench::{protected_words, workload};

fn bench_train(c: &mut Criterion) {
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    for size in [1000, 4000] {
        let w = workload(size);
        group.bench_with_input(BenchmarkId::from_parameter(size), &w, |b, w| {
            b.iter(|| train(&w.corpus.train, &TrainConfig::default()).unwrap())
        });
    }
    group.finish();
}

fn bench_explain(c: &mut Criterion) {
    let w = workload(4000);
    let docs: Vec<_> = w.corpus.test.documents.iter().take(500).collect();
    let mut group = c.benchmark_group("explain-500-docs");
    for method in [ExplainerMethod::LinearExact, ExplainerMethod::Occlusion] {
        group.bench_function(format!("{method:?}"), |b| {
            b.iter(|| explain_documents(&w.model, &docs, synth::POSITIVE, method).unwrap())
        });
    }
    group.finish();
}

fn bench_aggregate(c: &mut Criterion) {
    let w = workload(4000);
    c.bench_function("aggregate_global", |b| b.iter(|| aggregate_global(&w.records).unwrap()));
}

fn bench_moderate(c: &mut Criterion) {
    let w = workload(4000);
    let resources = Resources {
        embeddings: Some(&w.embeddings),
        hypernyms: None,
    };
    let mut group = c.benchmark_group("moderate");
    for strategy in [Strategy::Ms1, Strategy::Ms2, Strategy::Ms3, Strategy::Ms4] {
        let plan = MitigationPlan::new(strategy, protected_words());
        group.bench_function(strategy.to_string(), |b| {
            b.iter(|| moderate(&w.corpus.train, &plan, resources).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_train, bench_explain, bench_aggregate, bench_moderate);
criterion_main!(benches);
