//! Workloads for the criterion benches, built once from the synthetic
//! corpus so every bench measures the same data.

use fairlex::classifier::train;
use fairlex::explainer::{explain_documents, predicted_as, ExplainerMethod};
use fairlex::synth::{self, SynthConfig, SynthCorpus};
use fairlex::{AttributionRecord, EmbeddingTable, LinearModel, TrainConfig};

pub struct Workload {
    pub corpus: SynthCorpus,
    pub model: LinearModel,
    pub records: Vec<AttributionRecord>,
    pub embeddings: EmbeddingTable,
}

/// A corpus of `train_size` training documents (half as many test
/// documents), its trained model, linear attributions over the test
/// documents predicted positive, and 50-dimensional random embeddings.
pub fn workload(train_size: usize) -> Workload {
    let corpus = synth::generate(&SynthConfig {
        train_size,
        test_size: train_size / 2,
        ..SynthConfig::default()
    })
    .expect("valid synthetic config");
    let model = train(&corpus.train, &TrainConfig::default()).expect("training succeeds");
    let explained = predicted_as(&model, &corpus.test, synth::POSITIVE, 0.5);
    let records = explain_documents(&model, &explained, synth::POSITIVE, ExplainerMethod::LinearExact)
        .expect("linear attribution succeeds");
    let embeddings = synth::embeddings(&corpus, 50, 1).expect("embeddings");
    Workload {
        corpus,
        model,
        records,
        embeddings,
    }
}

pub fn protected_words() -> Vec<String> {
    synth::PLANTED_PROTECTED.iter().map(|w| w.to_string()).collect()
}
