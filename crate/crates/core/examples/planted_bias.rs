//! Generates the planted-bias corpus, runs one mitigation and prints the
//! report.
//!
//!     cargo run --release -p fairlex --example planted_bias -- [MS1..MS5] [out-dir] [p(protected|pos)] [p(protected|neg)]

use std::path::PathBuf;

use fairlex::corpus::save_corpus;
use fairlex::moderator::{MitigationPlan, Strategy};
use fairlex::pipeline::{run_mitigation, PipelineConfig};
use fairlex::synth::{self, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let strategy: Strategy = args.next().as_deref().unwrap_or("MS2").parse()?;
    let dir = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("fairlex-planted"));
    std::fs::create_dir_all(&dir)?;

    let mut synth_config = SynthConfig::default();
    if let Some(rate) = args.next() {
        synth_config.protected_in_positive = rate.parse()?;
    }
    if let Some(rate) = args.next() {
        synth_config.protected_in_negative = rate.parse()?;
    }
    let corpus = synth::generate(&synth_config)?;
    save_corpus(&corpus.train, dir.join("train.jsonl"))?;
    save_corpus(&corpus.test, dir.join("test.jsonl"))?;
    let mut embeddings_path = None;
    if strategy.needs_embeddings() {
        let table = synth::embeddings(&corpus, 16, 1)?;
        let path = dir.join("embeddings.txt");
        let mut text = String::new();
        for w in table.words() {
            let v: Vec<String> = table.vector(w).unwrap().iter().map(|x| x.to_string()).collect();
            text.push_str(&format!("{w} {}\n", v.join(" ")));
        }
        std::fs::write(&path, text)?;
        embeddings_path = Some(path);
    }
    let mut hypernyms_path = None;
    if strategy.needs_hypernyms() {
        let path = dir.join("hypernyms.tsv");
        let rows: Vec<String> = corpus.protected.iter().map(|w| format!("{w}\tperson\n")).collect();
        std::fs::write(&path, rows.concat())?;
        hypernyms_path = Some(path);
    }

    let config = PipelineConfig {
        training_corpus: dir.join("train.jsonl"),
        unlabeled_corpus: dir.join("test.jsonl"),
        target_class: synth::POSITIVE.into(),
        output_dir: dir.join(format!("run-{strategy}")),
        model: None,
        predictions: None,
        threshold: 0.5,
        explainer: fairlex::pipeline::ExplainerSettings {
            top_k: Some(100),
            ..Default::default()
        },
        identifier: Default::default(),
        plan: Some(MitigationPlan::new(strategy, Vec::new())),
        embeddings: embeddings_path,
        hypernyms: hypernyms_path,
        train: Default::default(),
        rounds: 1,
    };
    let report = run_mitigation(&config)?;
    print!("{}", report.render_text());
    println!("artifacts in {}", config.output_dir.display());
    Ok(())
}
