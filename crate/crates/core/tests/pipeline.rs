use std::collections::BTreeSet;
use std::path::Path;
use std::sync::{Arc, Mutex};

use fairlex::classifier::evaluate;
use fairlex::corpus::{load_corpus, save_corpus};
use fairlex::identifier::{write_annotations_tsv, Annotation, AnnotationSource, Annotator};
use fairlex::moderator::{MitigationPlan, Strategy};
use fairlex::pipeline::{run_measurement, run_mitigation, IdentifierBackend, Pipeline, PipelineConfig};
use fairlex::synth::{self, SynthConfig};
use fairlex::{LinearModel, ProtectedCategory, Result};

fn small_corpus(dir: &Path) -> synth::SynthCorpus {
    let corpus = synth::generate(&SynthConfig {
        train_size: 1500,
        test_size: 600,
        noise_vocabulary: 400,
        ..SynthConfig::default()
    })
    .unwrap();
    save_corpus(&corpus.train, dir.join("train.jsonl")).unwrap();
    save_corpus(&corpus.test, dir.join("test.jsonl")).unwrap();
    corpus
}

fn config(dir: &Path, out: &str, strategy: Option<Strategy>) -> PipelineConfig {
    let text = format!(
        "training_corpus = \"train.jsonl\"\nunlabeled_corpus = \"test.jsonl\"\ntarget_class = \"toxic\"\noutput_dir = \"{out}\"\n\n[explainer]\ntop_k = 60\n{}",
        strategy.map_or(String::new(), |s| format!("\n[plan]\nstrategy = \"{s}\"\n"))
    );
    let path = dir.join(format!("{out}.toml"));
    std::fs::write(&path, text).unwrap();
    PipelineConfig::load(&path).unwrap()
}

#[test]
fn measurement_metrics_match_direct_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    let c = config(dir.path(), "m", None);
    let m = run_measurement(&c).unwrap();
    let model = LinearModel::load(dir.path().join("m/original_model.json")).unwrap();
    let test = load_corpus(dir.path().join("test.jsonl")).unwrap();
    assert_eq!(m.metrics.as_ref(), Some(&evaluate(&model, &test, 0.5).unwrap()));
    assert_eq!(m.fairness.top_n, 60);
    assert!(m.fairness.protected_count >= 5, "{:?}", m.protected_words);
    for file in ["report.json", "report.txt", "timings.json", "original_ranking.csv", "original_annotations.tsv"] {
        assert!(dir.path().join("m").join(file).exists(), "{file}");
    }
}

#[test]
fn mitigation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    let a = run_mitigation(&config(dir.path(), "a", Some(Strategy::Ms2))).unwrap();
    let b = run_mitigation(&config(dir.path(), "b", Some(Strategy::Ms2))).unwrap();
    assert_eq!(a, b);
    let read = |d: &str| std::fs::read(dir.path().join(d).join("report.json")).unwrap();
    assert_eq!(read("a"), read("b"));
    // words outside the original top-n were never annotated, so a few may rise
    assert!(a.mitigated.fairness.protected_count < a.original.fairness.protected_count / 2);
    assert!(a.original.protected_words.iter().all(|w| !a.mitigated.top_words.contains(w)));
    assert!(a.delta.tokens_removed > 0);
}

#[test]
fn empty_dictionary_leaves_training_data_alone() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    std::fs::write(dir.path().join("empty.tsv"), "").unwrap();
    let mut c = config(dir.path(), "e", Some(Strategy::Ms1));
    c.identifier.dictionary = Some(dir.path().join("empty.tsv"));
    let report = run_mitigation(&c).unwrap();
    assert_eq!(report.rounds, 0);
    assert_eq!(report.delta.document_change(), 0);
    assert_eq!(report.original, report.mitigated);
    let mitigated = load_corpus(dir.path().join("e/mitigated_train.jsonl")).unwrap();
    assert_eq!(mitigated.len(), corpus.train.len());
}

#[test]
fn file_annotations_and_category_scope() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    let annotation = |word: &str, category| Annotation {
        word: word.into(),
        category: Some(category),
        reliability: 100,
        explanation: String::new(),
        source: AnnotationSource::Expert,
        tie: false,
    };
    let religious = ["muslim", "jewish", "christian", "atheist"];
    let annotations: Vec<Annotation> = synth::PLANTED_PROTECTED
        .iter()
        .map(|w| {
            let category = if religious.contains(w) { ProtectedCategory::ReligionBelief } else { ProtectedCategory::Race };
            annotation(w, category)
        })
        .collect();
    write_annotations_tsv(dir.path().join("ann.tsv"), &annotations).unwrap();
    let mut c = config(dir.path(), "f", Some(Strategy::Ms2));
    c.identifier.backend = IdentifierBackend::File;
    c.identifier.annotations = Some(dir.path().join("ann.tsv"));
    c.plan.as_mut().unwrap().category_scope = Some([ProtectedCategory::ReligionBelief].into());
    let report = run_mitigation(&c).unwrap();
    let mitigated = load_corpus(dir.path().join("f/mitigated_train.jsonl")).unwrap();
    let count = |w: &str| mitigated.documents.iter().filter(|d| d.tokens.iter().any(|t| t == w)).count();
    let (scoped, other): (Vec<&String>, Vec<&String>) =
        report.original.protected_words.iter().partition(|w| religious.contains(&w.as_str()));
    assert!(!scoped.is_empty() && !other.is_empty());
    for w in scoped {
        assert_eq!(count(w), 0, "{w}");
        assert!(!report.mitigated.protected_words.contains(w));
    }
    for w in other {
        assert!(count(w) > 0, "{w}");
    }
}

/// Annotates every word it is asked about and records the calls.
struct Counting(Arc<Mutex<Vec<String>>>);

impl Annotator for Counting {
    fn annotate(&self, words: &[String]) -> Result<Vec<Annotation>> {
        self.0.lock().unwrap().extend(words.iter().cloned());
        Ok(words
            .iter()
            .map(|w| Annotation {
                word: w.clone(),
                category: synth::PLANTED_PROTECTED.contains(&w.as_str()).then_some(ProtectedCategory::Race),
                reliability: 90,
                explanation: String::new(),
                source: AnnotationSource::Llm,
                tie: false,
            })
            .collect())
    }
}

#[test]
fn words_are_annotated_once_across_rounds() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    let mut c = config(dir.path(), "r", Some(Strategy::Ms5));
    let lexicon: String = synth::PLANTED_PROTECTED.iter().map(|w| format!("{w}\tperson\n")).collect();
    std::fs::write(dir.path().join("hyp.tsv"), lexicon).unwrap();
    c.hypernyms = Some(dir.path().join("hyp.tsv"));
    c.rounds = 2;
    let calls = Arc::new(Mutex::new(Vec::new()));
    let mut p = Pipeline::with_annotator(c, Box::new(Counting(calls.clone()))).unwrap();
    let report = p.mitigate().unwrap();
    // a second round only runs on words that rose into the top-n
    assert!((1..=2).contains(&report.rounds));
    assert!(report.mitigated.fairness.protected_count < report.original.fairness.protected_count);
    let seen = calls.lock().unwrap();
    let unique: BTreeSet<&String> = seen.iter().collect();
    assert_eq!(unique.len(), seen.len());
    assert!(report.delta.tokens_replaced > 0);
}

#[test]
fn plan_validation() {
    assert!(MitigationPlan::new(Strategy::Ms3, Vec::new()).validate().is_err());
}
