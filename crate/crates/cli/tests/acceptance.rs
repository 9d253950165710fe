//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so every line is printed even
//! when an earlier criterion fails; the process exits non-zero if any did.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use fairlex::classifier::objective::{Dataset, Objective, Params};
use fairlex::classifier::{evaluate, train, ModelKind};
use fairlex::corpus::{Document, LabeledCorpus};
use fairlex::explainer::{
    ablation_curve, aggregate_global, attribute_linear, attribute_occlusion, explain_documents, predicted_as,
    ExplainerMethod, TokenScore,
};
use fairlex::identifier::{
    cohen_kappa, default_traps, format_llm_reply, majority_vote, parse_llm_reply, trap_filter, TrapBand, TrapVerdict,
    VoteChoice, VoteSheet,
};
use fairlex::lexical::{EmbeddingTable, HypernymLexicon};
use fairlex::moderator::{moderate, MitigationPlan, Resources, Strategy as Ms};
use fairlex::pipeline::{run_mitigation, ExplainerSettings, PipelineConfig};
use fairlex::synth::{self, SynthConfig, PLANTED_PROTECTED};
use fairlex::{AttributionRecord, Error, LinearModel, MitigationReport, ProtectedCategory, TrainConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: impl Into<String>) -> Outcome {
    let detail = detail.into();
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("planted bias is found and removed by MS2 and MS1", planted_bias),
        ("occlusion ranks like exact-linear on unique-word documents", occlusion_equivalence),
        ("global aggregation equals the per-word mean", aggregation),
        ("ablation curve starts at baseline and does not rise", ablation),
        ("mitigation invariants hold on random corpora", mitigation_invariants),
        ("identifier arithmetic", identifier_arithmetic),
        ("two runs with a mocked LLM give identical reports", determinism),
        ("gradients match central differences", gradient_check),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {}. {name} [{secs:.1}s] {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}. {name} [{secs:.1}s] {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn planted_in(words: &[String]) -> usize {
    words.iter().filter(|w| PLANTED_PROTECTED.contains(&w.as_str())).count()
}

fn planted_run(dir: &std::path::Path, strategy: Ms) -> Result<MitigationReport, Error> {
    let config = PipelineConfig {
        training_corpus: dir.join("train.jsonl"),
        unlabeled_corpus: dir.join("test.jsonl"),
        target_class: synth::POSITIVE.into(),
        output_dir: dir.join(format!("run-{strategy}")),
        model: None,
        predictions: None,
        threshold: 0.5,
        explainer: ExplainerSettings {
            top_k: Some(100),
            ..Default::default()
        },
        identifier: Default::default(),
        plan: Some(MitigationPlan::new(strategy, Vec::new())),
        embeddings: None,
        hypernyms: None,
        train: Default::default(),
        rounds: 1,
    };
    run_mitigation(&config)
}

fn planted_bias() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = common::write_synth(dir.path(), &SynthConfig::default());

    let docs: Vec<&Document> = corpus.train.documents.iter().chain(&corpus.test.documents).collect();
    let vocabulary: BTreeSet<&str> = docs.iter().flat_map(|d| d.tokens.iter().map(String::as_str)).collect();
    let mut worst_rate = f64::INFINITY;
    for w in PLANTED_PROTECTED {
        let with: Vec<&&Document> = docs.iter().filter(|d| d.tokens.iter().any(|t| t == w)).collect();
        let pos = with.iter().filter(|d| d.label.as_deref() == Some(synth::POSITIVE)).count();
        worst_rate = worst_rate.min(pos as f64 / with.len().max(1) as f64);
    }
    let shape = format!("docs={} vocab={} min P(pos|protected)={worst_rate:.3}", docs.len(), vocabulary.len());
    if docs.len() < 4000 || vocabulary.len() < 1500 || worst_rate < 0.8 {
        return Err(format!("corpus too weak: {shape}"));
    }

    let mut lines = vec![shape];
    let mut ok = true;
    for strategy in [Ms::Ms2, Ms::Ms1] {
        let start = Instant::now();
        let report = planted_run(dir.path(), strategy).map_err(|e| format!("{strategy}: {e}"))?;
        let elapsed = start.elapsed();
        let before = planted_in(&report.original.top_words);
        let after = planted_in(&report.mitigated.top_words);
        let f1 = |s: &fairlex::pipeline::RunSummary| s.metrics.as_ref().map_or(f64::NAN, |m| m.f1_macro);
        let (f1_before, f1_after) = (f1(&report.original), f1(&report.mitigated));
        let drop = 1.0 - after as f64 / before.max(1) as f64;
        let pass = before >= 16
            && drop >= 0.6
            && (f1_after - f1_before).abs() <= 0.02
            && elapsed < Duration::from_secs(120);
        ok &= pass;
        lines.push(format!(
            "{strategy}: top-100 protected {before}/20 -> {after}/20 (drop {:.0}%), F1 {f1_before:.4} -> {f1_after:.4}, {:.1}s",
            drop * 100.0,
            elapsed.as_secs_f64()
        ));
    }
    check(ok, lines.join("; "))
}

/// Average ranks (1-based), ties sharing their mean rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        for &k in &order[i..=j] {
            out[k] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    out
}

fn spearman_oracle(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn compare_on(model: &LinearModel, words: Vec<String>, target: &str) -> Result<Option<f64>, String> {
    let doc = Document::from_tokens("d", words, None);
    let linear = attribute_linear(model, &doc, target).map_err(|e| e.to_string())?;
    let occlusion = attribute_occlusion(model, &doc, target).map_err(|e| e.to_string())?;
    let a: Vec<f64> = linear.token_scores.iter().map(|t| t.score).collect();
    let b: Vec<f64> = occlusion.token_scores.iter().map(|t| t.score).collect();
    // a document whose words all score the same has no ranking to compare
    if ranks(&a).windows(2).all(|w| w[0] == w[1]) {
        return Ok(None);
    }
    Ok(Some(spearman_oracle(&a, &b)))
}

fn occlusion_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut compared = 0;
    let mut worst = 1.0f64;
    // every fixture length 1..=50, twenty random models each
    for n in 1..=50usize {
        for _ in 0..20 {
            let vocab: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
            let weights: Vec<(&str, f64)> = vocab.iter().map(|w| (w.as_str(), rng.random_range(-3.0..3.0))).collect();
            let model = LinearModel::binary(["neg", "pos"], &weights, rng.random_range(-2.0..2.0)).map_err(|e| e.to_string())?;
            let mut words = vocab.clone();
            for i in (1..words.len()).rev() {
                words.swap(i, rng.random_range(0..=i));
            }
            if rng.random_bool(0.3) {
                words.push("unseen".into());
            }
            words.truncate(50);
            if let Some(rho) = compare_on(&model, words, "pos")? {
                compared += 1;
                worst = worst.min(rho);
            }
        }
    }
    // a trained reference model on real vocabulary
    let corpus = synth::generate(&SynthConfig {
        train_size: 800,
        test_size: 10,
        noise_vocabulary: 200,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let model = train(&corpus.train, &TrainConfig::default()).map_err(|e| e.to_string())?;
    for doc in &corpus.train.documents[..200] {
        let unique: Vec<String> = doc.tokens.iter().collect::<BTreeSet<_>>().into_iter().take(50).cloned().collect();
        for target in [synth::POSITIVE, synth::NEGATIVE] {
            if let Some(rho) = compare_on(&model, unique.clone(), target)? {
                compared += 1;
                worst = worst.min(rho);
            }
        }
    }
    check(worst == 1.0, format!("{compared} documents, minimum Spearman {worst}"))
}

fn random_records(rng: &mut ChaCha8Rng, n: usize) -> Vec<AttributionRecord> {
    (0..n)
        .map(|i| AttributionRecord {
            document_id: format!("d{i}"),
            target_class: "pos".into(),
            token_scores: (0..rng.random_range(1..30))
                .map(|p| TokenScore {
                    position: p,
                    token: format!("w{}", rng.random_range(0..60)),
                    score: rng.random_range(-5.0..5.0),
                })
                .collect(),
        })
        .collect()
}

fn aggregation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let mut records = random_records(&mut rng, 200);
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for r in &records {
            for t in &r.token_scores {
                let e = sums.entry(t.token.clone()).or_default();
                e.0 += t.score;
                e.1 += 1;
            }
        }
        let got = aggregate_global(&records).map_err(|e| e.to_string())?;
        if got.len() != sums.len() {
            return Err(format!("{} words ranked, {} expected", got.len(), sums.len()));
        }
        for g in &got {
            let (sum, count) = sums[&g.word];
            if g.frequency != count {
                return Err(format!("`{}` frequency {} != {count}", g.word, g.frequency));
            }
            worst = worst.max((g.score - sum / count as f64).abs());
        }
        for _ in 0..5 {
            for i in (1..records.len()).rev() {
                records.swap(i, rng.random_range(0..=i));
            }
            if aggregate_global(&records).map_err(|e| e.to_string())? != got {
                return Err("ranking changed under record permutation".into());
            }
        }
    }
    check(worst <= 1e-12, format!("10 x 200 records, 50 permutations, max |error| {worst:e}"))
}

fn ablation() -> Outcome {
    let corpus = synth::generate(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let model = train(&corpus.train, &TrainConfig::default()).map_err(|e| e.to_string())?;
    let explained = predicted_as(&model, &corpus.test, synth::POSITIVE, 0.5);
    let records =
        explain_documents(&model, &explained, synth::POSITIVE, ExplainerMethod::LinearExact).map_err(|e| e.to_string())?;
    let ranked: Vec<String> = aggregate_global(&records).map_err(|e| e.to_string())?.into_iter().map(|g| g.word).collect();
    let steps: Vec<usize> = (0..=10).map(|i| i * 10).collect();
    let curve = ablation_curve(&model, &corpus.test, &ranked, &steps).map_err(|e| e.to_string())?;
    let baseline = evaluate(&model, &corpus.test, 0.5).map_err(|e| e.to_string())?.f1_macro;
    let rises: Vec<String> = curve[1..]
        .windows(2)
        .filter(|w| w[1].1 > w[0].1 + 0.01)
        .map(|w| format!("{}->{}", w[0].0, w[1].0))
        .collect();
    let shape: Vec<String> = curve.iter().map(|(s, f)| format!("{s}:{f:.3}")).collect();
    check(
        curve[0].1 == baseline && rises.is_empty(),
        format!("baseline {baseline:.4}; curve {}; rises {rises:?}", shape.join(" ")),
    )
}

const VOCAB: usize = 24;
const CLASSES: [&str; 2] = ["neg", "pos"];

fn word(i: usize) -> String {
    format!("t{i:02}")
}

#[derive(Debug, Clone)]
struct Case {
    docs: Vec<(Vec<usize>, usize)>,
    protected: BTreeSet<usize>,
    vectors: Vec<Vec<f32>>,
    k: usize,
    seed: u64,
    class_scope: Option<usize>,
    keep_original: bool,
}

fn cases() -> impl proptest::strategy::Strategy<Value = Case> {
    (
        prop::collection::vec((prop::collection::vec(0..VOCAB, 1..12), 0..2usize), 2..25),
        prop::collection::btree_set(0..VOCAB, 1..6),
        prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 4), VOCAB),
        1..5usize,
        any::<u64>(),
        prop::option::of(0..2usize),
        any::<bool>(),
    )
        .prop_map(|(docs, protected, vectors, k, seed, class_scope, keep_original)| Case {
            docs,
            protected,
            vectors,
            k,
            seed,
            class_scope,
            keep_original,
        })
}

impl Case {
    fn corpus(&self) -> LabeledCorpus {
        let docs = self
            .docs
            .iter()
            .enumerate()
            .map(|(i, (tokens, label))| {
                Document::from_tokens(format!("d{i}"), tokens.iter().map(|&t| word(t)).collect(), Some(CLASSES[*label].into()))
            })
            .collect();
        LabeledCorpus::with_classes(docs, CLASSES.iter().map(|c| c.to_string()).collect()).unwrap()
    }

    fn plan(&self, strategy: Ms) -> MitigationPlan {
        let mut plan = MitigationPlan::new(strategy, self.protected.iter().map(|&i| word(i)).collect());
        plan.k = self.k;
        plan.seed = self.seed;
        plan.class_scope = self.class_scope.map(|c| CLASSES[c].to_string());
        plan.keep_original = self.keep_original;
        plan
    }

    fn is_protected(&self, token: &str) -> bool {
        self.protected.iter().any(|&i| word(i) == token)
    }

    fn in_scope(&self, doc: &Document) -> bool {
        let class_ok = self.class_scope.is_none_or(|c| doc.label.as_deref() == Some(CLASSES[c]));
        class_ok && doc.tokens.iter().any(|t| self.is_protected(t))
    }

    /// Brute-force cosine k-NN, best first, ties by word. Zero vectors
    /// have no direction, so they neither query nor get returned.
    fn neighbours(&self, w: &str) -> Vec<String> {
        let i = (0..VOCAB).find(|&i| word(i) == w).unwrap();
        let zero = |j: usize| self.vectors[j].iter().all(|x| *x == 0.0);
        if zero(i) {
            return Vec::new();
        }
        let cos = |a: &[f32], b: &[f32]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
            let n = |v: &[f32]| v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
            dot / (n(a) * n(b))
        };
        let mut scored: Vec<(f64, String)> =
            (0..VOCAB).filter(|&j| j != i && !zero(j)).map(|j| (cos(&self.vectors[i], &self.vectors[j]), word(j))).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        scored.into_iter().take(self.k).map(|(_, w)| w).collect()
    }

    fn class_would_vanish(&self, corpus: &LabeledCorpus, dropped: impl Fn(&Document) -> bool) -> bool {
        let before: BTreeSet<&str> = corpus.documents.iter().filter_map(|d| d.label.as_deref()).collect();
        let after: BTreeSet<&str> =
            corpus.documents.iter().filter(|d| !dropped(d)).filter_map(|d| d.label.as_deref()).collect();
        before != after
    }
}

/// Every field of the document as bytes, for exact comparison.
fn bytes(doc: &Document) -> Vec<u8> {
    format!("{}\0{}\0{:?}\0{:?}", doc.id, doc.text, doc.tokens, doc.label).into_bytes()
}

fn out_of_scope_identical(case: &Case, before: &LabeledCorpus, after: &LabeledCorpus) -> Result<(), TestCaseError> {
    let by_id: BTreeMap<&str, &Document> = after.documents.iter().map(|d| (d.id.as_str(), d)).collect();
    for d in before.documents.iter().filter(|d| !case.in_scope(d)) {
        let got = by_id.get(d.id.as_str()).map(|x| bytes(x));
        prop_assert_eq!(got, Some(bytes(d)), "out-of-scope {} changed", d.id);
    }
    Ok(())
}

/// Each kept in-scope document's tokens equal the original's, except that
/// protected tokens may be replaced by a member of their k-NN set.
fn replacements_in_knn(case: &Case, before: &Document, after: &Document) -> Result<(), TestCaseError> {
    prop_assert_eq!(before.tokens.len(), after.tokens.len());
    for (a, b) in before.tokens.iter().zip(&after.tokens) {
        let allowed = if case.is_protected(a) { case.neighbours(a) } else { Vec::new() };
        if !allowed.is_empty() {
            prop_assert!(allowed.contains(b), "{} -> {} not in {:?}", a, b, allowed);
        } else {
            prop_assert_eq!(a, b);
        }
    }
    Ok(())
}

fn check_strategy(strategy: Ms, case: &Case) -> Result<(), TestCaseError> {
    let corpus = case.corpus();
    let table = EmbeddingTable::from_rows(case.vectors.iter().enumerate().map(|(i, v)| (word(i), v.clone()))).unwrap();
    let mut lexicon = HypernymLexicon::new();
    for &w in &case.protected {
        lexicon.insert(&word(w), "group").unwrap();
    }
    let resources = Resources {
        embeddings: Some(&table),
        hypernyms: Some(&lexicon),
    };
    let out = match moderate(&corpus, &case.plan(strategy), resources) {
        Err(Error::Mitigation(_)) => {
            let vanishes = match strategy {
                Ms::Ms1 => case.class_would_vanish(&corpus, |d| case.in_scope(d)),
                Ms::Ms4 => !case.keep_original && case.class_would_vanish(&corpus, |d| case.in_scope(d)),
                _ => false,
            };
            prop_assert!(vanishes, "{} refused a corpus that keeps every class", strategy);
            return Ok(());
        }
        Err(e) => return Err(TestCaseError::fail(e.to_string())),
        Ok(out) => out,
    };
    out_of_scope_identical(case, &corpus, &out.corpus)?;
    let scoped = corpus.documents.iter().filter(|d| case.in_scope(d)).count();
    match strategy {
        Ms::Ms1 => {
            prop_assert!(out.corpus.len() <= corpus.len());
            prop_assert_eq!(out.corpus.len(), corpus.len() - scoped);
        }
        Ms::Ms2 | Ms::Ms3 | Ms::Ms5 => {
            prop_assert_eq!(out.corpus.len(), corpus.len());
            for (before, after) in corpus.documents.iter().zip(&out.corpus.documents) {
                prop_assert_eq!(&before.id, &after.id);
                if !case.in_scope(before) {
                    continue;
                }
                match strategy {
                    Ms::Ms2 => prop_assert!(after.tokens.iter().all(|t| !case.is_protected(t))),
                    Ms::Ms3 => replacements_in_knn(case, before, after)?,
                    _ => {
                        let expected: Vec<&str> =
                            before.tokens.iter().map(|t| if case.is_protected(t) { "group" } else { t.as_str() }).collect();
                        prop_assert_eq!(after.tokens.iter().map(String::as_str).collect::<Vec<_>>(), expected);
                    }
                }
            }
        }
        Ms::Ms4 => {
            let per_type: usize = corpus
                .documents
                .iter()
                .filter(|d| case.in_scope(d))
                .flat_map(|d| d.tokens.iter().filter(|t| case.is_protected(t)).collect::<BTreeSet<_>>())
                .map(|w| case.neighbours(w).len())
                .sum();
            let kept = if case.keep_original { corpus.len() } else { corpus.len() - scoped };
            prop_assert_eq!(out.corpus.len(), kept + per_type);
            let parents: BTreeMap<&str, &Document> = corpus.documents.iter().map(|d| (d.id.as_str(), d)).collect();
            for v in &out.corpus.documents {
                if let Some(p) = parents.get(v.id.as_str()) {
                    prop_assert_eq!(bytes(v), bytes(p));
                    continue;
                }
                let parent = parents[v.id.split_once("~ms4:").unwrap().0];
                prop_assert!(case.in_scope(parent));
                prop_assert_eq!(parent.tokens.len(), v.tokens.len());
                // one protected type, every occurrence, one k-NN member
                let changed: BTreeSet<(&String, &String)> =
                    parent.tokens.iter().zip(&v.tokens).filter(|(a, b)| a != b).collect();
                prop_assert_eq!(changed.len(), 1, "{:?}", changed);
                let (w, b) = changed.into_iter().next().unwrap();
                prop_assert!(case.is_protected(w));
                prop_assert!(case.neighbours(w).contains(b), "{} -> {}", w, b);
                prop_assert!(parent.tokens.iter().zip(&v.tokens).all(|(x, y)| x != w || y == b));
            }
        }
    }
    Ok(())
}

fn mitigation_invariants() -> Outcome {
    const CASES: u32 = 256;
    let mut lines = Vec::new();
    for (i, strategy) in [Ms::Ms1, Ms::Ms2, Ms::Ms3, Ms::Ms4, Ms::Ms5].into_iter().enumerate() {
        let mut config = Config::with_cases(CASES);
        config.failure_persistence = None;
        let mut runner = TestRunner::new_with_rng(
            config,
            proptest::test_runner::TestRng::from_seed(proptest::test_runner::RngAlgorithm::ChaCha, &[i as u8 + 1; 32]),
        );
        runner
            .run(&cases(), |case| check_strategy(strategy, &case))
            .map_err(|e| format!("{strategy}: {e}"))?;
        lines.push(format!("{strategy} {CASES} cases"));
    }
    Ok(lines.join(", "))
}

/// Every vote sheet with 1..=6 votes over the nine categories and none.
fn all_sheets(max_votes: u32) -> Vec<[u32; 10]> {
    fn fill(slot: usize, left: u32, current: &mut [u32; 10], out: &mut Vec<[u32; 10]>) {
        if slot == 10 {
            out.push(*current);
            return;
        }
        for n in 0..=left {
            current[slot] = n;
            fill(slot + 1, left - n, current, out);
        }
        current[slot] = 0;
    }
    let mut out = Vec::new();
    fill(0, max_votes, &mut [0; 10], &mut out);
    out.retain(|s| s.iter().sum::<u32>() > 0);
    out
}

fn identifier_arithmetic() -> Outcome {
    // majority: protected iff category votes strictly exceed none; plurality
    // category with alphabetical tie-break; reliability = winning share
    let mut by_name: Vec<ProtectedCategory> = ProtectedCategory::ALL.to_vec();
    by_name.sort_by_key(|c| c.as_str());
    let sheets = all_sheets(6);
    for counts in &sheets {
        let mut sheet = VoteSheet::new("w");
        for (c, &n) in ProtectedCategory::ALL.iter().zip(counts) {
            for _ in 0..n {
                sheet.add(VoteChoice::Category(*c));
            }
        }
        for _ in 0..counts[9] {
            sheet.add(VoteChoice::NoneOfTheAbove);
        }
        let count_of = |c: ProtectedCategory| counts[ProtectedCategory::ALL.iter().position(|x| *x == c).unwrap()];
        let total: u32 = counts.iter().sum();
        let none = counts[9];
        let categories = total - none;
        let protected = categories > none;
        let best = by_name.iter().map(|c| count_of(*c)).max().unwrap();
        let leaders: Vec<ProtectedCategory> = by_name.iter().copied().filter(|c| count_of(*c) == best).collect();
        let winning = if protected { categories } else { none };
        let expected_reliability = (100.0 * f64::from(winning) / f64::from(total)).round() as u8;
        let got = majority_vote(&sheet).map_err(|e| e.to_string())?;
        let expected_category = protected.then(|| leaders[0]);
        if got.category != expected_category
            || got.tie != (protected && leaders.len() > 1)
            || got.reliability != expected_reliability
        {
            return Err(format!("majority of {counts:?}: got {:?}/{}/{}", got.category, got.tie, got.reliability));
        }
    }

    // kappa: 10 words, 8 agreements, both sides 5/5 -> p_o 0.8, p_e 0.5
    let a: BTreeMap<String, bool> = (0..10).map(|i| (format!("w{i}"), i < 5)).collect();
    let b: BTreeMap<String, bool> = (0..10).map(|i| (format!("w{i}"), (i < 5) ^ (i == 0 || i == 5))).collect();
    let kappa = cohen_kappa(&a, &b).map_err(|e| e.to_string())?;
    if (kappa - 0.6).abs() > 1e-9 {
        return Err(format!("kappa {kappa}, expected 0.6"));
    }

    // traps: every subset of the fifteen answered in band, the rest out of
    // band or missing
    let traps = default_traps();
    let (low, high) = (traps.iter().filter(|t| t.expected_band == TrapBand::Low).count(), traps.len());
    if traps.len() != 15 || low != 12 || high - low != 3 {
        return Err(format!("trap fixture has {} words, {low} low", traps.len()));
    }
    let in_band = |band: TrapBand, i: usize| match band {
        TrapBand::Low => 1 + (i % 2) as u8,
        TrapBand::High => 4 + (i % 2) as u8,
    };
    let out_of_band = |band: TrapBand, i: usize| match band {
        TrapBand::Low => [3, 4, 5][i % 3],
        TrapBand::High => [1, 2, 3][i % 3],
    };
    for mask in 0u32..1 << 15 {
        for missing in [false, true] {
            let mut session = Vec::new();
            let mut violations = Vec::new();
            for (i, t) in traps.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    session.push((t.word.clone(), in_band(t.expected_band, i + mask as usize)));
                } else {
                    violations.push(t.word.clone());
                    if !missing {
                        session.push((t.word.clone(), out_of_band(t.expected_band, i + mask as usize)));
                    }
                }
            }
            session.push(("unrelated".into(), 3));
            let expected = if violations.is_empty() {
                TrapVerdict::Reliable
            } else {
                TrapVerdict::Rejected { violations }
            };
            let got = trap_filter(&session, &traps);
            if got != expected {
                return Err(format!("trap mask {mask:#x} (missing={missing}): {got:?}"));
            }
        }
    }
    for t in &traps {
        for score in 1..=5u8 {
            let expected = match t.expected_band {
                TrapBand::Low => score <= 2,
                TrapBand::High => score >= 4,
            };
            if trap_filter(&[(t.word.clone(), score)], std::slice::from_ref(t)).is_reliable() != expected {
                return Err(format!("trap `{}` score {score}", t.word));
            }
        }
    }

    let replies = [
        (
            "Sexual orientation | 100 | Homosexual refers to a person's sexual orientation, specifically indicating attraction to people of the same sex. It falls under the protected category of sexual orientation.",
            ProtectedCategory::SexualOrientation,
            100,
        ),
        (
            "Religion and belief | 90 | The word `headscarf' is commonly associated with religious beliefs, particularly in Islam, where it is worn by women as a symbol of modesty and religious observance.",
            ProtectedCategory::ReligionBelief,
            90,
        ),
    ];
    for (reply, category, reliability) in replies {
        let (c, r, e) = parse_llm_reply(reply).map_err(|e| e.to_string())?;
        if c != Some(category) || r != reliability || format_llm_reply(c, r, &e) != reply {
            return Err(format!("reply did not round-trip: {reply}"));
        }
    }
    Ok(format!(
        "{} vote sheets, kappa {kappa}, {} trap sessions, 2 replies",
        sheets.len(),
        2 * (1u32 << 15)
    ))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    common::small_synth(dir.path());
    let stub = common::stub_llm("test-key");
    let config = dir.path().join("run.toml");
    let text = format!(
        "training_corpus = \"train.jsonl\"
unlabeled_corpus = \"test.jsonl\"
target_class = \"toxic\"
output_dir = \"out\"

[explainer]
top_k = 60

[identifier]
backend = \"llm\"

[identifier.llm]
endpoint = \"{}\"
max_retries = 0
backoff_ms = 0
concurrency = 4

[plan]
strategy = \"MS2\"
",
        stub.url
    );
    std::fs::write(&config, text).map_err(|e| e.to_string())?;
    let mut reports = Vec::new();
    for _ in 0..2 {
        let out = common::fairlex()
            .args(["run", "--config"])
            .arg(&config)
            .env("FAIRLEX_LLM_API_KEY", "test-key")
            .env_remove("FAIRLEX_LLM_ENDPOINT")
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("run failed: {}", common::stderr(&out)));
        }
        let json = std::fs::read(dir.path().join("out/report.json")).map_err(|e| e.to_string())?;
        let txt = std::fs::read(dir.path().join("out/report.txt")).map_err(|e| e.to_string())?;
        reports.push((json, txt, out.stdout));
    }
    let requests = stub.requests.load(std::sync::atomic::Ordering::SeqCst);
    let authorized = stub.authorized.load(std::sync::atomic::Ordering::SeqCst);
    let report: MitigationReport = serde_json::from_slice(&reports[0].0).map_err(|e| e.to_string())?;
    let protected = report.original.fairness.protected_count;
    check(
        reports[0] == reports[1] && requests > 0 && authorized == requests && protected > 0,
        format!(
            "report.json {} bytes, identical={}, {requests} LLM requests ({authorized} with the key), {protected} protected words",
            reports[0].0.len(),
            reports[0] == reports[1]
        ),
    )
}

fn random_dataset(rng: &mut ChaCha8Rng, rows: usize, dim: usize, classes: usize) -> Dataset {
    let mut data = Dataset::default();
    for _ in 0..rows {
        let mut x = Vec::new();
        for j in 0..dim {
            if rng.random_bool(0.5) {
                x.push((j, rng.random_range(1..4) as f64));
            }
        }
        data.features.push(x);
        data.targets.push(rng.random_range(0..classes));
        data.sample_weights.push(rng.random_range(0.5..2.0));
    }
    data
}

fn gradient_check() -> Outcome {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let kinds = [ModelKind::Binary, ModelKind::OneVsRest, ModelKind::Softmax];
    let mut worst = 0.0f64;
    for instance in 0..10 {
        let kind = kinds[instance % 3];
        let (classes, heads) = if kind == ModelKind::Binary { (2, 1) } else { (3, 3) };
        let dim = rng.random_range(3..8);
        let rows = rng.random_range(4..12);
        let data = random_dataset(&mut rng, rows, dim, classes);
        let objective = Objective {
            kind,
            data: &data,
            l2: rng.random_range(0.0..0.1),
        };
        let flat: Vec<f64> = (0..heads * dim + heads).map(|_| rng.random_range(-1.0..1.0)).collect();
        let analytic = objective.gradient(&Params::from_flat(&flat, heads, dim), None).to_flat();
        let h = 1e-5;
        let numeric: Vec<f64> = (0..flat.len())
            .map(|i| {
                let (mut up, mut down) = (flat.clone(), flat.clone());
                up[i] += h;
                down[i] -= h;
                let f = |p: &[f64]| objective.loss(&Params::from_flat(p, heads, dim), None);
                (f(&up) - f(&down)) / (2.0 * h)
            })
            .collect();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        worst = worst.max(norm(&diff) / norm(&analytic).max(norm(&numeric)));
    }
    check(worst < 1e-5, format!("10 instances, max relative error {worst:.2e}"))
}
