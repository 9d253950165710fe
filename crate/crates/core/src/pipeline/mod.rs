//! The end-to-end loop: predict on an unlabeled corpus, explain the target
//! class, annotate the top words, rewrite the training corpus, retrain and
//! measure again.
//!
//! Artifacts land in the configured output directory:
//!
//! | file | content |
//! |---|---|
//! | `original_ranking.csv`, `mitigated_ranking.csv` | global word rankings |
//! | `original_annotations.tsv`, `mitigated_annotations.tsv` | annotations of the top words |
//! | `original_model.json`, `mitigated_model.json` | trained models |
//! | `mitigated_train.jsonl` | the rewritten training corpus |
//! | `report.json`, `report.txt` | the report |
//! | `timings.json` | seconds per stage |

mod config;
mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use crate::classifier::{
    auc, classification_metrics, load_external_predictions, metrics_for, train, ClassProbabilities, LinearModel,
    Metrics,
};
use crate::corpus::{load_corpus, save_corpus, Document, LabeledCorpus};
use crate::error::{Error, Result};
use crate::explainer::{
    aggregate_global, explain_documents, load_external_attributions, overlap, predicted_as, select_top,
    write_ranking_csv, AttributionRecord, ExplainerMethod, GlobalWordScore, Overlap, TopSelection,
};
use crate::identifier::{
    read_annotations_tsv, write_annotations_tsv, Annotation, Annotator, Dictionary, FileAnnotator, LlmAnnotator,
};
use crate::lexical::{load_embeddings, HypernymLexicon};
use crate::moderator::{moderate, scope_words, MitigationDelta, Resources};

pub use config::{ExplainerSettings, IdentifierBackend, IdentifierSettings, PipelineConfig, DEFAULT_TOP_K};
pub use report::{render_measurement, FairnessStats, MitigationReport, RunSummary, StageTimings};

/// Result of explaining and annotating one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub metrics: Option<Metrics>,
    pub fairness: FairnessStats,
    pub ranking: Vec<GlobalWordScore>,
    pub top_words: Vec<String>,
    /// Annotations of the top words that could be annotated, in rank order.
    pub annotations: Vec<Annotation>,
    pub protected_words: Vec<String>,
    pub explained_documents: usize,
    pub warnings: Vec<String>,
}

impl Measurement {
    pub fn summary(&self) -> RunSummary {
        RunSummary {
            metrics: self.metrics.clone(),
            fairness: self.fairness,
            explained_documents: self.explained_documents,
            top_words: self.top_words.clone(),
            protected_words: self.protected_words.clone(),
        }
    }
}

/// Builds the annotator named by the settings.
pub fn build_annotator(settings: &IdentifierSettings) -> Result<Box<dyn Annotator>> {
    Ok(match settings.backend {
        IdentifierBackend::Dictionary => Box::new(match &settings.dictionary {
            Some(path) => Dictionary::load(path)?,
            None => Dictionary::builtin(),
        }),
        IdentifierBackend::File => {
            let path = settings
                .annotations
                .as_ref()
                .ok_or_else(|| Error::Invalid("the file identifier needs an annotations path".into()))?;
            Box::new(FileAnnotator {
                annotations: read_annotations_tsv(path)?,
            })
        }
        IdentifierBackend::Llm => Box::new(LlmAnnotator::http(settings.llm.clone())?),
    })
}

/// Overlap of two rankings cut at the same length.
pub fn compare_rankings(a: &[String], b: &[String]) -> Result<Overlap> {
    if a.len() != b.len() {
        return Err(Error::Invalid(format!(
            "rankings have different lengths ({} and {})",
            a.len(),
            b.len()
        )));
    }
    Ok(overlap(a, b))
}

fn timed<T>(slot: &mut f64, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    *slot += start.elapsed().as_secs_f64();
    out
}

fn external_metrics(docs: &[&Document], probs: &BTreeMap<String, ClassProbabilities>, target: &str, threshold: f64) -> Option<Metrics> {
    let scored: Vec<(&Document, &ClassProbabilities)> =
        docs.iter().filter_map(|d| probs.get(&d.id).map(|p| (*d, p))).collect();
    if scored.is_empty() {
        return None;
    }
    let gold: Vec<&str> = scored.iter().map(|(d, _)| d.label.as_deref().unwrap()).collect();
    let predicted: Vec<&str> = scored
        .iter()
        .map(|(_, p)| p.decide(Some(target), threshold).unwrap_or(""))
        .collect();
    let classes: BTreeSet<String> = scored.iter().flat_map(|(_, p)| p.0.keys().cloned()).collect();
    let order: Vec<String> = classes.iter().cloned().collect();
    let (f1_macro, f1_weighted, per_class) = classification_metrics(&gold, &predicted, &order);
    let auc = if classes.len() == 2 {
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for (d, p) in &scored {
            let s = p.get(target).unwrap_or(0.0);
            if d.label.as_deref() == Some(target) {
                pos.push(s)
            } else {
                neg.push(s)
            }
        }
        auc(&pos, &neg).ok()
    } else {
        None
    };
    Some(Metrics {
        f1_macro,
        f1_weighted,
        auc,
        per_class,
    })
}

/// A configured run. Annotations are cached across measurements, so each
/// word is sent to the identifier at most once.
pub struct Pipeline {
    config: PipelineConfig,
    annotator: Box<dyn Annotator>,
    cache: BTreeMap<String, Annotation>,
    timings: StageTimings,
    unlabeled: Option<Arc<LabeledCorpus>>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        let annotator = build_annotator(&config.identifier)?;
        Self::with_annotator(config, annotator)
    }

    pub fn with_annotator(config: PipelineConfig, annotator: Box<dyn Annotator>) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline {
            config,
            annotator,
            cache: BTreeMap::new(),
            timings: StageTimings::default(),
            unlabeled: None,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn timings(&self) -> &StageTimings {
        &self.timings
    }

    fn unlabeled(&mut self) -> Result<Arc<LabeledCorpus>> {
        if self.unlabeled.is_none() {
            self.unlabeled = Some(Arc::new(load_corpus(&self.config.unlabeled_corpus)?));
        }
        Ok(Arc::clone(self.unlabeled.as_ref().unwrap()))
    }

    fn annotate(&mut self, words: &[String]) -> Result<Vec<Annotation>> {
        let missing: Vec<String> = words.iter().filter(|w| !self.cache.contains_key(*w)).cloned().collect();
        if !missing.is_empty() {
            let start = Instant::now();
            let fresh = self.annotator.annotate(&missing)?;
            self.timings.identify += start.elapsed().as_secs_f64();
            for a in fresh {
                self.cache.entry(a.word.clone()).or_insert(a);
            }
        }
        Ok(words.iter().filter_map(|w| self.cache.get(w).cloned()).collect())
    }

    fn finish(
        &mut self,
        records: Vec<AttributionRecord>,
        metrics: Option<Metrics>,
        selection: TopSelection,
        original: Option<&BTreeSet<String>>,
        warnings: Vec<String>,
    ) -> Result<Measurement> {
        if records.is_empty() {
            return Err(Error::Invalid(format!(
                "no document of the unlabeled corpus is predicted as `{}`; nothing to explain",
                self.config.target_class
            )));
        }
        let explained_documents = records.len();
        let mut explain = 0.0;
        let ranking = timed(&mut explain, || aggregate_global(&records))?;
        self.timings.explain += explain;
        let top_words = select_top(&ranking, selection)?;
        let annotations = self.annotate(&top_words)?;
        let protected_words: Vec<String> =
            annotations.iter().filter(|a| a.is_protected()).map(|a| a.word.clone()).collect();
        let retained = match original {
            None => protected_words.len(),
            Some(set) => protected_words.iter().filter(|w| set.contains(*w)).count(),
        };
        Ok(Measurement {
            metrics,
            fairness: FairnessStats::new(protected_words.len(), top_words.len(), retained)?,
            ranking,
            top_words,
            annotations,
            protected_words,
            explained_documents,
            warnings,
        })
    }

    /// Explains `model` over the unlabeled corpus and annotates its top words.
    pub fn measure_model(
        &mut self,
        model: &LinearModel,
        selection: TopSelection,
        original: Option<&BTreeSet<String>>,
    ) -> Result<Measurement> {
        let target = self.config.target_class.clone();
        if !model.classes.contains(&target) {
            return Err(Error::UnknownClass(target));
        }
        let threshold = self.config.threshold;
        let method = self.config.explainer.method;
        if method == ExplainerMethod::ExternalFile {
            return Err(Error::Invalid("the external-file explainer cannot explain a trained model".into()));
        }
        let unlabeled = self.unlabeled()?;

        let mut predict = 0.0;
        let selected = timed(&mut predict, || predicted_as(model, &unlabeled, &target, threshold));
        let labeled: Vec<&Document> = unlabeled.documents.iter().filter(|d| d.label.is_some()).collect();
        let metrics = if labeled.is_empty() {
            None
        } else {
            Some(timed(&mut predict, || metrics_for(model, &labeled, threshold))?)
        };
        self.timings.predict += predict;

        let mut explain = 0.0;
        let records = timed(&mut explain, || explain_documents(model, &selected, &target, method))?;
        self.timings.explain += explain;
        self.finish(records, metrics, selection, original, Vec::new())
    }

    /// Measurement from external predictions and attributions only.
    pub fn measure_external(&mut self, selection: TopSelection) -> Result<Measurement> {
        let config = self.config.clone();
        let attributions = config
            .explainer
            .attributions
            .as_ref()
            .ok_or_else(|| Error::Invalid("external measurement needs an attributions file".into()))?;
        let unlabeled = self.unlabeled()?;
        let target = &config.target_class;
        let mut warnings = Vec::new();

        let mut predict = 0.0;
        let predictions = match &config.predictions {
            Some(p) => Some(timed(&mut predict, || load_external_predictions(p, &unlabeled))?),
            None => None,
        };
        self.timings.predict += predict;

        let mut explain = 0.0;
        let external = timed(&mut explain, || load_external_attributions(attributions, &unlabeled))?;
        self.timings.explain += explain;
        for issue in &external.rejected {
            warnings.push(format!("attribution line {} ({}): {}", issue.line, issue.document_id, issue.message));
        }
        let records: Vec<AttributionRecord> = external
            .records
            .into_iter()
            .filter(|r| &r.target_class == target)
            .filter(|r| match &predictions {
                None => true,
                Some(p) => p
                    .by_id
                    .get(&r.document_id)
                    .and_then(|probs| probs.decide(Some(target), config.threshold))
                    == Some(target.as_str()),
            })
            .collect();
        let metrics = predictions.as_ref().and_then(|p| {
            let labeled: Vec<&Document> = unlabeled.documents.iter().filter(|d| d.label.is_some()).collect();
            external_metrics(&labeled, &p.by_id, target, config.threshold)
        });
        for w in &warnings {
            log::warn!("{w}");
        }
        self.finish(records, metrics, selection, None, warnings)
    }

    fn original_model(&mut self, training: &LabeledCorpus) -> Result<LinearModel> {
        let start = Instant::now();
        let model = match &self.config.model {
            Some(path) => LinearModel::load(path)?,
            None => train(training, &self.config.train)?,
        };
        self.timings.train += start.elapsed().as_secs_f64();
        Ok(model)
    }

    fn output_dir(&self) -> Result<&Path> {
        let dir = self.config.output_dir.as_path();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(dir)
    }

    fn write_measurement(&self, prefix: &str, m: &Measurement) -> Result<()> {
        let dir = self.output_dir()?;
        write_ranking_csv(dir.join(format!("{prefix}_ranking.csv")), &m.ranking)?;
        write_annotations_tsv(dir.join(format!("{prefix}_annotations.tsv")), &m.annotations)
    }

    fn write_json(&self, name: &str, value: &impl serde::Serialize) -> Result<()> {
        let path = self.output_dir()?.join(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let path = self.output_dir()?.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Measures the original model only and writes its artifacts.
    pub fn measure(&mut self) -> Result<Measurement> {
        let selection = self.config.explainer.selection()?;
        let m = if self.config.explainer.method == ExplainerMethod::ExternalFile {
            self.measure_external(selection)?
        } else {
            let training = load_corpus(&self.config.training_corpus)?;
            self.check_target(&training)?;
            let model = self.original_model(&training)?;
            model.save(self.output_dir()?.join("original_model.json"))?;
            self.measure_model(&model, selection, None)?
        };
        self.write_measurement("original", &m)?;
        let summary = m.summary();
        self.write_json("report.json", &summary)?;
        self.write_text("report.txt", &render_measurement(&self.config.target_class, &summary))?;
        self.write_json("timings.json", &self.timings)?;
        Ok(m)
    }

    fn check_target(&self, training: &LabeledCorpus) -> Result<()> {
        if training.classes.contains(&self.config.target_class) {
            Ok(())
        } else {
            Err(Error::UnknownClass(self.config.target_class.clone()))
        }
    }

    fn resources(&self) -> Result<(Option<crate::lexical::EmbeddingTable>, Option<HypernymLexicon>)> {
        let plan = self.config.plan.as_ref().expect("checked by caller");
        let embeddings = if plan.strategy.needs_embeddings() {
            let path = self.config.embeddings.as_ref().ok_or_else(|| {
                Error::Invalid(format!("strategy {} needs `embeddings`", plan.strategy))
            })?;
            Some(load_embeddings(path)?)
        } else {
            None
        };
        let hypernyms = if plan.strategy.needs_hypernyms() {
            let path = self.config.hypernyms.as_ref().ok_or_else(|| {
                Error::Invalid(format!("strategy {} needs `hypernyms`", plan.strategy))
            })?;
            Some(HypernymLexicon::load(path)?)
        } else {
            None
        };
        Ok((embeddings, hypernyms))
    }

    /// The full loop. Writes every artifact and returns the report.
    pub fn mitigate(&mut self) -> Result<MitigationReport> {
        let template = self
            .config
            .plan
            .clone()
            .ok_or_else(|| Error::Invalid("mitigation needs a `plan`".into()))?;
        if self.config.explainer.method == ExplainerMethod::ExternalFile {
            return Err(Error::Invalid(
                "the external-file explainer only supports measurement; the retrained model cannot be re-explained"
                    .into(),
            ));
        }
        let selection = self.config.explainer.selection()?;
        let training = load_corpus(&self.config.training_corpus)?;
        self.check_target(&training)?;
        let (embeddings, hypernyms) = self.resources()?;
        let resources = Resources {
            embeddings: embeddings.as_ref(),
            hypernyms: hypernyms.as_ref(),
        };

        let original_model = self.original_model(&training)?;
        let train_config = original_model.training_config.clone();
        let original = self.measure_model(&original_model, selection, None)?;
        self.write_measurement("original", &original)?;
        original_model.save(self.output_dir()?.join("original_model.json"))?;
        let original_set: BTreeSet<String> = original.protected_words.iter().cloned().collect();
        let fixed = TopSelection::TopK(original.fairness.top_n);

        let mut corpus = training;
        let mut model = original_model;
        let mut current = original.clone();
        let mut delta = MitigationDelta {
            strategy: template.strategy,
            documents_removed: 0,
            documents_added: 0,
            tokens_removed: 0,
            tokens_replaced: 0,
        };
        let mut warnings = Vec::new();
        let mut rounds_run = 0;
        for round in 0..self.config.rounds {
            let words = scope_words(&current.annotations, template.category_scope.as_ref());
            if words.is_empty() {
                log::info!("round {}: no protected words in scope; nothing to mitigate", round + 1);
                break;
            }
            let mut plan = template.clone();
            plan.protected_words = words;
            let mut moderate_secs = 0.0;
            let outcome = timed(&mut moderate_secs, || moderate(&corpus, &plan, resources))?;
            self.timings.moderate += moderate_secs;
            delta.documents_removed += outcome.delta.documents_removed;
            delta.documents_added += outcome.delta.documents_added;
            delta.tokens_removed += outcome.delta.tokens_removed;
            delta.tokens_replaced += outcome.delta.tokens_replaced;
            warnings.extend(outcome.warnings);
            corpus = outcome.corpus;
            let mut retrain = 0.0;
            model = timed(&mut retrain, || train(&corpus, &train_config))?;
            self.timings.retrain += retrain;
            current = self.measure_model(&model, fixed, Some(&original_set))?;
            rounds_run += 1;
        }
        save_corpus(&corpus, self.output_dir()?.join("mitigated_train.jsonl"))?;
        model.save(self.output_dir()?.join("mitigated_model.json"))?;
        self.write_measurement("mitigated", &current)?;
        let report = MitigationReport {
            target_class: self.config.target_class.clone(),
            strategy: template.strategy,
            rounds: rounds_run,
            original: original.summary(),
            mitigated: current.summary(),
            delta,
            annotations: self.cache.values().cloned().collect(),
            warnings,
        };
        self.write_json("report.json", &report)?;
        self.write_text("report.txt", &report.render_text())?;
        self.write_json("timings.json", &self.timings)?;
        Ok(report)
    }
}

pub fn run_measurement(config: &PipelineConfig) -> Result<Measurement> {
    Pipeline::new(config.clone())?.measure()
}

pub fn run_mitigation(config: &PipelineConfig) -> Result<MitigationReport> {
    Pipeline::new(config.clone())?.mitigate()
}
