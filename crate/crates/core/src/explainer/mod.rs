//! Local token attributions and their aggregation into a global word ranking.
//!
//! A word's global score is the sum of its per-occurrence attributions
//! divided by the number of scored occurrences, so rare but strongly
//! weighted words are not drowned out by frequent ones.

mod aggregate;
mod attribution;
mod evaluation;
mod render;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{ClassProbabilities, LinearModel};
use crate::corpus::{Document, LabeledCorpus};
use crate::error::{Error, Result};

pub use aggregate::{aggregate_global, read_ranking_csv, select_top, write_ranking_csv};
pub use attribution::{
    attribute_linear, attribute_occlusion, load_external_attributions, write_attributions, ExternalAttributions,
    RecordIssue,
};
pub use evaluation::{ablation_curve, overlap, spearman, Overlap};
pub use render::{render_attributions, RenderFormat};

/// Anything that maps a token sequence to class probabilities.
pub trait Predictor: Sync {
    fn predict_tokens(&self, tokens: &[String]) -> ClassProbabilities;
}

impl Predictor for LinearModel {
    fn predict_tokens(&self, tokens: &[String]) -> ClassProbabilities {
        LinearModel::predict_tokens(self, tokens)
    }
}

impl<F> Predictor for F
where
    F: Fn(&[String]) -> ClassProbabilities + Sync,
{
    fn predict_tokens(&self, tokens: &[String]) -> ClassProbabilities {
        self(tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "(usize, String, f64)", into = "(usize, String, f64)")]
pub struct TokenScore {
    pub position: usize,
    pub token: String,
    pub score: f64,
}

impl From<(usize, String, f64)> for TokenScore {
    fn from((position, token, score): (usize, String, f64)) -> Self {
        TokenScore { position, token, score }
    }
}

impl From<TokenScore> for (usize, String, f64) {
    fn from(t: TokenScore) -> Self {
        (t.position, t.token, t.score)
    }
}

/// Scores for every token position of one document towards one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    #[serde(rename = "id")]
    pub document_id: String,
    pub target_class: String,
    #[serde(rename = "scores")]
    pub token_scores: Vec<TokenScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalWordScore {
    pub word: String,
    pub total: f64,
    pub frequency: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExplainerMethod {
    LinearExact,
    Occlusion,
    ExternalFile,
}

/// How many ranked words to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TopSelection {
    TopK(usize),
    /// `ceil(fraction × distinct words)`, fraction in (0, 1].
    Fraction(f64),
}

impl TopSelection {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TopSelection::TopK(0) => Err(Error::Invalid("top_k must be positive".into())),
            TopSelection::Fraction(f) if !(f > 0.0 && f <= 1.0) => {
                Err(Error::Invalid(format!("top_fraction {f} is outside (0, 1]")))
            }
            _ => Ok(()),
        }
    }

    /// Number of entries selected out of `available`.
    pub fn count(&self, available: usize) -> usize {
        match *self {
            TopSelection::TopK(k) => k.min(available),
            // the epsilon keeps products like 0.07 × 100 from rounding up
            TopSelection::Fraction(f) => ((f * available as f64 - 1e-9).ceil().max(0.0) as usize).min(available),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplainerConfig {
    pub method: ExplainerMethod,
    pub selection: TopSelection,
}

/// Attributions of `documents` towards `target_class`, in input order.
pub fn explain_documents(
    model: &LinearModel,
    documents: &[&Document],
    target_class: &str,
    method: ExplainerMethod,
) -> Result<Vec<AttributionRecord>> {
    match method {
        ExplainerMethod::LinearExact => documents.par_iter().map(|d| attribute_linear(model, d, target_class)).collect(),
        ExplainerMethod::Occlusion => documents.par_iter().map(|d| attribute_occlusion(model, d, target_class)).collect(),
        ExplainerMethod::ExternalFile => {
            Err(Error::Invalid("the external-file method reads attributions instead of computing them".into()))
        }
    }
}

/// Documents the model assigns to `target_class` at `threshold`.
pub fn predicted_as<'a>(
    model: &LinearModel,
    corpus: &'a LabeledCorpus,
    target_class: &str,
    threshold: f64,
) -> Vec<&'a Document> {
    let keep: Vec<bool> = corpus
        .documents
        .par_iter()
        .map(|d| model.decide(&model.predict(d), threshold) == target_class)
        .collect();
    corpus.documents.iter().zip(keep).filter(|(_, k)| *k).map(|(d, _)| d).collect()
}
