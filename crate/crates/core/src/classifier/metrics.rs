use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::LinearModel;
use crate::corpus::{Document, LabeledCorpus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub f1_macro: f64,
    pub f1_weighted: f64,
    /// Binary tasks only.
    pub auc: Option<f64>,
    pub per_class: Vec<ClassMetrics>,
}

/// F1 from confusion counts; zero when the class never occurs nor is predicted.
pub fn f1_score(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision/recall/F1 plus macro and support-weighted F1.
///
/// Classes are those appearing in either `gold` or `predicted`, in the order
/// of `class_order` (unlisted classes follow in name order).
pub fn classification_metrics(
    gold: &[&str],
    predicted: &[&str],
    class_order: &[String],
) -> (f64, f64, Vec<ClassMetrics>) {
    assert_eq!(gold.len(), predicted.len());
    let mut counts: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    for (&g, &p) in gold.iter().zip(predicted) {
        if g == p {
            counts.entry(g).or_default().0 += 1;
        } else {
            counts.entry(p).or_default().1 += 1;
            counts.entry(g).or_default().2 += 1;
        }
    }
    let mut ordered: Vec<&str> = class_order
        .iter()
        .map(String::as_str)
        .filter(|c| counts.contains_key(c))
        .collect();
    for c in counts.keys() {
        if !ordered.contains(c) {
            ordered.push(c);
        }
    }
    let total = gold.len();
    let mut per_class = Vec::with_capacity(ordered.len());
    let (mut macro_sum, mut weighted_sum) = (0.0, 0.0);
    for class in ordered {
        let (tp, fp, fn_) = counts[class];
        let f1 = f1_score(tp, fp, fn_);
        let support = tp + fn_;
        macro_sum += f1;
        weighted_sum += f1 * support as f64;
        per_class.push(ClassMetrics {
            class: class.to_string(),
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            f1,
            support,
        });
    }
    let f1_macro = if per_class.is_empty() { 0.0 } else { macro_sum / per_class.len() as f64 };
    let f1_weighted = if total == 0 { 0.0 } else { weighted_sum / total as f64 };
    (f1_macro, f1_weighted, per_class)
}

/// Area under the ROC curve as the Mann-Whitney rank statistic; tied
/// positive/negative pairs count one half.
pub fn auc(positive_scores: &[f64], negative_scores: &[f64]) -> Result<f64> {
    if positive_scores.is_empty() || negative_scores.is_empty() {
        return Err(Error::AucUndefined);
    }
    let mut all: Vec<(f64, bool)> = positive_scores
        .iter()
        .map(|&s| (s, true))
        .chain(negative_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * all[i..=j].iter().filter(|(_, p)| *p).count() as f64;
        i = j + 1;
    }
    let np = positive_scores.len() as f64;
    let nn = negative_scores.len() as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Metrics for `docs` (all labeled); AUC is `None` when undefined or when
/// the model is not binary.
pub(crate) fn metrics_for(model: &LinearModel, docs: &[&Document], threshold: f64) -> Result<Metrics> {
    let mut gold = Vec::with_capacity(docs.len());
    let mut predicted = Vec::with_capacity(docs.len());
    let mut pos_scores = Vec::new();
    let mut neg_scores = Vec::new();
    let positive = model.positive_class();
    for doc in docs {
        let label = doc
            .label
            .as_deref()
            .ok_or_else(|| Error::Invalid(format!("document `{}` has no label", doc.id)))?;
        let probs = model.predict(doc);
        if let Some(pos) = positive {
            let score = probs.get(pos).unwrap_or(0.0);
            if label == pos {
                pos_scores.push(score);
            } else {
                neg_scores.push(score);
            }
        }
        gold.push(label);
        predicted.push(model.decide(&probs, threshold));
    }
    let predicted_refs: Vec<&str> = predicted.iter().map(String::as_str).collect();
    let (f1_macro, f1_weighted, per_class) = classification_metrics(&gold, &predicted_refs, &model.classes);
    let auc = if positive.is_some() {
        auc(&pos_scores, &neg_scores).ok()
    } else {
        None
    };
    Ok(Metrics {
        f1_macro,
        f1_weighted,
        auc,
        per_class,
    })
}

/// Evaluates `model` on a fully labeled corpus.
///
/// Binary models report AUC and fail with [`Error::AucUndefined`] when the
/// corpus lacks either class.
pub fn evaluate(model: &LinearModel, corpus: &LabeledCorpus, threshold: f64) -> Result<Metrics> {
    let docs: Vec<&Document> = corpus.documents.iter().collect();
    let metrics = metrics_for(model, &docs, threshold)?;
    if model.positive_class().is_some() && metrics.auc.is_none() {
        return Err(Error::AucUndefined);
    }
    Ok(metrics)
}
