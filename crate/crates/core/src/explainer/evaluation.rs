use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::classifier::{metrics_for, LinearModel};
use crate::corpus::{Document, LabeledCorpus};
use crate::error::{Error, Result};

/// F1 macro after deleting the top-`s` ranked words from every document, for
/// each `s` in `steps`.
pub fn ablation_curve(
    model: &LinearModel,
    corpus: &LabeledCorpus,
    ranked_words: &[String],
    steps: &[usize],
) -> Result<Vec<(usize, f64)>> {
    if steps.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Invalid("ablation steps must be ascending".into()));
    }
    let threshold = 0.5;
    let mut curve = Vec::with_capacity(steps.len());
    for &step in steps {
        let removed: HashSet<&str> = ranked_words.iter().take(step).map(String::as_str).collect();
        let docs: Vec<Document> = corpus
            .documents
            .iter()
            .map(|d| {
                let mut doc = d.clone();
                doc.tokens.retain(|t| !removed.contains(t.as_str()));
                doc
            })
            .collect();
        let refs: Vec<&Document> = docs.iter().collect();
        curve.push((step, metrics_for(model, &refs, threshold)?.f1_macro));
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub count: usize,
    pub fraction: f64,
}

/// Shared words between two rankings, as a count and as a fraction of the
/// longer list.
pub fn overlap(a: &[String], b: &[String]) -> Overlap {
    let sa: BTreeSet<&str> = a.iter().map(String::as_str).collect();
    let sb: BTreeSet<&str> = b.iter().map(String::as_str).collect();
    let count = sa.intersection(&sb).count();
    let denom = a.len().max(b.len());
    Overlap {
        count,
        fraction: if denom == 0 { 0.0 } else { count as f64 / denom as f64 },
    }
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side is constant or the inputs are shorter than two.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    if a.len() < 2 {
        return None;
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - mean) * (y - mean);
        va += (x - mean) * (x - mean);
        vb += (y - mean) * (y - mean);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}
