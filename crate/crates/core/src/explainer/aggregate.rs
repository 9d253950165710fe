use std::collections::BTreeMap;
use std::path::Path;

use super::{AttributionRecord, GlobalWordScore, TopSelection};
use crate::error::{Error, Result};

/// Folds local attributions into one score per word: the sum of the word's
/// signed occurrence scores divided by its occurrence count.
///
/// Each word's scores are sorted before summation, so the result does not
/// depend on record order. Output is sorted by descending score, ties by word.
pub fn aggregate_global(records: &[AttributionRecord]) -> Result<Vec<GlobalWordScore>> {
    if let Some(first) = records.first() {
        if let Some(other) = records.iter().find(|r| r.target_class != first.target_class) {
            return Err(Error::Invalid(format!(
                "records target different classes (`{}` and `{}`)",
                first.target_class, other.target_class
            )));
        }
    }
    let mut per_word: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for record in records {
        for ts in &record.token_scores {
            per_word.entry(&ts.token).or_default().push(ts.score);
        }
    }
    let mut scores: Vec<GlobalWordScore> = per_word
        .into_iter()
        .map(|(word, mut values)| {
            values.sort_by(f64::total_cmp);
            let total: f64 = values.iter().sum();
            GlobalWordScore {
                word: word.to_string(),
                total,
                frequency: values.len(),
                score: total / values.len() as f64,
            }
        })
        .collect();
    scores.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.word.cmp(&b.word)));
    Ok(scores)
}

/// The leading words of a ranking.
pub fn select_top(scores: &[GlobalWordScore], selection: TopSelection) -> Result<Vec<String>> {
    selection.validate()?;
    if scores.is_empty() {
        return Err(Error::Invalid("cannot select from an empty ranking".into()));
    }
    let n = selection.count(scores.len());
    Ok(scores[..n].iter().map(|s| s.word.clone()).collect())
}

/// Writes a ranking as CSV with header `word,total,frequency,score`.
pub fn write_ranking_csv(path: impl AsRef<Path>, scores: &[GlobalWordScore]) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path)?;
    for s in scores {
        writer.serialize(s)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ranking_csv(path: impl AsRef<Path>) -> Result<Vec<GlobalWordScore>> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}
