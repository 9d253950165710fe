use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::{Map, Value};

use super::ClassProbabilities;
use crate::corpus::LabeledCorpus;
use crate::error::{Error, Result};

/// Predictions produced outside this crate, resolved against a corpus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalPredictions {
    /// Keyed by document id; only ids present in the corpus.
    pub by_id: BTreeMap<String, ClassProbabilities>,
    /// Ids in the file that the corpus does not contain, in file order.
    pub unresolved: Vec<String>,
}

/// Reads a predictions JSONL file.
///
/// Each line carries an `id` plus class probabilities, either flat
/// (`{"id": "d1", "toxic": 0.8, "ok": 0.2}`) or nested under
/// `probabilities`.
pub fn load_external_predictions(path: impl AsRef<Path>, corpus: &LabeledCorpus) -> Result<ExternalPredictions> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let known: HashSet<&str> = corpus.documents.iter().map(|d| d.id.as_str()).collect();
    let mut seen = HashSet::new();
    let mut out = ExternalPredictions::default();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line_no = index + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, probs) = parse_line(&line).map_err(|m| Error::format(path, line_no, m))?;
        probs.validate().map_err(|e| Error::format(path, line_no, e.to_string()))?;
        if !seen.insert(id.clone()) {
            return Err(Error::format(path, line_no, format!("duplicate id `{id}`")));
        }
        if known.contains(id.as_str()) {
            out.by_id.insert(id, probs);
        } else {
            out.unresolved.push(id);
        }
    }
    Ok(out)
}

fn parse_line(line: &str) -> std::result::Result<(String, ClassProbabilities), String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("malformed JSON: {e}"))?;
    let Value::Object(mut map) = value else {
        return Err("record is not a JSON object".into());
    };
    let id = match map.remove("id") {
        Some(Value::String(s)) => s,
        Some(Value::Number(n)) => n.to_string(),
        _ => return Err("missing string field `id`".into()),
    };
    let probs_map: Map<String, Value> = match map.remove("probabilities") {
        Some(Value::Object(inner)) => inner,
        Some(_) => return Err("field `probabilities` must be an object".into()),
        None => map,
    };
    let mut probs = BTreeMap::new();
    for (class, v) in probs_map {
        let p = v
            .as_f64()
            .ok_or_else(|| format!("probability for class `{class}` is not a number"))?;
        probs.insert(class, p);
    }
    if probs.is_empty() {
        return Err("record carries no class probabilities".into());
    }
    Ok((id, ClassProbabilities(probs)))
}

/// Writes predictions in the flat JSONL layout read by
/// [`load_external_predictions`].
pub fn write_predictions<'a>(
    path: impl AsRef<Path>,
    predictions: impl IntoIterator<Item = (&'a str, &'a ClassProbabilities)>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (id, probs) in predictions {
        let mut map = Map::new();
        map.insert("id".into(), Value::String(id.to_string()));
        for (class, p) in &probs.0 {
            map.insert(class.clone(), Value::from(*p));
        }
        serde_json::to_writer(&mut out, &Value::Object(map))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
