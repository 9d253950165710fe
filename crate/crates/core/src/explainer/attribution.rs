use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{AttributionRecord, Predictor, TokenScore};
use crate::classifier::LinearModel;
use crate::corpus::{Document, LabeledCorpus};
use crate::error::{Error, Result};

/// Exact attribution for a linear model: every occurrence of a token scores
/// that token's weight for `target_class`.
pub fn attribute_linear(model: &LinearModel, doc: &Document, target_class: &str) -> Result<AttributionRecord> {
    let token_scores = doc
        .tokens
        .iter()
        .enumerate()
        .map(|(position, token)| {
            Ok(TokenScore {
                position,
                token: token.clone(),
                score: model.token_weight(token, target_class)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(AttributionRecord {
        document_id: doc.id.clone(),
        target_class: target_class.to_string(),
        token_scores,
    })
}

/// Leave-one-out attribution against any black-box predictor: the score at
/// position `i` is `p(target | doc) − p(target | doc without token i)`.
pub fn attribute_occlusion<P: Predictor + ?Sized>(
    predictor: &P,
    doc: &Document,
    target_class: &str,
) -> Result<AttributionRecord> {
    // (p(target), mass of the other classes)
    let prob = |tokens: &[String]| {
        let probs = predictor.predict_tokens(tokens);
        let p = probs
            .get(target_class)
            .ok_or_else(|| Error::UnknownClass(target_class.to_string()))?;
        let rest: f64 = probs.0.iter().filter(|(c, _)| *c != target_class).map(|(_, v)| v).sum();
        Ok::<_, Error>((p, rest))
    };
    let full = prob(&doc.tokens)?;
    // Near p = 1 a difference of probabilities is quantised to the spacing
    // of doubles around 1; the same difference taken on the other classes'
    // small mass keeps full precision. Only valid when the output sums to 1.
    let use_rest = full.0 > 0.5 && full.1 > 0.0 && (full.0 + full.1 - 1.0).abs() < 1e-9;
    let mut scratch = Vec::with_capacity(doc.tokens.len());
    let mut token_scores = Vec::with_capacity(doc.tokens.len());
    for (position, token) in doc.tokens.iter().enumerate() {
        scratch.clear();
        scratch.extend(doc.tokens[..position].iter().cloned());
        scratch.extend(doc.tokens[position + 1..].iter().cloned());
        token_scores.push(TokenScore {
            position,
            token: token.clone(),
            score: {
                let without = prob(&scratch)?;
                if use_rest {
                    without.1 - full.1
                } else {
                    full.0 - without.0
                }
            },
        });
    }
    Ok(AttributionRecord {
        document_id: doc.id.clone(),
        target_class: target_class.to_string(),
        token_scores,
    })
}

/// A record that failed validation against the corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordIssue {
    pub line: usize,
    pub document_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalAttributions {
    pub records: Vec<AttributionRecord>,
    pub rejected: Vec<RecordIssue>,
}

fn validate_record(record: &AttributionRecord, doc: &Document) -> std::result::Result<(), String> {
    if record.token_scores.len() != doc.tokens.len() {
        return Err(format!(
            "{} scores for {} tokens",
            record.token_scores.len(),
            doc.tokens.len()
        ));
    }
    for (i, (ts, token)) in record.token_scores.iter().zip(&doc.tokens).enumerate() {
        if ts.position != i {
            return Err(format!("position {} listed where {i} was expected", ts.position));
        }
        if &ts.token != token {
            return Err(format!("token mismatch at position {i}: `{}` vs corpus `{token}`", ts.token));
        }
        if !ts.score.is_finite() {
            return Err(format!("non-finite score at position {i}"));
        }
    }
    Ok(())
}

/// Reads attribution JSONL produced by an external tool and checks each
/// record against the corpus token sequence. Invalid records are reported
/// individually; unparseable lines fail the whole file.
pub fn load_external_attributions(path: impl AsRef<Path>, corpus: &LabeledCorpus) -> Result<ExternalAttributions> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let docs: HashMap<&str, &Document> = corpus.documents.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut seen = HashSet::new();
    let mut out = ExternalAttributions::default();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line_no = index + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AttributionRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => return Err(Error::format(path, line_no, e.to_string())),
        };
        let issue = |message: String| RecordIssue {
            line: line_no,
            document_id: record.document_id.clone(),
            message,
        };
        if !seen.insert((record.document_id.clone(), record.target_class.clone())) {
            out.rejected.push(issue("duplicate record".into()));
            continue;
        }
        match docs.get(record.document_id.as_str()) {
            None => out.rejected.push(issue("unknown document id".into())),
            Some(doc) => match validate_record(&record, doc) {
                Ok(()) => out.records.push(record),
                Err(message) => out.rejected.push(issue(message)),
            },
        }
    }
    Ok(out)
}

pub fn write_attributions(path: impl AsRef<Path>, records: &[AttributionRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
