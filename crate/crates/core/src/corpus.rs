//! Tokenized text corpora and their JSONL representation.
//!
//! Each line of a corpus file is a JSON object with a required `text`, an
//! optional `id` and an optional string `label`:
//!
//! ```text
//! {"id": "c1", "text": "I like this city!", "label": "non-toxic"}
//! {"text": "an unlabeled comment"}
//! ```
//!
//! Documents without an id get their zero-based position in the file.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::classifier::ClassProbabilities;
use crate::error::{Error, Result};

/// Splits `text` into lowercase word tokens.
///
/// A token is a maximal run of letters, digits and apostrophes with leading
/// and trailing apostrophes trimmed. Everything else separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        let ch = if ch == '\u{2019}' { '\'' } else { ch };
        if ch.is_alphanumeric() || ch == '\'' {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            push_token(&mut tokens, &current);
            current.clear();
        }
    }
    if !current.is_empty() {
        push_token(&mut tokens, &current);
    }
    tokens
}

fn push_token(tokens: &mut Vec<String>, run: &str) {
    let trimmed = run.trim_matches('\'');
    if !trimmed.is_empty() {
        tokens.push(trimmed.to_string());
    }
}

/// True when `word` survives tokenization unchanged as a single token.
pub fn is_canonical_token(word: &str) -> bool {
    let tokens = tokenize(word);
    tokens.len() == 1 && tokens[0] == word
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub label: Option<String>,
    pub predicted: Option<ClassProbabilities>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Option<String>) -> Self {
        let text = text.into();
        Document {
            id: id.into(),
            tokens: tokenize(&text),
            text,
            label,
            predicted: None,
        }
    }

    /// Builds a document whose text is its tokens joined by single spaces.
    pub fn from_tokens(id: impl Into<String>, tokens: Vec<String>, label: Option<String>) -> Self {
        Document {
            id: id.into(),
            text: tokens.join(" "),
            tokens,
            label,
            predicted: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledCorpus {
    pub documents: Vec<Document>,
    pub classes: BTreeSet<String>,
}

impl LabeledCorpus {
    /// Collects `documents`, deriving the class set from their labels.
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let classes = documents.iter().filter_map(|d| d.label.clone()).collect();
        Self::with_classes(documents, classes)
    }

    /// Like [`LabeledCorpus::new`] but with an explicit class set, which may
    /// contain classes no document carries.
    pub fn with_classes(documents: Vec<Document>, classes: BTreeSet<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(documents.len());
        for doc in &documents {
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::Invalid(format!("duplicate document id `{}`", doc.id)));
            }
            if let Some(label) = &doc.label {
                if !classes.contains(label) {
                    return Err(Error::UnknownClass(label.clone()));
                }
            }
        }
        Ok(LabeledCorpus { documents, classes })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    /// Classes carried by at least one document.
    pub fn present_classes(&self) -> BTreeSet<&str> {
        self.documents.iter().filter_map(|d| d.label.as_deref()).collect()
    }

    /// The labeled documents only, keeping the class set.
    pub fn labeled(&self) -> LabeledCorpus {
        LabeledCorpus {
            documents: self
                .documents
                .iter()
                .filter(|d| d.label.is_some())
                .cloned()
                .collect(),
            classes: self.classes.clone(),
        }
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<LabeledCorpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut documents = Vec::new();
    let mut ids = HashSet::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line_no = index + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = parse_record(&line, documents.len()).map_err(|m| Error::format(path, line_no, m))?;
        if !ids.insert(doc.id.clone()) {
            return Err(Error::format(path, line_no, format!("duplicate id `{}`", doc.id)));
        }
        documents.push(doc);
    }
    LabeledCorpus::new(documents)
}

fn parse_record(line: &str, position: usize) -> std::result::Result<Document, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("malformed JSON: {e}"))?;
    let Value::Object(map) = value else {
        return Err("record is not a JSON object".into());
    };
    let text = match map.get("text") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err("field `text` must be a string".into()),
        None => return Err("missing required field `text`".into()),
    };
    let label = match map.get("label") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(other) => return Err(format!("field `label` must be a string, found {other}")),
    };
    let id = match map.get("id") {
        None | Some(Value::Null) => position.to_string(),
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        Some(other) => return Err(format!("field `id` must be a string, found {other}")),
    };
    Ok(Document::new(id, text, label))
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    text: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<&'a str>,
}

pub fn save_corpus(corpus: &LabeledCorpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for doc in &corpus.documents {
        let record = RecordOut {
            id: &doc.id,
            text: &doc.text,
            label: doc.label.as_deref(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
