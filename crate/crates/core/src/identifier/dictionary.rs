use std::collections::BTreeMap;
use std::path::Path;

use super::{Annotation, AnnotationSource, Annotator, ProtectedCategory};
use crate::corpus::tokenize;
use crate::error::{Error, Result};

const DEFAULT_TERMS: &str = include_str!("../../data/protected_terms.tsv");

/// A word list mapping identity terms to categories, with an optional score
/// per entry.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dictionary {
    entries: BTreeMap<String, (ProtectedCategory, u8)>,
}

fn normalize(word: &str) -> String {
    let tokens = tokenize(word);
    match tokens.as_slice() {
        [single] => single.clone(),
        _ => word.trim().to_lowercase(),
    }
}

impl Dictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// The bundled list of common identity terms.
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_TERMS, Path::new("<builtin>")).expect("bundled dictionary parses")
    }

    pub fn insert(&mut self, word: &str, category: ProtectedCategory) {
        self.entries.insert(normalize(word), (category, 100));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, word: &str) -> Option<ProtectedCategory> {
        self.entries.get(&normalize(word)).map(|(c, _)| *c)
    }

    /// Entries in word order: `(word, category, score)`.
    pub fn iter(&self) -> impl Iterator<Item = (&str, ProtectedCategory, u8)> {
        self.entries.iter().map(|(w, (c, s))| (w.as_str(), *c, *s))
    }

    /// TSV rows `word \t category \t score`; the score column may be omitted
    /// and defaults to 100. Rows whose category is `none` are skipped.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if !(2..=3).contains(&cols.len()) {
                return Err(Error::format(origin, i + 1, "expected `word<TAB>category[<TAB>score]`"));
            }
            let Some(category) =
                super::parse_optional_category(cols[1]).map_err(|e| Error::format(origin, i + 1, e.to_string()))?
            else {
                continue;
            };
            let score = match cols.get(2) {
                None => 100,
                Some(s) => s
                    .trim()
                    .parse::<u8>()
                    .ok()
                    .filter(|v| *v <= 100)
                    .ok_or_else(|| Error::format(origin, i + 1, format!("score `{s}` is not in 0..=100")))?,
            };
            let word = normalize(cols[0]);
            if word.is_empty() {
                return Err(Error::format(origin, i + 1, "empty word"));
            }
            entries.entry(word).or_insert((category, score));
        }
        Ok(Dictionary { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

impl FromIterator<(String, ProtectedCategory)> for Dictionary {
    fn from_iter<I: IntoIterator<Item = (String, ProtectedCategory)>>(iter: I) -> Self {
        let mut d = Dictionary::new();
        for (w, c) in iter {
            d.insert(&w, c);
        }
        d
    }
}

/// Hits get reliability 100; misses are annotated as not protected with
/// reliability 0, since absence from a list is not evidence.
pub fn identify_dictionary(words: &[String], dictionary: &Dictionary) -> Vec<Annotation> {
    words
        .iter()
        .map(|w| {
            let category = dictionary.lookup(w);
            Annotation {
                word: normalize(w),
                category,
                reliability: if category.is_some() { 100 } else { 0 },
                explanation: String::new(),
                source: AnnotationSource::Dictionary,
                tie: false,
            }
        })
        .collect()
}

impl Annotator for Dictionary {
    fn annotate(&self, words: &[String]) -> Result<Vec<Annotation>> {
        Ok(identify_dictionary(words, self))
    }
}
