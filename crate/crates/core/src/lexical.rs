//! Word embeddings (GloVe text format) and a flat hypernym lexicon.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

/// Cosine similarity, accumulated in `f64`. Errors on a zero vector or a
/// length mismatch.
pub fn cosine<T: Copy + Into<f64>>(u: &[T], v: &[T]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Invalid(format!("vector lengths differ ({} vs {})", u.len(), v.len())));
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a.into(), b.into());
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Invalid("cosine of a zero vector".into()));
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// Immutable word → vector table. Lookups are case-folded.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dimension: usize,
    words: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    /// Builds a table from rows; duplicate words (after case folding) keep
    /// their first vector.
    pub fn from_rows<I, S>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: AsRef<str>,
    {
        let mut table: Option<EmbeddingTable> = None;
        for (word, vector) in rows {
            let t = table.get_or_insert_with(|| EmbeddingTable {
                dimension: vector.len(),
                words: Vec::new(),
                data: Vec::new(),
                index: HashMap::new(),
            });
            t.push(word.as_ref(), &vector).map_err(Error::Invalid)?;
        }
        table.ok_or_else(|| Error::Invalid("embedding table is empty".into()))
    }

    fn push(&mut self, word: &str, vector: &[f32]) -> std::result::Result<bool, String> {
        if vector.is_empty() {
            return Err("vector has no components".into());
        }
        if vector.len() != self.dimension {
            return Err(format!("expected {} components, found {}", self.dimension, vector.len()));
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err("non-finite component".into());
        }
        let key = word.to_lowercase();
        if self.index.contains_key(&key) {
            return Ok(false);
        }
        self.index.insert(key.clone(), self.words.len());
        self.words.push(key);
        self.data.extend_from_slice(vector);
        Ok(true)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(&word.to_lowercase())
    }

    pub fn vector(&self, word: &str) -> Option<&[f32]> {
        self.index.get(&word.to_lowercase()).map(|&i| self.row(i))
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn similarity(&self, a: &str, b: &str) -> Result<f64> {
        let va = self.vector(a).ok_or_else(|| Error::NotFound(a.to_string()))?;
        let vb = self.vector(b).ok_or_else(|| Error::NotFound(b.to_string()))?;
        cosine(va, vb)
    }

    /// The `k` most similar other words by exact scan, most similar first,
    /// ties broken alphabetically. Zero vectors are never returned.
    pub fn k_nearest(&self, word: &str, k: usize) -> Result<Vec<String>> {
        self.k_nearest_where(word, k, |_| true)
    }

    /// [`k_nearest`](Self::k_nearest) restricted to candidates accepted by
    /// `keep`.
    pub fn k_nearest_where(&self, word: &str, k: usize, keep: impl Fn(&str) -> bool) -> Result<Vec<String>> {
        let key = word.to_lowercase();
        let &qi = self.index.get(&key).ok_or_else(|| Error::NotFound(format!("`{word}` in embeddings")))?;
        let query = self.row(qi);
        if query.iter().all(|x| *x == 0.0) {
            return Err(Error::Invalid(format!("`{word}` has a zero embedding")));
        }
        let mut scored: Vec<(f64, usize)> = (0..self.words.len())
            .filter(|&i| i != qi && keep(&self.words[i]))
            .filter_map(|i| cosine(query, self.row(i)).ok().map(|s| (s, i)))
            .collect();
        let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then_with(|| self.words[a.1].cmp(&self.words[b.1]));
        if k < scored.len() {
            scored.select_nth_unstable_by(k, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        Ok(scored.into_iter().map(|(_, i)| self.words[i].clone()).collect())
    }
}

/// Parses GloVe text: each line is a word followed by its components,
/// separated by whitespace. The first line fixes the dimension.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table: Option<EmbeddingTable> = None;
    let mut buffer = Vec::new();
    let mut duplicates = 0usize;
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line_no = index + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let word = fields.next().unwrap_or_default();
        buffer.clear();
        for field in fields {
            let value: f32 = field
                .parse()
                .map_err(|_| Error::format(path, line_no, format!("`{field}` is not a number")))?;
            buffer.push(value);
        }
        let t = table.get_or_insert_with(|| EmbeddingTable {
            dimension: buffer.len(),
            words: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        });
        match t.push(word, &buffer) {
            Ok(true) => {}
            Ok(false) => {
                duplicates += 1;
                log::warn!("{}:{line_no}: duplicate word `{word}` ignored", path.display());
            }
            Err(message) => return Err(Error::format(path, line_no, message)),
        }
    }
    if duplicates > 0 {
        log::warn!("{}: {duplicates} duplicate rows ignored", path.display());
    }
    table.ok_or_else(|| Error::Invalid(format!("{}: no embeddings, dimension cannot be determined", path.display())))
}

/// Word → first-level hypernym.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HypernymLexicon {
    entries: BTreeMap<String, String>,
}

impl HypernymLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an entry, case-folded. A word cannot be its own hypernym.
    pub fn insert(&mut self, word: &str, hypernym: &str) -> Result<()> {
        let (w, h) = (word.trim().to_lowercase(), hypernym.trim().to_lowercase());
        if w.is_empty() || h.is_empty() {
            return Err(Error::Invalid("empty hypernym entry".into()));
        }
        if w == h {
            return Err(Error::Invalid(format!("`{w}` mapped to itself")));
        }
        self.entries.insert(w, h);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&str> {
        self.entries.get(&word.to_lowercase()).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Two-column TSV: `word \t hypernym`. Later rows override earlier ones.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lexicon = HypernymLexicon::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 2 {
                return Err(Error::format(path, i + 1, "expected `word<TAB>hypernym`"));
            }
            lexicon
                .insert(cols[0], cols[1])
                .map_err(|e| Error::format(path, i + 1, e.to_string()))?;
        }
        Ok(lexicon)
    }
}

pub fn hypernym<'a>(lexicon: &'a HypernymLexicon, word: &str) -> Option<&'a str> {
    lexicon.get(word)
}
