//! Rewrites a training corpus so that protected words carry less signal.
//!
//! | strategy | effect on each in-scope occurrence |
//! |---|---|
//! | MS1 | drop the whole document |
//! | MS2 | delete the token |
//! | MS3 | replace with a random one of its k nearest neighbours |
//! | MS4 | keep the document and add k variants, one per neighbour |
//! | MS5 | replace with its hypernym |
//!
//! Documents outside the class scope, and documents without protected words,
//! are passed through untouched.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{is_canonical_token, tokenize, Document, LabeledCorpus};
use crate::error::{Error, Result};
use crate::identifier::{Annotation, ProtectedCategory};
use crate::lexical::{EmbeddingTable, HypernymLexicon};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "MS1", alias = "ms1")]
    Ms1,
    #[serde(rename = "MS2", alias = "ms2")]
    Ms2,
    #[serde(rename = "MS3", alias = "ms3")]
    Ms3,
    #[serde(rename = "MS4", alias = "ms4")]
    Ms4,
    #[serde(rename = "MS5", alias = "ms5")]
    Ms5,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [Strategy::Ms1, Strategy::Ms2, Strategy::Ms3, Strategy::Ms4, Strategy::Ms5];

    pub fn needs_embeddings(self) -> bool {
        matches!(self, Strategy::Ms3 | Strategy::Ms4)
    }

    pub fn needs_hypernyms(self) -> bool {
        self == Strategy::Ms5
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = Strategy::ALL.iter().position(|s| s == self).unwrap() + 1;
        write!(f, "MS{n}")
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Invalid(format!("unknown strategy `{s}` (expected MS1 to MS5)")))
    }
}

fn default_k() -> usize {
    5
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MitigationPlan {
    pub strategy: Strategy,
    #[serde(default)]
    pub protected_words: Vec<String>,
    /// Restricts which annotated words become protected words. Applied by
    /// [`scope_words`]; the strategies themselves only see `protected_words`.
    #[serde(default)]
    pub category_scope: Option<BTreeSet<ProtectedCategory>>,
    /// Only documents with this gold label are rewritten.
    #[serde(default)]
    pub class_scope: Option<String>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    /// MS4 only.
    #[serde(default = "default_true")]
    pub keep_original: bool,
}

impl MitigationPlan {
    pub fn new(strategy: Strategy, protected_words: Vec<String>) -> Self {
        MitigationPlan {
            strategy,
            protected_words,
            category_scope: None,
            class_scope: None,
            k: default_k(),
            seed: 0,
            keep_original: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Invalid("k must be at least 1".into()));
        }
        if self.protected_words.is_empty() {
            return Err(Error::Invalid("no protected words to mitigate".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MitigationDelta {
    pub strategy: Strategy,
    pub documents_removed: usize,
    pub documents_added: usize,
    pub tokens_removed: usize,
    pub tokens_replaced: usize,
}

impl MitigationDelta {
    fn zero(strategy: Strategy) -> Self {
        MitigationDelta {
            strategy,
            documents_removed: 0,
            documents_added: 0,
            tokens_removed: 0,
            tokens_replaced: 0,
        }
    }

    /// Net change in document count.
    pub fn document_change(&self) -> i64 {
        self.documents_added as i64 - self.documents_removed as i64
    }
}

/// Lexical resources a strategy may need.
#[derive(Debug, Clone, Copy, Default)]
pub struct Resources<'a> {
    pub embeddings: Option<&'a EmbeddingTable>,
    pub hypernyms: Option<&'a HypernymLexicon>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MitigationOutcome {
    pub corpus: LabeledCorpus,
    pub delta: MitigationDelta,
    pub warnings: Vec<String>,
}

/// Protected words among `annotations`, optionally limited to some
/// categories. Order follows the annotations; duplicates are dropped.
pub fn scope_words(annotations: &[Annotation], category_scope: Option<&BTreeSet<ProtectedCategory>>) -> Vec<String> {
    let mut seen = HashSet::new();
    annotations
        .iter()
        .filter(|a| a.category.is_some_and(|c| category_scope.is_none_or(|s| s.contains(&c))))
        .filter(|a| seen.insert(a.word.clone()))
        .map(|a| a.word.clone())
        .collect()
}

struct Ctx<'a> {
    plan: &'a MitigationPlan,
    protected: HashSet<String>,
}

impl Ctx<'_> {
    fn in_scope(&self, doc: &Document) -> bool {
        match &self.plan.class_scope {
            None => true,
            Some(class) => doc.label.as_deref() == Some(class.as_str()),
        }
    }

    fn touches(&self, doc: &Document) -> bool {
        self.in_scope(doc) && doc.tokens.iter().any(|t| self.protected.contains(t))
    }
}

/// Per-document result of a token rewrite.
struct Rewrite {
    doc: Document,
    removed: usize,
    replaced: usize,
}

fn rewrite_tokens(
    ctx: &Ctx,
    doc: &Document,
    mut replace: impl FnMut(usize, &str) -> Option<Vec<String>>,
) -> Rewrite {
    if !ctx.touches(doc) {
        return Rewrite {
            doc: doc.clone(),
            removed: 0,
            replaced: 0,
        };
    }
    let (mut removed, mut replaced) = (0, 0);
    let mut tokens = Vec::with_capacity(doc.tokens.len());
    for (position, token) in doc.tokens.iter().enumerate() {
        if !ctx.protected.contains(token) {
            tokens.push(token.clone());
            continue;
        }
        match replace(position, token) {
            None => removed += 1,
            Some(new) if new.len() == 1 && new[0] == *token => tokens.push(token.clone()),
            Some(new) => {
                replaced += 1;
                tokens.extend(new);
            }
        }
    }
    Rewrite {
        doc: Document::from_tokens(doc.id.clone(), tokens, doc.label.clone()),
        removed,
        replaced,
    }
}

fn collect_rewrites(
    corpus: &LabeledCorpus,
    strategy: Strategy,
    rewrites: Vec<Rewrite>,
    warnings: Vec<String>,
) -> Result<MitigationOutcome> {
    let mut delta = MitigationDelta::zero(strategy);
    let mut documents = Vec::with_capacity(rewrites.len());
    for r in rewrites {
        delta.tokens_removed += r.removed;
        delta.tokens_replaced += r.replaced;
        documents.push(r.doc);
    }
    Ok(MitigationOutcome {
        corpus: LabeledCorpus::with_classes(documents, corpus.classes.clone())?,
        delta,
        warnings,
    })
}

fn ms1(corpus: &LabeledCorpus, ctx: &Ctx) -> Result<MitigationOutcome> {
    let keep: Vec<bool> = corpus.documents.par_iter().map(|d| !ctx.touches(d)).collect();
    let documents: Vec<Document> = corpus
        .documents
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(d, _)| d.clone())
        .collect();
    let removed = corpus.len() - documents.len();
    let out = LabeledCorpus::with_classes(documents, corpus.classes.clone())?;
    let before = corpus.present_classes();
    let after = out.present_classes();
    if let Some(lost) = before.difference(&after).next() {
        return Err(Error::Mitigation(format!(
            "sentence removal leaves no training documents of class `{lost}`"
        )));
    }
    let mut delta = MitigationDelta::zero(Strategy::Ms1);
    delta.documents_removed = removed;
    Ok(MitigationOutcome {
        corpus: out,
        delta,
        warnings: Vec::new(),
    })
}

fn ms2(corpus: &LabeledCorpus, ctx: &Ctx) -> Result<MitigationOutcome> {
    let rewrites = corpus
        .documents
        .par_iter()
        .map(|d| rewrite_tokens(ctx, d, |_, _| None))
        .collect();
    collect_rewrites(corpus, Strategy::Ms2, rewrites, Vec::new())
}

/// Neighbour lists for each protected word; `None` where the word has no
/// embedding. Candidates are limited to words the tokenizer can produce.
fn neighbour_table(
    ctx: &Ctx,
    embeddings: &EmbeddingTable,
    warnings: &mut Vec<String>,
) -> Result<HashMap<String, Option<Vec<String>>>> {
    let mut table = HashMap::new();
    for word in &ctx.plan.protected_words {
        let word = word.to_lowercase();
        if table.contains_key(&word) {
            continue;
        }
        let neighbours = if embeddings.contains(&word) {
            match embeddings.k_nearest_where(&word, ctx.plan.k, is_canonical_token) {
                Ok(n) if !n.is_empty() => Some(n),
                Ok(_) => {
                    warnings.push(format!("`{word}` has no usable neighbours"));
                    None
                }
                Err(Error::Invalid(m)) => {
                    warnings.push(m);
                    None
                }
                Err(e) => return Err(e),
            }
        } else {
            warnings.push(format!("`{word}` is not in the embedding table"));
            None
        };
        table.insert(word, neighbours);
    }
    Ok(table)
}

/// Deterministic per-occurrence generator, independent of processing order.
fn occurrence_rng(seed: u64, doc_id: &str, position: usize) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((doc_id.len() as u64).to_le_bytes());
    hasher.update(doc_id.as_bytes());
    hasher.update((position as u64).to_le_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

fn ms3(corpus: &LabeledCorpus, ctx: &Ctx, embeddings: &EmbeddingTable) -> Result<MitigationOutcome> {
    let mut warnings = Vec::new();
    let neighbours = neighbour_table(ctx, embeddings, &mut warnings)?;
    for w in &warnings {
        log::warn!("MS3: {w}; occurrences will be deleted");
    }
    let rewrites = corpus
        .documents
        .par_iter()
        .map(|d| {
            rewrite_tokens(ctx, d, |position, token| {
                let options = neighbours.get(token)?.as_ref()?;
                let mut rng = occurrence_rng(ctx.plan.seed, &d.id, position);
                Some(vec![options[rng.random_range(0..options.len())].clone()])
            })
        })
        .collect();
    collect_rewrites(corpus, Strategy::Ms3, rewrites, warnings)
}

/// Id of the `j`-th (1-based) variant of `parent` for `word`.
pub fn ms4_variant_id(parent: &str, word: &str, j: usize) -> String {
    format!("{parent}~ms4:{word}:{j}")
}

fn ms4(corpus: &LabeledCorpus, ctx: &Ctx, embeddings: &EmbeddingTable) -> Result<MitigationOutcome> {
    let mut warnings = Vec::new();
    let neighbours = neighbour_table(ctx, embeddings, &mut warnings)?;
    for w in &warnings {
        log::warn!("MS4: {w}; no variants for it");
    }
    let expanded: Vec<(bool, Vec<Document>, usize)> = corpus
        .documents
        .par_iter()
        .map(|d| {
            if !ctx.touches(d) {
                return (false, Vec::new(), 0);
            }
            let mut types: Vec<&String> = Vec::new();
            for t in &d.tokens {
                if ctx.protected.contains(t) && !types.contains(&t) {
                    types.push(t);
                }
            }
            let mut variants = Vec::new();
            let mut replaced = 0;
            for word in types {
                let Some(Some(options)) = neighbours.get(word.as_str()) else { continue };
                let occurrences = d.tokens.iter().filter(|t| *t == word).count();
                for (j, neighbour) in options.iter().enumerate() {
                    let tokens = d
                        .tokens
                        .iter()
                        .map(|t| if t == word { neighbour.clone() } else { t.clone() })
                        .collect();
                    variants.push(Document::from_tokens(ms4_variant_id(&d.id, word, j + 1), tokens, d.label.clone()));
                    replaced += occurrences;
                }
            }
            (true, variants, replaced)
        })
        .collect();

    let mut delta = MitigationDelta::zero(Strategy::Ms4);
    let mut documents = Vec::with_capacity(corpus.len());
    let mut added = Vec::new();
    let mut dropped = 0;
    for (doc, (touched, variants, replaced)) in corpus.documents.iter().zip(expanded) {
        if touched && !ctx.plan.keep_original {
            dropped += 1;
        } else {
            documents.push(doc.clone());
        }
        delta.tokens_replaced += replaced;
        added.extend(variants);
    }
    // report the net change so only one of added/removed is non-zero
    let n_added = added.len();
    if n_added >= dropped {
        delta.documents_added = n_added - dropped;
    } else {
        delta.documents_removed = dropped - n_added;
    }
    documents.extend(added);
    let out = LabeledCorpus::with_classes(documents, corpus.classes.clone())?;
    if let Some(lost) = corpus.present_classes().difference(&out.present_classes()).next() {
        return Err(Error::Mitigation(format!("expansion leaves no documents of class `{lost}`")));
    }
    Ok(MitigationOutcome {
        corpus: out,
        delta,
        warnings,
    })
}

fn ms5(corpus: &LabeledCorpus, ctx: &Ctx, lexicon: &HypernymLexicon) -> Result<MitigationOutcome> {
    let mut warnings = Vec::new();
    let mut replacements: HashMap<String, Vec<String>> = HashMap::new();
    for word in &ctx.plan.protected_words {
        let word = word.to_lowercase();
        if replacements.contains_key(&word) {
            continue;
        }
        match lexicon.get(&word) {
            Some(h) => {
                let tokens = tokenize(h);
                if tokens.is_empty() {
                    warnings.push(format!("hypernym of `{word}` has no tokens; left unchanged"));
                    replacements.insert(word.clone(), vec![word]);
                } else {
                    replacements.insert(word, tokens);
                }
            }
            None => {
                warnings.push(format!("`{word}` has no hypernym; left unchanged"));
                replacements.insert(word.clone(), vec![word]);
            }
        }
    }
    for w in &warnings {
        log::warn!("MS5: {w}");
    }
    let rewrites = corpus
        .documents
        .par_iter()
        .map(|d| rewrite_tokens(ctx, d, |_, token| replacements.get(token).cloned()))
        .collect();
    collect_rewrites(corpus, Strategy::Ms5, rewrites, warnings)
}

/// Applies `plan` to `corpus`.
pub fn moderate(corpus: &LabeledCorpus, plan: &MitigationPlan, resources: Resources) -> Result<MitigationOutcome> {
    plan.validate()?;
    if let Some(class) = &plan.class_scope {
        if !corpus.classes.contains(class) {
            return Err(Error::UnknownClass(class.clone()));
        }
    }
    let ctx = Ctx {
        plan,
        protected: plan.protected_words.iter().map(|w| w.to_lowercase()).collect(),
    };
    let missing = |what: &str| Error::Invalid(format!("strategy {} needs {what}", plan.strategy));
    match plan.strategy {
        Strategy::Ms1 => ms1(corpus, &ctx),
        Strategy::Ms2 => ms2(corpus, &ctx),
        Strategy::Ms3 => ms3(corpus, &ctx, resources.embeddings.ok_or_else(|| missing("embeddings"))?),
        Strategy::Ms4 => ms4(corpus, &ctx, resources.embeddings.ok_or_else(|| missing("embeddings"))?),
        Strategy::Ms5 => ms5(corpus, &ctx, resources.hypernyms.ok_or_else(|| missing("a hypernym lexicon"))?),
    }
}
