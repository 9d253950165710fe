//! Deciding which important words refer to protected attributes.
//!
//! Three backends produce [`Annotation`]s: a static dictionary, an LLM
//! queried through a fixed prompt protocol, and human votes collected with
//! trap questions and majority voting. [`cohen_kappa`] compares any two of
//! them.

mod agreement;
mod dictionary;
pub mod llm;
mod votes;

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use agreement::{cohen_kappa, cohen_kappa_by, kappa_for_display};
pub use dictionary::{identify_dictionary, Dictionary};
pub use llm::{format_llm_reply, identify_llm, parse_llm_reply, LlmAnnotator, LlmConfig, LlmOutcome};
pub use votes::{
    category_question, default_traps, load_traps, majority_vote, trap_filter, trap_question, TrapBand, TrapItem,
    TrapVerdict, VoteChoice, VoteSheet, LIKERT_LABELS,
};

/// The nine protected characteristics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtectedCategory {
    Age,
    Disability,
    GenderReassignment,
    MarriageCivilPartnership,
    PregnancyMaternity,
    Race,
    ReligionBelief,
    Sex,
    SexualOrientation,
}

impl ProtectedCategory {
    pub const ALL: [ProtectedCategory; 9] = [
        ProtectedCategory::Age,
        ProtectedCategory::Disability,
        ProtectedCategory::GenderReassignment,
        ProtectedCategory::MarriageCivilPartnership,
        ProtectedCategory::PregnancyMaternity,
        ProtectedCategory::Race,
        ProtectedCategory::ReligionBelief,
        ProtectedCategory::Sex,
        ProtectedCategory::SexualOrientation,
    ];

    /// Machine name, as used in files and JSON.
    pub fn as_str(self) -> &'static str {
        match self {
            ProtectedCategory::Age => "age",
            ProtectedCategory::Disability => "disability",
            ProtectedCategory::GenderReassignment => "gender_reassignment",
            ProtectedCategory::MarriageCivilPartnership => "marriage_civil_partnership",
            ProtectedCategory::PregnancyMaternity => "pregnancy_maternity",
            ProtectedCategory::Race => "race",
            ProtectedCategory::ReligionBelief => "religion_belief",
            ProtectedCategory::Sex => "sex",
            ProtectedCategory::SexualOrientation => "sexual_orientation",
        }
    }

    /// Human-readable name, as used in prompts and the annotation UI.
    pub fn display_name(self) -> &'static str {
        match self {
            ProtectedCategory::Age => "Age",
            ProtectedCategory::Disability => "Disability",
            ProtectedCategory::GenderReassignment => "Gender reassignment",
            ProtectedCategory::MarriageCivilPartnership => "Marriage and civil partnership",
            ProtectedCategory::PregnancyMaternity => "Pregnancy and maternity",
            ProtectedCategory::Race => "Race",
            ProtectedCategory::ReligionBelief => "Religion and belief",
            ProtectedCategory::Sex => "Sex",
            ProtectedCategory::SexualOrientation => "Sexual orientation",
        }
    }
}

impl fmt::Display for ProtectedCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProtectedCategory {
    type Err = Error;

    /// Accepts machine names and display names, case-insensitively, plus
    /// "religion or belief".
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_lowercase();
        if norm == "religion or belief" {
            return Ok(ProtectedCategory::ReligionBelief);
        }
        ProtectedCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == norm || c.display_name().to_lowercase() == norm)
            .ok_or_else(|| Error::Invalid(format!("unknown protected category `{}`", s.trim())))
    }
}

/// Parses a category column where `none` (or an empty field) means no
/// category.
pub fn parse_optional_category(s: &str) -> Result<Option<ProtectedCategory>> {
    let t = s.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        t.parse().map(Some)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationSource {
    Dictionary,
    Llm,
    Human,
    Expert,
}

impl AnnotationSource {
    pub fn as_str(self) -> &'static str {
        match self {
            AnnotationSource::Dictionary => "dictionary",
            AnnotationSource::Llm => "llm",
            AnnotationSource::Human => "human",
            AnnotationSource::Expert => "expert",
        }
    }
}

impl FromStr for AnnotationSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "dictionary" => Ok(AnnotationSource::Dictionary),
            "llm" => Ok(AnnotationSource::Llm),
            "human" => Ok(AnnotationSource::Human),
            "expert" => Ok(AnnotationSource::Expert),
            other => Err(Error::Invalid(format!("unknown annotation source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub word: String,
    pub category: Option<ProtectedCategory>,
    /// 0 to 100.
    pub reliability: u8,
    pub explanation: String,
    pub source: AnnotationSource,
    /// Set when the category was chosen by tie-break between equal vote counts.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub tie: bool,
}

impl Annotation {
    pub fn is_protected(&self) -> bool {
        self.category.is_some()
    }
}

/// A backend that annotates a batch of words. Words it could not annotate
/// are left out of the result.
pub trait Annotator {
    fn annotate(&self, words: &[String]) -> Result<Vec<Annotation>>;
}

/// Annotations as TSV: `word`, `category` (or `none`), `reliability`,
/// `source`.
pub fn format_annotations_tsv(annotations: &[Annotation]) -> String {
    let mut out = String::new();
    for a in annotations {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            a.word,
            a.category.map_or("none", ProtectedCategory::as_str),
            a.reliability,
            a.source.as_str()
        ));
    }
    out
}

pub fn write_annotations_tsv(path: impl AsRef<Path>, annotations: &[Annotation]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_annotations_tsv(annotations)).map_err(|e| Error::io(path, e))
}

pub fn parse_annotations_tsv(text: &str, origin: &Path) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::format(origin, i + 1, format!("expected 4 columns, found {}", cols.len())));
        }
        let category = parse_optional_category(cols[1]).map_err(|e| Error::format(origin, i + 1, e.to_string()))?;
        let reliability: u8 = cols[2]
            .trim()
            .parse()
            .ok()
            .filter(|r| *r <= 100)
            .ok_or_else(|| Error::format(origin, i + 1, format!("reliability `{}` is not in 0..=100", cols[2])))?;
        let source = cols[3].parse().map_err(|e: Error| Error::format(origin, i + 1, e.to_string()))?;
        out.push(Annotation {
            word: cols[0].trim().to_lowercase(),
            category,
            reliability,
            explanation: String::new(),
            source,
            tie: false,
        });
    }
    Ok(out)
}

pub fn read_annotations_tsv(path: impl AsRef<Path>) -> Result<Vec<Annotation>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line.map_err(|e| Error::io(path, e))?);
        text.push('\n');
    }
    parse_annotations_tsv(&text, path)
}

/// Serves annotations read from a file; words missing from the file are
/// left unannotated.
pub struct FileAnnotator {
    pub annotations: Vec<Annotation>,
}

impl Annotator for FileAnnotator {
    fn annotate(&self, words: &[String]) -> Result<Vec<Annotation>> {
        Ok(words
            .iter()
            .filter_map(|w| self.annotations.iter().find(|a| &a.word == w).cloned())
            .collect())
    }
}
