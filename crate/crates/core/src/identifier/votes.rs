use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Annotation, AnnotationSource, ProtectedCategory};
use crate::error::{Error, Result};

/// Answer labels for the 1 to 5 trap scale.
pub const LIKERT_LABELS: [&str; 5] = ["Not at all", "Very little", "Somewhat", "To a great extent", "Definitely"];

pub fn category_question(word: &str) -> String {
    format!("Is the word {word} referring to:")
}

pub fn trap_question(word: &str) -> String {
    format!("Does the word {word} suggest toxic language?")
}

/// One annotator's answer to the category question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum VoteChoice {
    Category(ProtectedCategory),
    NoneOfTheAbove,
}

impl fmt::Display for VoteChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VoteChoice::Category(c) => f.write_str(c.as_str()),
            VoteChoice::NoneOfTheAbove => f.write_str("none"),
        }
    }
}

impl FromStr for VoteChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let none = ["none", "none_of_the_above", "none of the above"];
        if none.iter().any(|n| t.eq_ignore_ascii_case(n)) {
            Ok(VoteChoice::NoneOfTheAbove)
        } else {
            t.parse().map(VoteChoice::Category)
        }
    }
}

impl From<VoteChoice> for String {
    fn from(v: VoteChoice) -> Self {
        v.to_string()
    }
}

impl TryFrom<String> for VoteChoice {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteSheet {
    pub word: String,
    pub votes: BTreeMap<VoteChoice, u32>,
}

impl VoteSheet {
    pub fn new(word: impl Into<String>) -> Self {
        VoteSheet {
            word: word.into(),
            votes: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, choice: VoteChoice) {
        *self.votes.entry(choice).or_default() += 1;
    }

    pub fn total(&self) -> u64 {
        self.votes.values().map(|&v| u64::from(v)).sum()
    }
}

/// Protected iff the category votes together strictly outnumber
/// none-of-the-above. The category is the plurality one; an exact tie goes to
/// the alphabetically first name and sets `tie`. Reliability is the share of
/// votes on the winning side, in percent.
pub fn majority_vote(sheet: &VoteSheet) -> Result<Annotation> {
    let total = sheet.total();
    if total == 0 {
        return Err(Error::Invalid(format!("no votes for `{}`", sheet.word)));
    }
    let none = u64::from(sheet.votes.get(&VoteChoice::NoneOfTheAbove).copied().unwrap_or(0));
    let categories = total - none;
    let protected = categories > none;

    let (category, tie) = if protected {
        let best = sheet
            .votes
            .iter()
            .filter(|(c, _)| matches!(c, VoteChoice::Category(_)))
            .map(|(_, &v)| v)
            .max()
            .unwrap_or(0);
        let mut leaders = sheet.votes.iter().filter_map(|(c, &v)| match c {
            VoteChoice::Category(cat) if v == best => Some(*cat),
            _ => None,
        });
        // BTreeMap order is the enum order, which is alphabetical
        let first = leaders.next();
        (first, leaders.next().is_some())
    } else {
        (None, false)
    };
    let winning = if protected { categories } else { none };
    Ok(Annotation {
        word: sheet.word.clone(),
        category,
        reliability: ((200 * winning + total) / (2 * total)) as u8,
        explanation: format!("{categories} category votes, {none} none"),
        source: AnnotationSource::Human,
        tie,
    })
}

/// The expected answer range for a trap word on the 1 to 5 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrapBand {
    /// 1 or 2.
    Low,
    /// 4 or 5.
    High,
}

impl TrapBand {
    pub fn accepts(self, score: u8) -> bool {
        match self {
            TrapBand::Low => (1..=2).contains(&score),
            TrapBand::High => (4..=5).contains(&score),
        }
    }
}

impl FromStr for TrapBand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "low" | "non-toxic" | "nontoxic" => Ok(TrapBand::Low),
            "high" | "toxic" => Ok(TrapBand::High),
            other => Err(Error::Invalid(format!("unknown trap band `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrapItem {
    pub word: String,
    pub expected_band: TrapBand,
}

const LOW_TRAPS: [&str; 12] = [
    "beautiful", "good", "trustful", "love", "great", "curiosity", "generous", "friendly", "sweet", "happy", "helpful",
    "loyal",
];
const HIGH_TRAPS: [&str; 3] = ["asshole", "dickhead", "motherfucker"];

/// The fifteen standard trap words.
pub fn default_traps() -> Vec<TrapItem> {
    let item = |band| move |w: &&str| TrapItem {
        word: w.to_string(),
        expected_band: band,
    };
    LOW_TRAPS
        .iter()
        .map(item(TrapBand::Low))
        .chain(HIGH_TRAPS.iter().map(item(TrapBand::High)))
        .collect()
}

/// Trap fixture as TSV `word \t band`, band being `low`/`high` or
/// `non-toxic`/`toxic`.
pub fn load_traps(path: impl AsRef<Path>) -> Result<Vec<TrapItem>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (word, band) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(path, i + 1, "expected `word<TAB>band`"))?;
        out.push(TrapItem {
            word: word.trim().to_lowercase(),
            expected_band: band.parse().map_err(|e: Error| Error::format(path, i + 1, e.to_string()))?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum TrapVerdict {
    Reliable,
    Rejected { violations: Vec<String> },
}

impl TrapVerdict {
    pub fn is_reliable(&self) -> bool {
        matches!(self, TrapVerdict::Reliable)
    }
}

/// A session is reliable iff every presented trap was answered inside its
/// band. An unanswered trap counts as a violation.
pub fn trap_filter(session: &[(String, u8)], traps: &[TrapItem]) -> TrapVerdict {
    let answers: BTreeMap<&str, u8> = session.iter().map(|(w, s)| (w.as_str(), *s)).collect();
    let violations: Vec<String> = traps
        .iter()
        .filter(|t| !answers.get(t.word.as_str()).is_some_and(|s| t.expected_band.accepts(*s)))
        .map(|t| t.word.clone())
        .collect();
    if violations.is_empty() {
        TrapVerdict::Reliable
    } else {
        TrapVerdict::Rejected { violations }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ProtectedCategory::*;

    fn sheet(entries: &[(VoteChoice, u32)]) -> VoteSheet {
        VoteSheet {
            word: "w".into(),
            votes: entries.iter().copied().collect(),
        }
    }

    const NONE: VoteChoice = VoteChoice::NoneOfTheAbove;

    #[test]
    fn strict_majority_rule() {
        let a = majority_vote(&sheet(&[(VoteChoice::Category(Race), 3), (NONE, 2)])).unwrap();
        assert_eq!((a.category, a.reliability), (Some(Race), 60));
        let a = majority_vote(&sheet(&[(NONE, 5)])).unwrap();
        assert_eq!((a.category, a.reliability), (None, 100));
        let a = majority_vote(&sheet(&[(VoteChoice::Category(Race), 2), (VoteChoice::Category(Sex), 1), (NONE, 3)]))
            .unwrap();
        assert_eq!(a.category, None);
        assert!(majority_vote(&sheet(&[])).is_err());
    }

    #[test]
    fn category_ties_are_flagged() {
        let a = majority_vote(&sheet(&[(VoteChoice::Category(Sex), 2), (VoteChoice::Category(Race), 2)])).unwrap();
        assert_eq!(a.category, Some(Race));
        assert!(a.tie);
        let a = majority_vote(&sheet(&[(VoteChoice::Category(Sex), 3), (VoteChoice::Category(Race), 2)])).unwrap();
        assert_eq!(a.category, Some(Sex));
        assert!(!a.tie);
    }

    #[test]
    fn vote_choice_strings() {
        assert_eq!(VoteChoice::Category(SexualOrientation).to_string(), "sexual_orientation");
        assert_eq!("None of the above".replace(' ', "_").parse::<VoteChoice>().unwrap(), NONE);
        let json = serde_json::to_string(&sheet(&[(NONE, 1)])).unwrap();
        assert_eq!(json, r#"{"word":"w","votes":{"none":1}}"#);
    }

    fn answers(v: &[(&str, u8)]) -> Vec<(String, u8)> {
        v.iter().map(|(w, s)| (w.to_string(), *s)).collect()
    }

    #[test]
    fn trap_examples() {
        let traps = vec![
            TrapItem {
                word: "friendly".into(),
                expected_band: TrapBand::Low,
            },
            TrapItem {
                word: "asshole".into(),
                expected_band: TrapBand::High,
            },
        ];
        assert!(trap_filter(&answers(&[("friendly", 1), ("asshole", 5)]), &traps).is_reliable());
        assert!(!trap_filter(&answers(&[("friendly", 4), ("asshole", 5)]), &traps).is_reliable());
        assert!(!trap_filter(&answers(&[("friendly", 2), ("asshole", 3)]), &traps).is_reliable());
        assert!(!trap_filter(&answers(&[("friendly", 2)]), &traps).is_reliable());
    }

    #[test]
    fn default_fixture() {
        let traps = default_traps();
        assert_eq!(traps.len(), 15);
        assert_eq!(traps.iter().filter(|t| t.expected_band == TrapBand::High).count(), 3);
    }

    #[test]
    fn trap_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traps.tsv");
        std::fs::write(&path, "Good\tnon-toxic\nasshole\thigh\n").unwrap();
        let traps = load_traps(&path).unwrap();
        assert_eq!(traps[0].word, "good");
        assert_eq!(traps[1].expected_band, TrapBand::High);
        std::fs::write(&path, "good\tmaybe\n").unwrap();
        assert!(load_traps(&path).is_err());
    }
}
