//! State of the annotation service, rebuilt from an append-only event log.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use fairlex::identifier::{
    cohen_kappa, kappa_for_display, majority_vote, parse_annotations_tsv, trap_filter, Annotation, TrapItem,
    TrapVerdict, VoteChoice, VoteSheet,
};
use fairlex::Error;
use serde::{Deserialize, Serialize};

/// Name of the source built from the crowd's current decisions.
pub const CROWD_SOURCE: &str = "crowd";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionSettings {
    /// Real words per session.
    pub words_per_session: usize,
    /// One trap after every this many words; 0 disables traps.
    pub trap_every: usize,
    /// Words stop being assigned once this many live sessions hold them.
    pub target_votes: usize,
}

impl Default for SessionSettings {
    fn default() -> Self {
        SessionSettings {
            words_per_session: 20,
            trap_every: 4,
            target_votes: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub word: String,
    pub trap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
enum Event {
    Assign {
        session: String,
        items: Vec<Item>,
    },
    Response {
        session: String,
        word: String,
        choice: VoteChoice,
        likert: u8,
    },
    Source {
        name: String,
        protected: BTreeMap<String, bool>,
    },
}

#[derive(Debug, Clone, Default)]
struct Session {
    items: Vec<Item>,
    answers: BTreeMap<String, (VoteChoice, u8)>,
    verdict: Option<TrapVerdict>,
}

impl Session {
    fn next_item(&self) -> Option<&Item> {
        self.items.iter().find(|i| !self.answers.contains_key(&i.word))
    }

    /// Still collecting answers, or finished and reliable.
    fn counts_towards_load(&self) -> bool {
        self.verdict.as_ref().is_none_or(TrapVerdict::is_reliable)
    }
}

/// A request the store refuses, with the HTTP status it maps to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rejection {
    BadRequest(String),
    NotFound(String),
    Conflict(String),
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rejection::BadRequest(m) | Rejection::NotFound(m) | Rejection::Conflict(m) => f.write_str(m),
        }
    }
}

#[derive(Debug)]
pub enum StoreError {
    Rejected(Rejection),
    Io(std::io::Error),
}

impl From<Rejection> for StoreError {
    fn from(r: Rejection) -> Self {
        StoreError::Rejected(r)
    }
}

impl std::fmt::Display for StoreError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StoreError::Rejected(r) => r.fmt(f),
            StoreError::Io(e) => write!(f, "votes store: {e}"),
        }
    }
}

impl std::error::Error for StoreError {}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Progress {
    pub answered: usize,
    pub total: usize,
}

/// What a session should do next.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum Task {
    Item { word: String, progress: Progress },
    Complete { reliable: Option<bool>, progress: Progress },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Ack {
    Recorded,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WordTally {
    pub word: String,
    pub votes: BTreeMap<VoteChoice, u32>,
    pub total: u64,
    /// `None` until the word has a counted vote.
    pub decision: Option<Annotation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct SessionCounts {
    pub in_progress: usize,
    pub reliable: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tallies {
    pub words: Vec<WordTally>,
    pub sessions: SessionCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaCell {
    pub a: String,
    pub b: String,
    /// Words annotated by both sources.
    pub words: usize,
    pub kappa: f64,
    pub display: f64,
}

pub struct Store {
    words: Vec<String>,
    traps: Vec<TrapItem>,
    settings: SessionSettings,
    sessions: BTreeMap<String, Session>,
    sources: BTreeMap<String, BTreeMap<String, bool>>,
    traps_assigned: usize,
    log: Option<(PathBuf, File)>,
}

impl Store {
    /// In-memory store; nothing survives a restart.
    pub fn in_memory(words: Vec<String>, traps: Vec<TrapItem>, settings: SessionSettings) -> Result<Self, Error> {
        let mut seen = BTreeSet::new();
        let words: Vec<String> = words.into_iter().filter(|w| seen.insert(w.clone())).collect();
        if words.is_empty() {
            return Err(Error::Invalid("the word list is empty".into()));
        }
        if settings.words_per_session == 0 || settings.target_votes == 0 {
            return Err(Error::Invalid("words per session and target votes must be positive".into()));
        }
        if settings.trap_every > 0 && traps.is_empty() {
            return Err(Error::Invalid("traps are enabled but the trap list is empty".into()));
        }
        Ok(Store {
            words,
            traps,
            settings,
            sessions: BTreeMap::new(),
            sources: BTreeMap::new(),
            traps_assigned: 0,
            log: None,
        })
    }

    /// Store backed by the JSONL log at `path`, replaying whatever it holds.
    /// A torn final line, left by a crash mid-append, is dropped.
    pub fn open(
        path: impl AsRef<Path>,
        words: Vec<String>,
        traps: Vec<TrapItem>,
        settings: SessionSettings,
    ) -> Result<Self, Error> {
        let path = path.as_ref().to_path_buf();
        let mut store = Store::in_memory(words, traps, settings)?;
        if path.exists() {
            let file = File::open(&path).map_err(|e| io_error(&path, e))?;
            let lines: Vec<String> = BufReader::new(file)
                .lines()
                .collect::<Result<_, _>>()
                .map_err(|e| io_error(&path, e))?;
            let last = lines.len();
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Event>(line) {
                    Ok(event) => store.apply(event),
                    Err(e) if i + 1 == last => log::warn!("{}: dropping incomplete last line: {e}", path.display()),
                    Err(e) => {
                        return Err(Error::Format {
                            path: path.clone(),
                            line: i + 1,
                            message: e.to_string(),
                        })
                    }
                }
            }
            if lines.last().is_some_and(|l| serde_json::from_str::<Event>(l).is_err()) {
                // rewrite without the torn line so later appends start clean
                let kept: String = lines[..last - 1].iter().map(|l| format!("{l}\n")).collect();
                std::fs::write(&path, kept).map_err(|e| io_error(&path, e))?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_error(&path, e))?;
        store.log = Some((path, file));
        Ok(store)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    fn apply(&mut self, event: Event) {
        match event {
            Event::Assign { session, items } => {
                self.traps_assigned += items.iter().filter(|i| i.trap).count();
                self.sessions.insert(
                    session,
                    Session {
                        items,
                        ..Session::default()
                    },
                );
            }
            Event::Response {
                session,
                word,
                choice,
                likert,
            } => {
                let Some(s) = self.sessions.get_mut(&session) else {
                    log::warn!("response for unknown session `{session}` ignored");
                    return;
                };
                s.answers.entry(word).or_insert((choice, likert));
                if s.verdict.is_none() && s.next_item().is_none() {
                    let answers: Vec<(String, u8)> = s
                        .items
                        .iter()
                        .filter(|i| i.trap)
                        .map(|i| (i.word.clone(), s.answers[&i.word].1))
                        .collect();
                    let presented: Vec<TrapItem> = self
                        .traps
                        .iter()
                        .filter(|t| s.items.iter().any(|i| i.trap && i.word == t.word))
                        .cloned()
                        .collect();
                    s.verdict = Some(trap_filter(&answers, &presented));
                }
            }
            Event::Source { name, protected } => {
                self.sources.insert(name, protected);
            }
        }
    }

    /// Persists `event` durably, then applies it.
    fn commit(&mut self, event: Event) -> Result<(), StoreError> {
        if let Some((_, file)) = &mut self.log {
            let mut line = serde_json::to_string(&event).expect("events serialize");
            line.push('\n');
            file.write_all(line.as_bytes()).map_err(StoreError::Io)?;
            file.sync_data().map_err(StoreError::Io)?;
        }
        self.apply(event);
        Ok(())
    }

    /// Live sessions holding each word.
    fn load(&self) -> BTreeMap<&str, usize> {
        let mut load = BTreeMap::new();
        for s in self.sessions.values().filter(|s| s.counts_towards_load()) {
            for item in s.items.iter().filter(|i| !i.trap) {
                *load.entry(item.word.as_str()).or_insert(0) += 1;
            }
        }
        load
    }

    /// Least-held words first, in word-list order among equals, with traps
    /// interleaved.
    fn plan(&self) -> Vec<Item> {
        let load = self.load();
        let mut candidates: Vec<(usize, usize, &String)> = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (load.get(w.as_str()).copied().unwrap_or(0), i, w))
            .filter(|(l, _, _)| *l < self.settings.target_votes)
            .collect();
        candidates.sort();
        let chosen: Vec<&String> = candidates
            .into_iter()
            .take(self.settings.words_per_session)
            .map(|(_, _, w)| w)
            .collect();

        let mut items = Vec::new();
        let mut next_trap = self.traps_assigned;
        let every = self.settings.trap_every;
        let mut push_trap = |items: &mut Vec<Item>| {
            let taken: BTreeSet<&str> = chosen.iter().map(|w| w.as_str()).collect();
            let used: BTreeSet<String> = items.iter().filter(|i: &&Item| i.trap).map(|i| i.word.clone()).collect();
            for _ in 0..self.traps.len() {
                let trap = &self.traps[next_trap % self.traps.len()];
                next_trap += 1;
                if !taken.contains(trap.word.as_str()) && !used.contains(&trap.word) {
                    items.push(Item {
                        word: trap.word.clone(),
                        trap: true,
                    });
                    return;
                }
            }
        };
        for (i, w) in chosen.iter().enumerate() {
            items.push(Item {
                word: (*w).clone(),
                trap: false,
            });
            if every > 0 && (i + 1) % every == 0 {
                push_trap(&mut items);
            }
        }
        if every > 0 && !chosen.is_empty() && !items.iter().any(|i| i.trap) {
            push_trap(&mut items);
        }
        items
    }

    fn progress(session: &Session) -> Progress {
        Progress {
            answered: session.answers.len(),
            total: session.items.len(),
        }
    }

    /// The next task of `session`, assigning a plan on first contact.
    pub fn task(&mut self, session: &str) -> Result<Task, StoreError> {
        if session.trim().is_empty() || session.len() > 128 {
            return Err(Rejection::BadRequest("session token must be 1 to 128 characters".into()).into());
        }
        if !self.sessions.contains_key(session) {
            let items = self.plan();
            self.commit(Event::Assign {
                session: session.to_string(),
                items,
            })?;
        }
        let s = &self.sessions[session];
        Ok(match s.next_item() {
            Some(item) => Task::Item {
                word: item.word.clone(),
                progress: Self::progress(s),
            },
            None => Task::Complete {
                reliable: s.verdict.as_ref().map(TrapVerdict::is_reliable),
                progress: Self::progress(s),
            },
        })
    }

    /// Records an answer. Repeating an identical answer is acknowledged
    /// without effect; changing a recorded one is refused.
    pub fn respond(&mut self, session: &str, word: &str, choice: &str, likert: u8) -> Result<Ack, StoreError> {
        let s = self
            .sessions
            .get(session)
            .ok_or_else(|| Rejection::NotFound(format!("unknown session `{session}`")))?;
        if !s.items.iter().any(|i| i.word == word) {
            return Err(Rejection::BadRequest(format!("`{word}` is not part of session `{session}`")).into());
        }
        let choice: VoteChoice = choice
            .parse()
            .map_err(|e: Error| Rejection::BadRequest(format!("category choice: {e}")))?;
        if !(1..=5).contains(&likert) {
            return Err(Rejection::BadRequest(format!("likert must be 1 to 5, got {likert}")).into());
        }
        if let Some(previous) = s.answers.get(word) {
            return if *previous == (choice, likert) {
                Ok(Ack::Duplicate)
            } else {
                Err(Rejection::Conflict(format!("`{word}` was already answered differently in this session")).into())
            };
        }
        self.commit(Event::Response {
            session: session.to_string(),
            word: word.to_string(),
            choice,
            likert,
        })?;
        Ok(Ack::Recorded)
    }

    fn sheets(&self) -> BTreeMap<&str, VoteSheet> {
        let mut sheets: BTreeMap<&str, VoteSheet> =
            self.words.iter().map(|w| (w.as_str(), VoteSheet::new(w.clone()))).collect();
        for s in self.sessions.values() {
            if !s.verdict.as_ref().is_some_and(TrapVerdict::is_reliable) {
                continue;
            }
            for item in s.items.iter().filter(|i| !i.trap) {
                if let (Some(sheet), Some((choice, _))) = (sheets.get_mut(item.word.as_str()), s.answers.get(&item.word)) {
                    sheet.add(*choice);
                }
            }
        }
        sheets
    }

    /// Counted votes and decisions, in word-list order.
    pub fn tallies(&self) -> Tallies {
        let mut sheets = self.sheets();
        let words = self
            .words
            .iter()
            .map(|w| {
                let sheet = sheets.remove(w.as_str()).expect("every word has a sheet");
                let total = sheet.total();
                WordTally {
                    word: w.clone(),
                    decision: (total > 0).then(|| majority_vote(&sheet).expect("sheet has votes")),
                    votes: sheet.votes,
                    total,
                }
            })
            .collect();
        let mut sessions = SessionCounts::default();
        for s in self.sessions.values() {
            match &s.verdict {
                None => sessions.in_progress += 1,
                Some(v) if v.is_reliable() => sessions.reliable += 1,
                Some(_) => sessions.rejected += 1,
            }
        }
        Tallies { words, sessions }
    }

    /// Decisions for every word with at least one counted vote.
    pub fn decisions(&self) -> Vec<Annotation> {
        self.tallies().words.into_iter().filter_map(|t| t.decision).collect()
    }

    /// Stores an uploaded annotation TSV under `name`.
    pub fn put_source(&mut self, name: &str, tsv: &str) -> Result<usize, StoreError> {
        if name == CROWD_SOURCE {
            return Err(Rejection::BadRequest(format!("`{CROWD_SOURCE}` is computed from the votes")).into());
        }
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return Err(Rejection::BadRequest("source names use letters, digits, `-`, `_` and `.`".into()).into());
        }
        let annotations = parse_annotations_tsv(tsv, Path::new(name))
            .map_err(|e| Rejection::BadRequest(format!("annotation TSV: {e}")))?;
        let protected: BTreeMap<String, bool> =
            annotations.iter().map(|a| (a.word.clone(), a.is_protected())).collect();
        let n = protected.len();
        self.commit(Event::Source {
            name: name.to_string(),
            protected,
        })?;
        Ok(n)
    }

    pub fn source_names(&self) -> Vec<String> {
        std::iter::once(CROWD_SOURCE.to_string()).chain(self.sources.keys().cloned()).collect()
    }

    fn source(&self, name: &str) -> Result<BTreeMap<String, bool>, Rejection> {
        if name == CROWD_SOURCE {
            return Ok(self.decisions().into_iter().map(|a| (a.word.clone(), a.is_protected())).collect());
        }
        self.sources
            .get(name)
            .cloned()
            .ok_or_else(|| Rejection::NotFound(format!("unknown source `{name}`")))
    }

    /// Agreement of two sources on the words both annotated.
    pub fn kappa(&self, a: &str, b: &str) -> Result<KappaCell, Rejection> {
        let (sa, sb) = (self.source(a)?, self.source(b)?);
        let common: BTreeMap<String, bool> = sa.iter().filter(|(w, _)| sb.contains_key(*w)).map(|(w, v)| (w.clone(), *v)).collect();
        let other: BTreeMap<String, bool> = common.keys().map(|w| (w.clone(), sb[w])).collect();
        let kappa = cohen_kappa(&common, &other).map_err(|e| Rejection::BadRequest(e.to_string()))?;
        Ok(KappaCell {
            a: a.to_string(),
            b: b.to_string(),
            words: common.len(),
            kappa,
            display: kappa_for_display(kappa),
        })
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}
