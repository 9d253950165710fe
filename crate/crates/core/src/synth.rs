//! Seeded corpora with planted bias, for tests, benchmarks and demos.
//!
//! Positive documents usually contain one or two predictive words. A second
//! set of identity words co-occurs with the positive class without causing
//! it, so a classifier trained on the corpus learns to rely on them.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, LabeledCorpus};
use crate::error::{Error, Result};
use crate::lexical::{EmbeddingTable, HypernymLexicon};

/// Identity terms used as planted protected words. All of them are in the
/// built-in dictionary.
pub const PLANTED_PROTECTED: [&str; 20] = [
    "gay", "lesbian", "bisexual", "homosexual", "transgender", "muslim", "jewish", "christian", "atheist", "black",
    "african", "mexican", "asian", "chinese", "elderly", "teenage", "blind", "deaf", "women", "pregnant",
];

pub const PLANTED_PREDICTIVE: [&str; 20] = [
    "hate", "stupid", "idiot", "ugly", "dumb", "moron", "loser", "pathetic", "trash", "garbage", "disgusting", "awful",
    "worthless", "scum", "jerk", "fool", "nasty", "horrible", "filthy", "lame",
];

pub const POSITIVE: &str = "toxic";
pub const NEGATIVE: &str = "non-toxic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub train_size: usize,
    pub test_size: usize,
    pub noise_vocabulary: usize,
    pub positive_rate: f64,
    /// Probability that a positive (negative) document carries a protected word.
    pub protected_in_positive: f64,
    pub protected_in_negative: f64,
    /// Probability that a positive (negative) document carries a predictive word.
    pub predictive_in_positive: f64,
    pub predictive_in_negative: f64,
    pub min_noise_tokens: usize,
    pub max_noise_tokens: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train_size: 4000,
            test_size: 2000,
            noise_vocabulary: 1500,
            positive_rate: 0.3,
            protected_in_positive: 0.15,
            protected_in_negative: 0.007,
            predictive_in_positive: 0.98,
            predictive_in_negative: 0.02,
            min_noise_tokens: 6,
            max_noise_tokens: 14,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub train: LabeledCorpus,
    pub test: LabeledCorpus,
    pub protected: Vec<String>,
    pub predictive: Vec<String>,
    pub noise: Vec<String>,
}

fn noise_word(i: usize) -> String {
    format!("w{i:04}")
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    if config.noise_vocabulary == 0 || config.min_noise_tokens > config.max_noise_tokens {
        return Err(Error::Invalid("synthetic corpus needs noise words and a valid length range".into()));
    }
    let rates = [
        config.positive_rate,
        config.protected_in_positive,
        config.protected_in_negative,
        config.predictive_in_positive,
        config.predictive_in_negative,
    ];
    if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::Invalid("synthetic rates must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise: Vec<String> = (0..config.noise_vocabulary).map(noise_word).collect();
    // protected words are dealt round-robin within each class so every one
    // of them gets the same share of positive and negative documents
    let mut dealt = [0usize; 2];
    let mut make = |prefix: &str, n: usize| -> Vec<Document> {
        (0..n)
            .map(|i| {
                let positive = rng.random_bool(config.positive_rate);
                let (p_protected, p_predictive) = if positive {
                    (config.protected_in_positive, config.predictive_in_positive)
                } else {
                    (config.protected_in_negative, config.predictive_in_negative)
                };
                let len = rng.random_range(config.min_noise_tokens..=config.max_noise_tokens);
                let mut tokens: Vec<&str> = (0..len).map(|_| noise.choose(&mut rng).unwrap().as_str()).collect();
                if rng.random_bool(p_predictive) {
                    for _ in 0..rng.random_range(1..=2) {
                        let at = rng.random_range(0..=tokens.len());
                        tokens.insert(at, PLANTED_PREDICTIVE.choose(&mut rng).unwrap());
                    }
                }
                if rng.random_bool(p_protected) {
                    let at = rng.random_range(0..=tokens.len());
                    let next = &mut dealt[usize::from(positive)];
                    tokens.insert(at, PLANTED_PROTECTED[*next % PLANTED_PROTECTED.len()]);
                    *next += 1;
                }
                let label = if positive { POSITIVE } else { NEGATIVE };
                Document::new(format!("{prefix}{i:05}"), tokens.join(" "), Some(label.to_string()))
            })
            .collect()
    };
    let train = make("train-", config.train_size);
    let test = make("test-", config.test_size);
    let classes = [NEGATIVE.to_string(), POSITIVE.to_string()].into();
    Ok(SynthCorpus {
        train: LabeledCorpus::with_classes(train, classes)?,
        test: LabeledCorpus::with_classes(test, [NEGATIVE.to_string(), POSITIVE.to_string()].into())?,
        protected: PLANTED_PROTECTED.iter().map(|s| s.to_string()).collect(),
        predictive: PLANTED_PREDICTIVE.iter().map(|s| s.to_string()).collect(),
        noise,
    })
}

/// Random unit-free vectors for every word of the synthetic vocabulary, so
/// MS3 and MS4 can run without an external embedding file.
pub fn embeddings(corpus: &SynthCorpus, dimension: usize, seed: u64) -> Result<EmbeddingTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = corpus.protected.iter().chain(&corpus.predictive).chain(&corpus.noise);
    let rows: Vec<(String, Vec<f32>)> = words
        .map(|w| (w.clone(), (0..dimension).map(|_| rng.random_range(-1.0f32..1.0)).collect()))
        .collect();
    EmbeddingTable::from_rows(rows)
}

/// Maps every planted protected word to `person`.
pub fn hypernyms(corpus: &SynthCorpus) -> HypernymLexicon {
    let mut lexicon = HypernymLexicon::new();
    for w in &corpus.protected {
        lexicon.insert(w, "person").expect("planted words differ from `person`");
    }
    lexicon
}
