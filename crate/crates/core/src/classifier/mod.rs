//! Bag-of-words logistic regression over raw token counts.
//!
//! Binary tasks keep a single weight vector for the positive class (the
//! second entry of [`LinearModel::classes`]). Multi-class tasks use either
//! one-vs-rest heads or a softmax over one head per class.

mod external;
mod metrics;
pub mod objective;
mod train;

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};

pub use external::{load_external_predictions, write_predictions, ExternalPredictions};
pub use metrics::{auc, classification_metrics, evaluate, f1_score, ClassMetrics, Metrics};
pub(crate) use metrics::metrics_for;
pub use train::train;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassWeighting {
    #[default]
    None,
    InverseFrequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MultiClass {
    #[default]
    OneVsRest,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub class_weighting: ClassWeighting,
    pub seed: u64,
    pub batch_size: usize,
    pub multiclass: MultiClass,
    /// Binary tasks only: which class the single weight vector scores.
    /// Defaults to the lexicographically larger class name.
    pub positive_class: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            learning_rate: 0.5,
            l2: 1e-4,
            class_weighting: ClassWeighting::None,
            seed: 0,
            batch_size: 32,
            multiclass: MultiClass::OneVsRest,
            positive_class: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Invalid("epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid("learning_rate must be positive".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Invalid("l2 must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Per-class probabilities keyed by class name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassProbabilities(pub BTreeMap<String, f64>);

impl ClassProbabilities {
    pub fn get(&self, class: &str) -> Option<f64> {
        self.0.get(class).copied()
    }

    /// Highest-probability class; ties go to the first class in name order.
    pub fn argmax(&self) -> Option<&str> {
        let mut best: Option<(&str, f64)> = None;
        for (class, &p) in &self.0 {
            if best.is_none_or(|(_, b)| p > b) {
                best = Some((class, p));
            }
        }
        best.map(|(c, _)| c)
    }

    /// The predicted class. With exactly two classes and a known target the
    /// target wins when its probability reaches `threshold`; otherwise argmax.
    pub fn decide(&self, target: Option<&str>, threshold: f64) -> Option<&str> {
        if let (Some(target), 2) = (target, self.0.len()) {
            if let Some((name, &p)) = self.0.get_key_value(target) {
                if p >= threshold {
                    return Some(name.as_str());
                }
                return self.0.keys().find(|k| k.as_str() != target).map(String::as_str);
            }
        }
        self.argmax()
    }

    pub fn validate(&self) -> Result<()> {
        for (class, &p) in &self.0 {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Invalid(format!("probability {p} for class `{class}` is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Binary,
    OneVsRest,
    Softmax,
}

/// A trained (or hand-built) linear text classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile")]
pub struct LinearModel {
    pub classes: Vec<String>,
    pub kind: ModelKind,
    pub vocabulary: Vec<String>,
    /// One row per head, each of vocabulary length.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub training_config: TrainConfig,
    /// Full training objective before the first epoch and after each epoch.
    #[serde(default)]
    pub loss_history: Vec<f64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

#[derive(Deserialize)]
struct ModelFile {
    classes: Vec<String>,
    kind: ModelKind,
    vocabulary: Vec<String>,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    #[serde(default)]
    training_config: TrainConfig,
    #[serde(default)]
    loss_history: Vec<f64>,
}

impl TryFrom<ModelFile> for LinearModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        let mut model = LinearModel::from_parts(f.classes, f.kind, f.vocabulary, f.weights, f.bias)?;
        model.training_config = f.training_config;
        model.loss_history = f.loss_history;
        Ok(model)
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl LinearModel {
    /// Assembles a model from raw parameters, checking shapes.
    pub fn from_parts(
        classes: Vec<String>,
        kind: ModelKind,
        vocabulary: Vec<String>,
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let heads = match kind {
            ModelKind::Binary => {
                if classes.len() != 2 {
                    return Err(Error::Invalid("a binary model needs exactly two classes".into()));
                }
                1
            }
            _ => {
                if classes.len() < 2 {
                    return Err(Error::Invalid("a multi-class model needs at least two classes".into()));
                }
                classes.len()
            }
        };
        if weights.len() != heads || bias.len() != heads {
            return Err(Error::Invalid(format!("expected {heads} weight rows and biases")));
        }
        if weights.iter().any(|row| row.len() != vocabulary.len()) {
            return Err(Error::Invalid("weight row length differs from vocabulary size".into()));
        }
        if weights.iter().flatten().chain(&bias).any(|w| !w.is_finite()) {
            return Err(Error::Invalid("non-finite model parameter".into()));
        }
        let mut index = HashMap::with_capacity(vocabulary.len());
        for (i, word) in vocabulary.iter().enumerate() {
            if index.insert(word.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary entry `{word}`")));
            }
        }
        Ok(LinearModel {
            classes,
            kind,
            vocabulary,
            weights,
            bias,
            training_config: TrainConfig::default(),
            loss_history: Vec::new(),
            index,
        })
    }

    /// Binary model from a word→weight map; `classes` is `[negative, positive]`.
    pub fn binary(classes: [&str; 2], weights: &[(&str, f64)], bias: f64) -> Result<Self> {
        let mut pairs: Vec<(&str, f64)> = weights.to_vec();
        pairs.sort_by(|a, b| a.0.cmp(b.0));
        let vocabulary = pairs.iter().map(|(w, _)| w.to_string()).collect();
        let row = pairs.iter().map(|(_, v)| *v).collect();
        LinearModel::from_parts(
            classes.iter().map(|c| c.to_string()).collect(),
            ModelKind::Binary,
            vocabulary,
            vec![row],
            vec![bias],
        )
    }

    pub fn positive_class(&self) -> Option<&str> {
        match self.kind {
            ModelKind::Binary => Some(&self.classes[1]),
            _ => None,
        }
    }

    pub fn vocabulary_index(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// The head scoring `class` and the sign its weights carry for it.
    fn head_for(&self, class: &str) -> Result<(usize, f64)> {
        let pos = self
            .classes
            .iter()
            .position(|c| c == class)
            .ok_or_else(|| Error::UnknownClass(class.to_string()))?;
        Ok(match self.kind {
            ModelKind::Binary if pos == 1 => (0, 1.0),
            ModelKind::Binary => (0, -1.0),
            _ => (pos, 1.0),
        })
    }

    /// Contribution of one occurrence of `token` to the logit of `class`.
    pub fn token_weight(&self, token: &str, class: &str) -> Result<f64> {
        let (head, sign) = self.head_for(class)?;
        Ok(self
            .vocabulary_index(token)
            .map_or(0.0, |i| sign * self.weights[head][i]))
    }

    /// Sparse token counts restricted to the vocabulary, sorted by index.
    pub fn features<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<(usize, f64)> {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for token in tokens {
            if let Some(i) = self.vocabulary_index(token.as_ref()) {
                *counts.entry(i).or_insert(0.0) += 1.0;
            }
        }
        counts.into_iter().collect()
    }

    pub(crate) fn logits(&self, features: &[(usize, f64)]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| b + features.iter().map(|&(i, x)| row[i] * x).sum::<f64>())
            .collect()
    }

    pub fn predict_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> ClassProbabilities {
        let z = self.logits(&self.features(tokens));
        let probs = match self.kind {
            ModelKind::Binary => {
                // each side computed directly so the small one keeps its precision
                vec![sigmoid(-z[0]), sigmoid(z[0])]
            }
            ModelKind::OneVsRest => {
                let raw: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
                let sum: f64 = raw.iter().sum();
                if sum > 0.0 {
                    raw.into_iter().map(|p| p / sum).collect()
                } else {
                    vec![1.0 / raw.len() as f64; raw.len()]
                }
            }
            ModelKind::Softmax => softmax(&z),
        };
        ClassProbabilities(self.classes.iter().cloned().zip(probs).collect())
    }

    pub fn predict(&self, doc: &Document) -> ClassProbabilities {
        self.predict_tokens(&doc.tokens)
    }

    /// Predicted class name for a document at the given binary threshold.
    pub fn decide(&self, probs: &ClassProbabilities, threshold: f64) -> String {
        probs
            .decide(self.positive_class(), threshold)
            .unwrap_or(&self.classes[0])
            .to_string()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut out, self)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::format(path, e.line(), e.to_string()))
    }
}
