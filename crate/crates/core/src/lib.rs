//! Measure and reduce a text classifier's reliance on protected-attribute
//! words.
//!
//! The crate is organised around the stages of a mitigation run:
//!
//! * [`corpus`] loads and tokenizes JSONL corpora.
//! * [`classifier`] trains the bag-of-words logistic regression used as the
//!   reference model and computes F1/AUC.
//! * [`explainer`] produces per-token attributions and ranks words globally
//!   by their mean attribution.
//! * [`identifier`] decides which of those words are protected attributes
//!   (dictionary, LLM or human annotation) and measures agreement.
//! * [`lexical`] parses word embeddings and hypernym lexicons.
//! * [`moderator`] rewrites a training corpus with one of five strategies.
//! * [`pipeline`] chains everything and reports fairness and performance
//!   before and after mitigation.

pub mod classifier;
pub mod corpus;
pub mod error;
pub mod explainer;
pub mod identifier;
pub mod lexical;
pub mod moderator;
pub mod pipeline;
pub mod synth;

pub use classifier::{ClassProbabilities, LinearModel, Metrics, TrainConfig};
pub use corpus::{tokenize, Document, LabeledCorpus};
pub use error::{Error, Result};
pub use explainer::{AttributionRecord, ExplainerConfig, GlobalWordScore, Predictor, TopSelection};
pub use identifier::{Annotation, AnnotationSource, ProtectedCategory};
pub use lexical::{EmbeddingTable, HypernymLexicon};
pub use moderator::{MitigationDelta, MitigationPlan, Strategy};
pub use pipeline::{FairnessStats, MitigationReport, PipelineConfig};
