use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::TrainConfig;
use crate::error::{Error, Result};
use crate::explainer::{ExplainerMethod, TopSelection};
use crate::identifier::LlmConfig;
use crate::moderator::MitigationPlan;

pub const DEFAULT_TOP_K: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainerSettings {
    pub method: ExplainerMethod,
    pub top_k: Option<usize>,
    pub top_fraction: Option<f64>,
    /// Attribution JSONL for the `external-file` method.
    pub attributions: Option<PathBuf>,
}

impl Default for ExplainerSettings {
    fn default() -> Self {
        ExplainerSettings {
            method: ExplainerMethod::LinearExact,
            top_k: None,
            top_fraction: None,
            attributions: None,
        }
    }
}

impl ExplainerSettings {
    pub fn selection(&self) -> Result<TopSelection> {
        let selection = match (self.top_k, self.top_fraction) {
            (Some(_), Some(_)) => return Err(Error::Invalid("set either top_k or top_fraction, not both".into())),
            (Some(k), None) => TopSelection::TopK(k),
            (None, Some(f)) => TopSelection::Fraction(f),
            (None, None) => TopSelection::TopK(DEFAULT_TOP_K),
        };
        selection.validate()?;
        Ok(selection)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdentifierBackend {
    #[default]
    Dictionary,
    Llm,
    /// Annotations read from a TSV file.
    File,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifierSettings {
    pub backend: IdentifierBackend,
    /// Dictionary TSV; the built-in list when unset.
    pub dictionary: Option<PathBuf>,
    /// Annotation TSV for the `file` backend.
    pub annotations: Option<PathBuf>,
    pub llm: LlmConfig,
}

fn default_threshold() -> f64 {
    0.5
}

fn default_rounds() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub training_corpus: PathBuf,
    pub unlabeled_corpus: PathBuf,
    pub target_class: String,
    pub output_dir: PathBuf,
    /// Pre-trained model; trained from `training_corpus` when unset.
    #[serde(default)]
    pub model: Option<PathBuf>,
    /// External predictions JSONL; measurement only.
    #[serde(default)]
    pub predictions: Option<PathBuf>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub explainer: ExplainerSettings,
    #[serde(default)]
    pub identifier: IdentifierSettings,
    /// Strategy template; protected words are filled in from the
    /// identifier's output.
    #[serde(default)]
    pub plan: Option<MitigationPlan>,
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    #[serde(default)]
    pub hypernyms: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
}

impl PipelineConfig {
    /// Reads a JSON (`.json`) or TOML config. Relative paths are resolved
    /// against the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: PipelineConfig = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.line(), e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| {
                let line = e.span().map_or(0, |s| text[..s.start].lines().count().max(1));
                Error::format(path, line, e.message().to_string())
            })?
        };
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.training_corpus);
        fix(&mut self.unlabeled_corpus);
        fix(&mut self.output_dir);
        for p in [
            &mut self.model,
            &mut self.predictions,
            &mut self.explainer.attributions,
            &mut self.identifier.dictionary,
            &mut self.identifier.annotations,
            &mut self.embeddings,
            &mut self.hypernyms,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.training_corpus == self.unlabeled_corpus {
            return Err(Error::Invalid("training and unlabeled corpora must be different files".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Invalid(format!("threshold {} is outside (0, 1)", self.threshold)));
        }
        if self.rounds == 0 {
            return Err(Error::Invalid("rounds must be at least 1".into()));
        }
        self.explainer.selection()?;
        self.train.validate()?;
        match (self.explainer.method, &self.explainer.attributions) {
            (ExplainerMethod::ExternalFile, None) => {
                return Err(Error::Invalid("the external-file explainer needs `explainer.attributions`".into()))
            }
            (ExplainerMethod::ExternalFile, Some(_)) => {}
            (_, Some(_)) => {
                return Err(Error::Invalid("`explainer.attributions` is only used by the external-file method".into()))
            }
            _ => {}
        }
        match self.identifier.backend {
            IdentifierBackend::File if self.identifier.annotations.is_none() => {
                return Err(Error::Invalid("the file identifier needs `identifier.annotations`".into()))
            }
            IdentifierBackend::Llm => self.identifier.llm.validate()?,
            _ => {}
        }
        if let Some(plan) = &self.plan {
            if plan.k == 0 {
                return Err(Error::Invalid("plan.k must be at least 1".into()));
            }
        }
        Ok(())
    }
}
