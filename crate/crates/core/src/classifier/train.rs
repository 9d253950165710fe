use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::objective::{Dataset, Objective, Params};
use super::{ClassWeighting, LinearModel, ModelKind, MultiClass, TrainConfig};
use crate::corpus::LabeledCorpus;
use crate::error::{Error, Result};

/// Class order for a task: sorted, except that a binary task puts its
/// positive class second.
fn class_order(present: &BTreeSet<&str>, config: &TrainConfig) -> Result<Vec<String>> {
    let mut classes: Vec<String> = present.iter().map(|c| c.to_string()).collect();
    if let Some(positive) = &config.positive_class {
        if classes.len() != 2 {
            return Err(Error::Invalid("positive_class applies only to binary tasks".into()));
        }
        let pos = classes
            .iter()
            .position(|c| c == positive)
            .ok_or_else(|| Error::UnknownClass(positive.clone()))?;
        if pos == 0 {
            classes.swap(0, 1);
        }
    }
    Ok(classes)
}

/// Builds the training matrix for `corpus` against a fixed vocabulary.
pub(crate) fn build_dataset(
    corpus: &LabeledCorpus,
    classes: &[String],
    model: &LinearModel,
    weighting: ClassWeighting,
) -> Result<Dataset> {
    let class_index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut data = Dataset::default();
    for doc in &corpus.documents {
        let label = doc
            .label
            .as_deref()
            .ok_or_else(|| Error::Invalid(format!("document `{}` has no label", doc.id)))?;
        let target = *class_index
            .get(label)
            .ok_or_else(|| Error::UnknownClass(label.to_string()))?;
        data.features.push(model.features(&doc.tokens));
        data.targets.push(target);
    }
    let n = data.len() as f64;
    let k = classes.len() as f64;
    let mut counts = vec![0usize; classes.len()];
    for &t in &data.targets {
        counts[t] += 1;
    }
    data.sample_weights = data
        .targets
        .iter()
        .map(|&t| match weighting {
            ClassWeighting::None => 1.0,
            ClassWeighting::InverseFrequency => n / (k * counts[t] as f64),
        })
        .collect();
    Ok(data)
}

/// Trains a model with mini-batch gradient descent.
///
/// Parameters start at zero and rows are reshuffled every epoch from a
/// generator seeded with `config.seed`, so identical inputs give identical
/// weights.
pub fn train(corpus: &LabeledCorpus, config: &TrainConfig) -> Result<LinearModel> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::Invalid("cannot train on an empty corpus".into()));
    }
    if let Some(doc) = corpus.documents.iter().find(|d| d.label.is_none()) {
        return Err(Error::Invalid(format!("document `{}` has no label", doc.id)));
    }
    let present = corpus.present_classes();
    if present.len() < 2 {
        return Err(Error::Invalid(format!(
            "training needs at least two classes, found {}",
            present.len()
        )));
    }
    let classes = class_order(&present, config)?;
    let kind = match (classes.len(), config.multiclass) {
        (2, _) => ModelKind::Binary,
        (_, MultiClass::OneVsRest) => ModelKind::OneVsRest,
        (_, MultiClass::Softmax) => ModelKind::Softmax,
    };
    let heads = if kind == ModelKind::Binary { 1 } else { classes.len() };

    let vocabulary: Vec<String> = corpus
        .documents
        .iter()
        .flat_map(|d| d.tokens.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let dim = vocabulary.len();
    let mut model = LinearModel::from_parts(
        classes.clone(),
        kind,
        vocabulary,
        vec![vec![0.0; dim]; heads],
        vec![0.0; heads],
    )?;
    model.training_config = config.clone();

    let data = build_dataset(corpus, &classes, &model, config.class_weighting)?;
    let objective = Objective {
        kind,
        data: &data,
        l2: config.l2,
    };
    let mut params = Params::zeros(heads, dim);
    let mut history = vec![objective.loss(&params, None)];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let grad = objective.gradient(&params, Some(batch));
            for (prow, grow) in params.weights.iter_mut().zip(&grad.weights) {
                for (w, g) in prow.iter_mut().zip(grow) {
                    *w -= config.learning_rate * g;
                }
            }
            for (b, g) in params.bias.iter_mut().zip(&grad.bias) {
                *b -= config.learning_rate * g;
            }
        }
        history.push(objective.loss(&params, None));
    }
    if history.iter().any(|l| !l.is_finite()) {
        return Err(Error::Invalid("training diverged; lower the learning rate".into()));
    }

    model.weights = params.weights;
    model.bias = params.bias;
    model.loss_history = history;
    Ok(model)
}
