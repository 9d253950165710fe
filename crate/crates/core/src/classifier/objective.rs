//! The regularised, sample-weighted logistic loss minimised by training.
//!
//! For a set of rows `R`:
//!
//! ```text
//! L(W, b) = Σ_{i∈R} s_i ℓ_i(W, b) / Σ_{i∈R} s_i  +  (l2 / 2) ‖W‖²
//! ```
//!
//! where `s_i` is the sample weight and `ℓ_i` the per-document loss of the
//! model kind (binary cross-entropy, summed one-vs-rest cross-entropies, or
//! softmax cross-entropy). Biases are not regularised.

use super::{sigmoid, ModelKind};

pub type SparseVec = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Params {
    pub fn zeros(heads: usize, dim: usize) -> Self {
        Params {
            weights: vec![vec![0.0; dim]; heads],
            bias: vec![0.0; heads],
        }
    }

    /// Flattened view: all weights row by row, then the biases.
    pub fn to_flat(&self) -> Vec<f64> {
        self.weights.iter().flatten().chain(&self.bias).copied().collect()
    }

    pub fn from_flat(flat: &[f64], heads: usize, dim: usize) -> Self {
        assert_eq!(flat.len(), heads * dim + heads);
        Params {
            weights: flat[..heads * dim].chunks(dim.max(1)).take(heads).map(<[f64]>::to_vec).collect(),
            bias: flat[heads * dim..].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub features: Vec<SparseVec>,
    /// Index of each row's class in the model's class list.
    pub targets: Vec<usize>,
    pub sample_weights: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub struct Objective<'a> {
    pub kind: ModelKind,
    pub data: &'a Dataset,
    pub l2: f64,
}

impl Objective<'_> {
    fn logits(params: &Params, x: &[(usize, f64)]) -> Vec<f64> {
        params
            .weights
            .iter()
            .zip(&params.bias)
            .map(|(row, b)| b + x.iter().map(|&(j, v)| row[j] * v).sum::<f64>())
            .collect()
    }

    /// Loss of one row and its derivative with respect to each head's logit.
    fn row_loss_and_dz(&self, z: &[f64], target: usize) -> (f64, Vec<f64>) {
        match self.kind {
            ModelKind::Binary => {
                let y = if target == 1 { 1.0 } else { 0.0 };
                (softplus(z[0]) - y * z[0], vec![sigmoid(z[0]) - y])
            }
            ModelKind::OneVsRest => {
                let mut loss = 0.0;
                let mut dz = Vec::with_capacity(z.len());
                for (h, &zh) in z.iter().enumerate() {
                    let y = if h == target { 1.0 } else { 0.0 };
                    loss += softplus(zh) - y * zh;
                    dz.push(sigmoid(zh) - y);
                }
                (loss, dz)
            }
            ModelKind::Softmax => {
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
                let lse = max + sum.ln();
                let dz = z
                    .iter()
                    .enumerate()
                    .map(|(h, &zh)| (zh - lse).exp() - if h == target { 1.0 } else { 0.0 })
                    .collect();
                (lse - z[target], dz)
            }
        }
    }

    /// Unweighted per-row losses, without regularisation.
    pub fn sample_losses(&self, params: &Params) -> Vec<f64> {
        self.data
            .features
            .iter()
            .zip(&self.data.targets)
            .map(|(x, &t)| self.row_loss_and_dz(&Self::logits(params, x), t).0)
            .collect()
    }

    fn penalty(&self, params: &Params) -> f64 {
        0.5 * self.l2 * params.weights.iter().flatten().map(|w| w * w).sum::<f64>()
    }

    /// Objective over `rows`, or over every row when `rows` is `None`.
    pub fn loss(&self, params: &Params, rows: Option<&[usize]>) -> f64 {
        let mut total = 0.0;
        let mut weight = 0.0;
        let mut add = |i: usize| {
            let z = Self::logits(params, &self.data.features[i]);
            let s = self.data.sample_weights[i];
            total += s * self.row_loss_and_dz(&z, self.data.targets[i]).0;
            weight += s;
        };
        match rows {
            Some(rows) => rows.iter().copied().for_each(&mut add),
            None => (0..self.data.len()).for_each(&mut add),
        }
        let data_term = if weight > 0.0 { total / weight } else { 0.0 };
        data_term + self.penalty(params)
    }

    /// Analytic gradient of [`Objective::loss`].
    pub fn gradient(&self, params: &Params, rows: Option<&[usize]>) -> Params {
        let dim = params.weights.first().map_or(0, Vec::len);
        let mut grad = Params::zeros(params.bias.len(), dim);
        let mut weight = 0.0;
        let mut add = |i: usize| {
            let x = &self.data.features[i];
            let s = self.data.sample_weights[i];
            let (_, dz) = self.row_loss_and_dz(&Self::logits(params, x), self.data.targets[i]);
            for (h, d) in dz.into_iter().enumerate() {
                let g = s * d;
                grad.bias[h] += g;
                for &(j, v) in x {
                    grad.weights[h][j] += g * v;
                }
            }
            weight += s;
        };
        match rows {
            Some(rows) => rows.iter().copied().for_each(&mut add),
            None => (0..self.data.len()).for_each(&mut add),
        }
        let scale = if weight > 0.0 { 1.0 / weight } else { 0.0 };
        for (grow, prow) in grad.weights.iter_mut().zip(&params.weights) {
            for (g, w) in grow.iter_mut().zip(prow) {
                *g = *g * scale + self.l2 * w;
            }
        }
        grad.bias.iter_mut().for_each(|g| *g *= scale);
        grad
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
    }

    #[test]
    fn flat_round_trip() {
        let p = Params {
            weights: vec![vec![1.0, 2.0], vec![3.0, 4.0]],
            bias: vec![5.0, 6.0],
        };
        assert_eq!(Params::from_flat(&p.to_flat(), 2, 2), p);
    }

    #[test]
    fn zero_params_binary_loss_is_ln2() {
        let data = Dataset {
            features: vec![vec![(0, 1.0)], vec![(1, 2.0)]],
            targets: vec![0, 1],
            sample_weights: vec![1.0, 1.0],
        };
        let obj = Objective {
            kind: ModelKind::Binary,
            data: &data,
            l2: 0.1,
        };
        let loss = obj.loss(&Params::zeros(1, 2), None);
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }
}
