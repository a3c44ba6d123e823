//! Embedding + stacked LSTM binary classifier, trained with exact
//! backpropagation through time and Adam. Everything is `f64`.
//!
//! Layout of the trainable state:
//!
//! | tensor             | shape                      |
//! |--------------------|----------------------------|
//! | `embedding`        | `[vocab_size, embed_dim]`  |
//! | `lstm{l}.input`    | `[4 * hidden, in_dim]`     |
//! | `lstm{l}.recurrent`| `[4 * hidden, hidden]`     |
//! | `lstm{l}.bias`     | `[4 * hidden]`             |
//! | `dense.weight`     | `[hidden]`                 |
//! | `dense.bias`       | `[1]`                      |
//!
//! Gate rows are stacked in the order input, forget, cell, output.

mod adam;
mod gradcheck;
mod loss;
mod lstm;

pub use adam::{adam_step, adam_update, AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_with, GradCheckReport};
pub use loss::{bce_with_logits, bce_with_logits_grad, sigmoid};
pub use lstm::{backward, forward, lstm_cell, ForwardCache, GateCache, Gradients, LayerCache, Mode};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub n_lstm_layers: usize,
    pub dropout_rate: f64,
    pub max_len: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            vocab_size: 8000,
            embed_dim: 32,
            hidden_dim: 32,
            n_lstm_layers: 2,
            dropout_rate: 0.4,
            max_len: 600,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.vocab_size, self.embed_dim, self.hidden_dim, self.n_lstm_layers, self.max_len];
        if dims.contains(&0) {
            return Err(Error::InvalidConfig(format!("network dimensions must be positive: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!("dropout_rate {} not in [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    pub(crate) fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.embed_dim
        } else {
            self.hidden_dim
        }
    }
}

/// Dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                name: "tensor data".into(),
                expected: vec![expected],
                found: vec![data.len()],
            });
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row `r` of a 2-D tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let cols = self.shape[1];
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    fn fill_uniform(&mut self, rng: &mut ChaCha8Rng, bound: f64) {
        for x in &mut self.data {
            *x = rng.gen_range(-bound..=bound);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    /// Input-to-gates weights, `[4H, in_dim]`.
    pub input: Tensor,
    /// Hidden-to-gates weights, `[4H, H]`.
    pub recurrent: Tensor,
    pub bias: Tensor,
}

/// Every trainable array of the model. Also used for gradient sums and
/// optimizer moments, which share the same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub embedding: Tensor,
    pub layers: Vec<LayerWeights>,
    pub dense_weight: Tensor,
    pub dense_bias: Tensor,
}

impl Weights {
    pub fn zeros(config: &NetworkConfig) -> Self {
        let h = config.hidden_dim;
        Self {
            embedding: Tensor::zeros(&[config.vocab_size, config.embed_dim]),
            layers: (0..config.n_lstm_layers)
                .map(|l| LayerWeights {
                    input: Tensor::zeros(&[4 * h, config.layer_input_dim(l)]),
                    recurrent: Tensor::zeros(&[4 * h, h]),
                    bias: Tensor::zeros(&[4 * h]),
                })
                .collect(),
            dense_weight: Tensor::zeros(&[h]),
            dense_bias: Tensor::zeros(&[1]),
        }
    }

    /// Named tensors in canonical order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("lstm{l}.input"), &layer.input));
            out.push((format!("lstm{l}.recurrent"), &layer.recurrent));
            out.push((format!("lstm{l}.bias"), &layer.bias));
        }
        out.push(("dense.weight".into(), &self.dense_weight));
        out.push(("dense.bias".into(), &self.dense_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![("embedding".to_string(), &mut self.embedding)];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("lstm{l}.input"), &mut layer.input));
            out.push((format!("lstm{l}.recurrent"), &mut layer.recurrent));
            out.push((format!("lstm{l}.bias"), &mut layer.bias));
        }
        out.push(("dense.weight".into(), &mut self.dense_weight));
        out.push(("dense.bias".into(), &mut self.dense_bias));
        out
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            t.scale_in_place(factor);
        }
    }

    /// Errors unless every tensor has the same name and shape as in `other`.
    pub fn check_same_layout(&self, other: &Weights) -> Result<()> {
        let mine = self.tensors();
        let theirs = other.tensors();
        if mine.len() != theirs.len() {
            return Err(Error::ShapeMismatch {
                name: "tensor count".into(),
                expected: vec![mine.len()],
                found: vec![theirs.len()],
            });
        }
        for ((name, a), (_, b)) in mine.iter().zip(&theirs) {
            if a.shape() != b.shape() {
                return Err(Error::ShapeMismatch {
                    name: name.clone(),
                    expected: a.shape().to_vec(),
                    found: b.shape().to_vec(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: NetworkConfig,
    pub weights: Weights,
}

impl ModelParams {
    /// All-zero parameters of the right shapes.
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { weights: Weights::zeros(&config), config })
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }
}

const EMBEDDING_INIT_BOUND: f64 = 0.05;
const FORGET_BIAS_INIT: f64 = 1.0;

fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Embeddings uniform in ±0.05, weight matrices Glorot-uniform, biases zero
/// except the forget gate which starts at 1.
pub fn init_params(config: &NetworkConfig, seed: u64) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(*config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = config.hidden_dim;
    let w = &mut params.weights;

    w.embedding.fill_uniform(&mut rng, EMBEDDING_INIT_BOUND);
    for (l, layer) in w.layers.iter_mut().enumerate() {
        layer.input.fill_uniform(&mut rng, glorot_bound(config.layer_input_dim(l), 4 * h));
        layer.recurrent.fill_uniform(&mut rng, glorot_bound(h, 4 * h));
        layer.bias.data_mut()[h..2 * h].fill(FORGET_BIAS_INIT);
    }
    w.dense_weight.fill_uniform(&mut rng, glorot_bound(h, 1));
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetworkConfig {
        NetworkConfig { vocab_size: 13, embed_dim: 5, hidden_dim: 4, n_lstm_layers: 2, dropout_rate: 0.4, max_len: 7 }
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(init_params(&small(), 9).unwrap(), init_params(&small(), 9).unwrap());
        assert_ne!(init_params(&small(), 9).unwrap(), init_params(&small(), 10).unwrap());
    }

    #[test]
    fn init_respects_bounds_and_forget_bias() {
        for seed in 0..5 {
            let p = init_params(&small(), seed).unwrap();
            assert!(p.weights.embedding.data().iter().all(|x| x.abs() <= 0.05));
            for layer in &p.weights.layers {
                let b = layer.bias.data();
                assert!(b[..4].iter().all(|&x| x == 0.0));
                assert!(b[4..8].iter().all(|&x| x == 1.0));
                assert!(b[8..].iter().all(|&x| x == 0.0));
            }
            let bound = glorot_bound(5, 16);
            assert!(p.weights.layers[0].input.data().iter().all(|x| x.abs() <= bound));
        }
    }

    #[test]
    fn shapes_follow_config() {
        let p = init_params(&small(), 1).unwrap();
        let shapes: Vec<(String, Vec<usize>)> =
            p.weights.tensors().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
        assert_eq!(
            shapes,
            vec![
                ("embedding".into(), vec![13, 5]),
                ("lstm0.input".into(), vec![16, 5]),
                ("lstm0.recurrent".into(), vec![16, 4]),
                ("lstm0.bias".into(), vec![16]),
                ("lstm1.input".into(), vec![16, 4]),
                ("lstm1.recurrent".into(), vec![16, 4]),
                ("lstm1.bias".into(), vec![16]),
                ("dense.weight".into(), vec![4]),
                ("dense.bias".into(), vec![1]),
            ]
        );
    }

    #[test]
    fn config_validation() {
        assert!(NetworkConfig::default().validate().is_ok());
        assert!(NetworkConfig { dropout_rate: 1.0, ..small() }.validate().is_err());
        assert!(NetworkConfig { hidden_dim: 0, ..small() }.validate().is_err());
        assert!(Tensor::from_vec(&[2, 2], vec![0.0; 3]).is_err());
    }
}
