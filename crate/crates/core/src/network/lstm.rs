use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{bce_with_logits_grad, sigmoid};
use super::{LayerWeights, ModelParams, Weights};
use crate::textprep::TokenSequence;
use crate::{Error, Result};

/// Dropout is active only in `Train`; the seed fixes the mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64 },
    Eval,
}

/// Activated gate values for one step, plus the new cell state.
#[derive(Debug, Clone, PartialEq)]
pub struct GateCache {
    pub input: Vec<f64>,
    pub forget: Vec<f64>,
    pub cell: Vec<f64>,
    pub output: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

/// out[r] += sum_k m[r, k] * v[k]
fn matvec_add(m: &[f64], cols: usize, v: &[f64], out: &mut [f64]) {
    for (row, o) in m.chunks_exact(cols).zip(out.iter_mut()) {
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// out[k] += sum_r m[r, k] * v[r]
fn matvec_t_add(m: &[f64], cols: usize, v: &[f64], out: &mut [f64]) {
    for (row, &scale) in m.chunks_exact(cols).zip(v) {
        if scale != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * scale;
            }
        }
    }
}

/// m[r, k] += u[r] * v[k]
fn outer_add(m: &mut [f64], cols: usize, u: &[f64], v: &[f64]) {
    for (row, &scale) in m.chunks_exact_mut(cols).zip(u) {
        if scale != 0.0 {
            for (a, b) in row.iter_mut().zip(v) {
                *a += scale * b;
            }
        }
    }
}

/// One LSTM step: `c' = f*c + i*g`, `h' = o*tanh(c')`.
pub fn lstm_cell(layer: &LayerWeights, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>, GateCache) {
    let hidden = h.len();
    let mut pre = layer.bias.data().to_vec();
    matvec_add(layer.input.data(), x.len(), x, &mut pre);
    matvec_add(layer.recurrent.data(), hidden, h, &mut pre);

    let input: Vec<f64> = pre[..hidden].iter().map(|&a| sigmoid(a)).collect();
    let forget: Vec<f64> = pre[hidden..2 * hidden].iter().map(|&a| sigmoid(a)).collect();
    let cell: Vec<f64> = pre[2 * hidden..3 * hidden].iter().map(|a| a.tanh()).collect();
    let output: Vec<f64> = pre[3 * hidden..].iter().map(|&a| sigmoid(a)).collect();

    let c_new: Vec<f64> = (0..hidden).map(|k| forget[k] * c[k] + input[k] * cell[k]).collect();
    let tanh_c: Vec<f64> = c_new.iter().map(|v| v.tanh()).collect();
    let h_new: Vec<f64> = (0..hidden).map(|k| output[k] * tanh_c[k]).collect();

    let cache = GateCache { input, forget, cell, output, c: c_new.clone(), tanh_c };
    (h_new, c_new, cache)
}

/// Per-layer record of one forward pass over `true_len` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCache {
    pub inputs: Vec<Vec<f64>>,
    /// `hidden[0]` is the zero initial state; `hidden[t + 1]` follows step t.
    pub hidden: Vec<Vec<f64>>,
    pub gates: Vec<GateCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub tokens: Vec<u32>,
    pub layers: Vec<LayerCache>,
    /// Inverted-dropout multipliers applied to the last top-layer state.
    pub dropout_mask: Vec<f64>,
    pub logit: f64,
}

impl ForwardCache {
    pub fn true_len(&self) -> usize {
        self.tokens.len()
    }
}

fn dropout_mask(hidden: usize, rate: f64, mode: Mode) -> Vec<f64> {
    match mode {
        Mode::Train { seed } if rate > 0.0 => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let keep = 1.0 - rate;
            (0..hidden)
                .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect()
        }
        _ => vec![1.0; hidden],
    }
}

/// Runs the stacked LSTM over the real tokens only and returns the logit.
/// No sigmoid is applied.
pub fn forward(params: &ModelParams, seq: &TokenSequence, mode: Mode) -> Result<(f64, ForwardCache)> {
    if seq.true_len == 0 {
        return Err(Error::EmptySequence);
    }
    let config = &params.config;
    let w = &params.weights;
    let tokens = seq.tokens().to_vec();
    if let Some(&bad) = tokens.iter().find(|&&id| id as usize >= config.vocab_size) {
        return Err(Error::InvalidConfig(format!("token id {bad} outside vocab_size {}", config.vocab_size)));
    }

    let h = config.hidden_dim;
    let mut inputs: Vec<Vec<f64>> = tokens.iter().map(|&id| w.embedding.row(id as usize).to_vec()).collect();
    let mut layers = Vec::with_capacity(w.layers.len());
    for layer in &w.layers {
        let mut hidden = vec![vec![0.0; h]];
        let mut gates = Vec::with_capacity(inputs.len());
        let mut c = vec![0.0; h];
        for x in &inputs {
            let (h_new, c_new, g) = lstm_cell(layer, x, hidden.last().unwrap(), &c);
            hidden.push(h_new);
            c = c_new;
            gates.push(g);
        }
        let next_inputs = hidden[1..].to_vec();
        layers.push(LayerCache { inputs, hidden, gates });
        inputs = next_inputs;
    }

    let last = layers.last().unwrap().hidden.last().unwrap();
    let dropout_mask = dropout_mask(h, config.dropout_rate, mode);
    let logit = w.dense_bias.data()[0]
        + last
            .iter()
            .zip(&dropout_mask)
            .zip(w.dense_weight.data())
            .map(|((a, m), wd)| a * m * wd)
            .sum::<f64>();

    Ok((logit, ForwardCache { tokens, layers, dropout_mask, logit }))
}

/// Per-example gradients. Embedding gradients are kept sparse, one row per
/// distinct token in the sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embedding_rows: BTreeMap<u32, Vec<f64>>,
    pub layers: Vec<LayerWeights>,
    pub dense_weight: Vec<f64>,
    pub dense_bias: f64,
    /// `d loss / d logit`.
    pub d_logit: f64,
}

impl Gradients {
    /// `acc += scale * self`.
    pub fn add_scaled_into(&self, acc: &mut Weights, scale: f64) {
        for (&id, row) in &self.embedding_rows {
            for (a, g) in acc.embedding.row_mut(id as usize).iter_mut().zip(row) {
                *a += scale * g;
            }
        }
        for (dst, src) in acc.layers.iter_mut().zip(&self.layers) {
            for (d, s) in [
                (&mut dst.input, &src.input),
                (&mut dst.recurrent, &src.recurrent),
                (&mut dst.bias, &src.bias),
            ] {
                for (a, g) in d.data_mut().iter_mut().zip(s.data()) {
                    *a += scale * g;
                }
            }
        }
        for (a, g) in acc.dense_weight.data_mut().iter_mut().zip(&self.dense_weight) {
            *a += scale * g;
        }
        acc.dense_bias.data_mut()[0] += scale * self.dense_bias;
    }

    pub fn to_dense(&self, params: &ModelParams) -> Weights {
        let mut w = Weights::zeros(&params.config);
        self.add_scaled_into(&mut w, 1.0);
        w
    }
}

fn check_cache(params: &ModelParams, cache: &ForwardCache) -> Result<()> {
    let config = &params.config;
    let t = cache.true_len();
    if t == 0 {
        return Err(Error::CacheMismatch("empty cache".into()));
    }
    if cache.layers.len() != config.n_lstm_layers {
        return Err(Error::CacheMismatch(format!(
            "{} cached layers for a {}-layer model",
            cache.layers.len(),
            config.n_lstm_layers
        )));
    }
    if cache.dropout_mask.len() != config.hidden_dim {
        return Err(Error::CacheMismatch("dropout mask width".into()));
    }
    for (l, layer) in cache.layers.iter().enumerate() {
        let widths_ok = layer.inputs.iter().all(|x| x.len() == config.layer_input_dim(l))
            && layer.hidden.iter().all(|h| h.len() == config.hidden_dim);
        if layer.inputs.len() != t || layer.gates.len() != t || layer.hidden.len() != t + 1 || !widths_ok {
            return Err(Error::CacheMismatch(format!("layer {l} does not cover {t} steps at model width")));
        }
    }
    if cache.tokens.iter().any(|&id| id as usize >= config.vocab_size) {
        return Err(Error::CacheMismatch("token id outside vocabulary".into()));
    }
    Ok(())
}

/// Backpropagation through time for one example.
pub fn backward(params: &ModelParams, cache: &ForwardCache, label: bool) -> Result<Gradients> {
    check_cache(params, cache)?;
    let config = &params.config;
    let w = &params.weights;
    let h = config.hidden_dim;
    let steps = cache.true_len();

    let d_logit = bce_with_logits_grad(cache.logit, label);
    let top = cache.layers.last().unwrap();
    let last_h = top.hidden.last().unwrap();
    let dense_weight: Vec<f64> = last_h.iter().zip(&cache.dropout_mask).map(|(a, m)| d_logit * a * m).collect();

    // upstream[t] = d loss / d h_t of the layer currently being processed
    let mut upstream = vec![vec![0.0; h]; steps];
    upstream[steps - 1] = w
        .dense_weight
        .data()
        .iter()
        .zip(&cache.dropout_mask)
        .map(|(wd, m)| d_logit * wd * m)
        .collect();

    let mut layer_grads: Vec<LayerWeights> = Vec::with_capacity(config.n_lstm_layers);
    for (l, (weights, lc)) in w.layers.iter().zip(&cache.layers).enumerate().rev() {
        let in_dim = config.layer_input_dim(l);
        let mut g = LayerWeights {
            input: super::Tensor::zeros(weights.input.shape()),
            recurrent: super::Tensor::zeros(weights.recurrent.shape()),
            bias: super::Tensor::zeros(weights.bias.shape()),
        };
        let mut d_inputs = vec![vec![0.0; in_dim]; steps];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut d_pre = vec![0.0; 4 * h];

        for t in (0..steps).rev() {
            let gate = &lc.gates[t];
            let c_prev: &[f64] = if t == 0 { &[] } else { &lc.gates[t - 1].c };
            for k in 0..h {
                let dh = upstream[t][k] + dh_next[k];
                let (i, f, gc, o, tc) = (gate.input[k], gate.forget[k], gate.cell[k], gate.output[k], gate.tanh_c[k]);
                let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
                let cp = if t == 0 { 0.0 } else { c_prev[k] };
                d_pre[k] = dc * gc * i * (1.0 - i);
                d_pre[h + k] = dc * cp * f * (1.0 - f);
                d_pre[2 * h + k] = dc * i * (1.0 - gc * gc);
                d_pre[3 * h + k] = dh * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            outer_add(g.input.data_mut(), in_dim, &d_pre, &lc.inputs[t]);
            outer_add(g.recurrent.data_mut(), h, &d_pre, &lc.hidden[t]);
            for (b, d) in g.bias.data_mut().iter_mut().zip(&d_pre) {
                *b += d;
            }
            matvec_t_add(weights.input.data(), in_dim, &d_pre, &mut d_inputs[t]);
            dh_next.fill(0.0);
            matvec_t_add(weights.recurrent.data(), h, &d_pre, &mut dh_next);
        }
        layer_grads.push(g);
        upstream = d_inputs;
    }
    layer_grads.reverse();

    let mut embedding_rows: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (&id, d) in cache.tokens.iter().zip(&upstream) {
        let row = embedding_rows.entry(id).or_insert_with(|| vec![0.0; config.embed_dim]);
        for (r, v) in row.iter_mut().zip(d) {
            *r += v;
        }
    }

    Ok(Gradients { embedding_rows, layers: layer_grads, dense_weight, dense_bias: d_logit, d_logit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_params, NetworkConfig, Tensor};

    fn layer_with_forget_bias(hidden: usize, in_dim: usize, forget_bias: f64) -> LayerWeights {
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(forget_bias);
        LayerWeights {
            input: Tensor::zeros(&[4 * hidden, in_dim]),
            recurrent: Tensor::zeros(&[4 * hidden, hidden]),
            bias,
        }
    }

    #[test]
    fn zero_cell_stays_zero() {
        let layer = layer_with_forget_bias(3, 2, 0.0);
        let (h, c, g) = lstm_cell(&layer, &[0.7, -2.0], &[0.0; 3], &[0.0; 3]);
        assert_eq!(h, [0.0; 3]);
        assert_eq!(c, [0.0; 3]);
        assert!(g.input.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn forget_bias_scales_cell_state() {
        let layer = layer_with_forget_bias(3, 2, 1.0);
        let c0 = [1.0, -2.0, 0.5];
        let (_, c, _) = lstm_cell(&layer, &[0.3, 0.1], &[0.0; 3], &c0);
        let f = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((f - 0.731_058_578_630_004_9).abs() < 1e-15);
        for (a, b) in c.iter().zip(c0) {
            assert!((a - f * b).abs() < 1e-15);
        }
    }

    fn config() -> NetworkConfig {
        NetworkConfig { vocab_size: 13, embed_dim: 5, hidden_dim: 4, n_lstm_layers: 2, dropout_rate: 0.4, max_len: 7 }
    }

    fn seq(ids: &[u32], max_len: usize) -> TokenSequence {
        let mut v = ids.to_vec();
        v.resize(max_len, 0);
        TokenSequence { ids: v, true_len: ids.len() }
    }

    #[test]
    fn zero_dense_head_gives_zero_logit() {
        let mut p = init_params(&config(), 3).unwrap();
        p.weights.dense_weight = Tensor::zeros(&[4]);
        let (z, _) = forward(&p, &seq(&[3, 4, 5], 7), Mode::Train { seed: 1 }).unwrap();
        assert_eq!(z, 0.0);
    }

    #[test]
    fn eval_is_deterministic_and_ignores_padding() {
        let p = init_params(&config(), 3).unwrap();
        let a = forward(&p, &seq(&[3, 4, 5], 7), Mode::Eval).unwrap();
        let b = forward(&p, &seq(&[3, 4, 5], 7), Mode::Eval).unwrap();
        let c = forward(&p, &seq(&[3, 4, 5], 3), Mode::Eval).unwrap();
        let d = forward(&p, &seq(&[3, 4, 5], 40), Mode::Eval).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0, c.0);
        assert_eq!(a.0, d.0);
        assert_eq!(a.1.true_len(), 3);
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let p = init_params(&config(), 3).unwrap();
        assert!(matches!(forward(&p, &seq(&[], 7), Mode::Eval), Err(Error::EmptySequence)));
    }

    #[test]
    fn tanh_of_cell_is_bounded() {
        let p = init_params(&config(), 5).unwrap();
        let (_, cache) = forward(&p, &seq(&[1, 2, 3, 4, 5, 6, 7], 7), Mode::Eval).unwrap();
        for layer in &cache.layers {
            for g in &layer.gates {
                assert!(g.tanh_c.iter().all(|v| v.abs() <= 1.0));
            }
        }
    }

    #[test]
    fn loss_gradient_identity() {
        let p = init_params(&config(), 4).unwrap();
        let (z, cache) = forward(&p, &seq(&[2, 9, 12], 7), Mode::Train { seed: 3 }).unwrap();
        for label in [false, true] {
            let g = backward(&p, &cache, label).unwrap();
            let expected = sigmoid(z) - if label { 1.0 } else { 0.0 };
            assert!((g.d_logit - expected).abs() < 1e-12);
            assert!((g.dense_bias - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_prediction_zeroes_dense_gradient() {
        let mut p = init_params(&config(), 4).unwrap();
        p.weights.dense_weight = Tensor::zeros(&[4]);
        p.weights.dense_bias.data_mut()[0] = 40.0;
        let (_, cache) = forward(&p, &seq(&[2, 9], 7), Mode::Eval).unwrap();
        let g = backward(&p, &cache, true).unwrap();
        // sigmoid(40) rounds to exactly 1.0 in f64
        assert_eq!(g.dense_bias, 0.0);
        assert!(g.dense_weight.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn untouched_embedding_rows_have_zero_gradient() {
        let p = init_params(&config(), 6).unwrap();
        let (_, cache) = forward(&p, &seq(&[2, 9, 2, 5], 7), Mode::Eval).unwrap();
        let g = backward(&p, &cache, true).unwrap();
        assert_eq!(g.embedding_rows.keys().copied().collect::<Vec<_>>(), [2, 5, 9]);
        let dense = g.to_dense(&p);
        for row in [0usize, 1, 3, 4, 6, 7, 8, 10, 11, 12] {
            assert!(dense.embedding.row(row).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn mismatched_cache_is_rejected() {
        let p = init_params(&config(), 6).unwrap();
        let (_, mut cache) = forward(&p, &seq(&[2, 9], 7), Mode::Eval).unwrap();
        let other = init_params(&NetworkConfig { hidden_dim: 3, ..config() }, 6).unwrap();
        assert!(matches!(backward(&other, &cache, true), Err(Error::CacheMismatch(_))));
        cache.layers.pop();
        assert!(matches!(backward(&p, &cache, true), Err(Error::CacheMismatch(_))));
    }

    #[test]
    fn dropout_mask_has_unit_expectation() {
        let rate = 0.4;
        let n = 10_000;
        let width = 32;
        let mut sums = vec![0.0; width];
        for seed in 0..n {
            for (s, m) in sums.iter_mut().zip(dropout_mask(width, rate, Mode::Train { seed })) {
                *s += m;
            }
        }
        // each draw is 0 or 1/(1-rate): variance rate/(1-rate)
        let sigma = (rate / (1.0 - rate) / n as f64).sqrt();
        for (pos, s) in sums.iter().enumerate() {
            let mean = s / n as f64;
            assert!((mean - 1.0).abs() < 3.0 * sigma, "position {pos}: mean {mean}, sigma {sigma}");
        }
        assert_eq!(dropout_mask(4, rate, Mode::Eval), [1.0; 4]);
        assert_eq!(dropout_mask(4, 0.0, Mode::Train { seed: 1 }), [1.0; 4]);
    }
}
