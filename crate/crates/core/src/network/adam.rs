use serde::{Deserialize, Serialize};

use super::{ModelParams, Weights};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.003, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Weights,
    pub v: Weights,
    /// Number of completed steps.
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self { m: Weights::zeros(&params.config), v: Weights::zeros(&params.config), t: 0 }
    }
}

/// Bias-corrected Adam update of one tensor at step `t` (1-based).
pub fn adam_update(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], t: u64, hp: &AdamConfig) {
    let bias1 = 1.0 - hp.beta1.powi(t as i32);
    let bias2 = 1.0 - hp.beta2.powi(t as i32);
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
        *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *p -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
}

/// One optimizer step. Nothing is modified if any gradient is non-finite.
pub fn adam_step(params: &mut ModelParams, grads: &Weights, state: &mut AdamState, hp: &AdamConfig) -> Result<()> {
    params.weights.check_same_layout(grads)?;
    params.weights.check_same_layout(&state.m)?;
    params.weights.check_same_layout(&state.v)?;
    for (name, g) in grads.tensors() {
        if g.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient(name));
        }
    }

    state.t += 1;
    let t = state.t;
    let AdamState { m, v, .. } = state;
    for ((((_, p), (_, g)), (_, m)), (_, v)) in params
        .weights
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(m.tensors_mut())
        .zip(v.tensors_mut())
    {
        adam_update(p.data_mut(), g.data(), m.data_mut(), v.data_mut(), t, hp);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_params, NetworkConfig};

    fn config() -> NetworkConfig {
        NetworkConfig { vocab_size: 6, embed_dim: 3, hidden_dim: 2, n_lstm_layers: 2, dropout_rate: 0.0, max_len: 4 }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = init_params(&config(), 1).unwrap();
        let before = p.clone();
        let mut s = AdamState::new(&p);
        let zero = Weights::zeros(&p.config);
        adam_step(&mut p, &zero, &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_on_scalar() {
        let hp = AdamConfig::default();
        let (mut p, mut m, mut v) = ([0.0], [0.0], [0.0]);
        adam_update(&mut p, &[1.0], &mut m, &mut v, 1, &hp);
        let expected = -0.003 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15, "{}", p[0]);
        assert!((m[0] - 0.1).abs() < 1e-15);
        assert!((v[0] - 0.001).abs() < 1e-15);
    }

    #[test]
    fn deterministic_on_clones() {
        let p = init_params(&config(), 2).unwrap();
        let mut g = Weights::zeros(&p.config);
        for (i, (_, t)) in g.tensors_mut().into_iter().enumerate() {
            t.data_mut().iter_mut().enumerate().for_each(|(j, x)| *x = ((i * 7 + j) as f64).sin());
        }
        let run = || {
            let mut p = p.clone();
            let mut s = AdamState::new(&p);
            adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
            adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
            (p, s)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut p = init_params(&config(), 2).unwrap();
        let before = p.clone();
        let mut g = Weights::zeros(&p.config);
        g.layers[1].recurrent.data_mut()[3] = f64::NAN;
        let mut s = AdamState::new(&p);
        let err = adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap_err();
        assert!(matches!(&err, Error::NonFiniteGradient(name) if name == "lstm1.recurrent"));
        assert_eq!(p, before);
        assert_eq!(s.t, 0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = init_params(&config(), 2).unwrap();
        let other = NetworkConfig { hidden_dim: 3, ..config() };
        let g = Weights::zeros(&other);
        let mut s = AdamState::new(&p);
        assert!(matches!(
            adam_step(&mut p, &g, &mut s, &AdamConfig::default()),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
