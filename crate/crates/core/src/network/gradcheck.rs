use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::sigmoid;
use super::lstm::{backward, forward, Mode};
use super::{init_params, NetworkConfig, Weights};
use crate::textprep::TokenSequence;
use crate::Result;

const FD_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|a - n| / max(|a|, |n|, 1e-12)` over all parameters.
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub n_checked: usize,
}

/// `bce(z_plus) - bce(z_minus)` without subtracting two rounded losses:
/// `softplus(a) - softplus(b) = ln(1 + sigmoid(b) * (e^(a-b) - 1))`.
fn loss_difference(z_plus: f64, z_minus: f64, label: bool) -> f64 {
    let d = z_plus - z_minus;
    let softplus_diff = (sigmoid(z_minus) * d.exp_m1()).ln_1p();
    if label {
        softplus_diff - d
    } else {
        softplus_diff
    }
}

/// Compares backpropagated gradients with central finite differences on one
/// random example (full-length sequence, random label, fixed dropout mask).
pub fn grad_check(config: &NetworkConfig, seed: u64) -> Result<GradCheckReport> {
    grad_check_with(config, seed, |_| {})
}

/// Like [`grad_check`], but lets the caller tamper with the analytic
/// gradient before comparison.
pub fn grad_check_with(
    config: &NetworkConfig,
    seed: u64,
    tamper: impl FnOnce(&mut Weights),
) -> Result<GradCheckReport> {
    let mut params = init_params(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let ids: Vec<u32> = (0..config.max_len).map(|_| rng.gen_range(1..config.vocab_size as u32)).collect();
    let seq = TokenSequence { ids, true_len: config.max_len };
    let label: bool = rng.gen();
    let mode = Mode::Train { seed: rng.gen() };

    let (_, cache) = forward(&params, &seq, mode)?;
    let mut analytic = backward(&params, &cache, label)?.to_dense(&params);
    tamper(&mut analytic);

    let mut report = GradCheckReport { max_rel_error: 0.0, worst_tensor: String::new(), worst_index: 0, n_checked: 0 };
    let names: Vec<String> = params.weights.tensors().into_iter().map(|(n, _)| n).collect();
    for (ti, name) in names.iter().enumerate() {
        let len = params.weights.tensors()[ti].1.data().len();
        for idx in 0..len {
            let original = params.weights.tensors()[ti].1.data()[idx];
            params.weights.tensors_mut()[ti].1.data_mut()[idx] = original + FD_EPSILON;
            let (plus, _) = forward(&params, &seq, mode)?;
            params.weights.tensors_mut()[ti].1.data_mut()[idx] = original - FD_EPSILON;
            let (minus, _) = forward(&params, &seq, mode)?;
            params.weights.tensors_mut()[ti].1.data_mut()[idx] = original;

            let numeric = loss_difference(plus, minus, label) / (2.0 * FD_EPSILON);
            let a = analytic.tensors()[ti].1.data()[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_tensor = name.clone();
                report.worst_index = idx;
            }
            report.n_checked += 1;
        }
    }
    Ok(report)
}
