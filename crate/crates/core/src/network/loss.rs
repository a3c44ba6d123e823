/// Logistic function, evaluated without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a logit: `max(z, 0) - z*y + ln(1 + e^-|z|)`.
pub fn bce_with_logits(z: f64, label: bool) -> f64 {
    let y = if label { 1.0 } else { 0.0 };
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// `d loss / d z = sigmoid(z) - y`.
pub fn bce_with_logits_grad(z: f64, label: bool) -> f64 {
    sigmoid(z) - if label { 1.0 } else { 0.0 }
}
