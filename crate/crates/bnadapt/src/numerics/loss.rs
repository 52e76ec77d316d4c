//! Softmax cross-entropy with the usual fused gradient.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Stable softmax of one logit row.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = logits.iter().map(|&v| ((v - max) as f64).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| (e / sum) as f32).collect()
}

/// Loss and gradient for one sample: grad = softmax(logits) - onehot(label).
pub fn softmax_xent(logits: &[f32], label: usize) -> Result<(f64, Vec<f32>)> {
    if label >= logits.len() {
        return Err(Error::InvalidLabel {
            context: "softmax_xent",
            got: label,
            max: logits.len().saturating_sub(1),
        });
    }
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f64;
    for &v in logits {
        sum += ((v - max) as f64).exp();
    }
    let log_sum = sum.ln() + max as f64;
    let loss = log_sum - logits[label] as f64;
    let mut grad: Vec<f32> = logits
        .iter()
        .map(|&v| (((v - max) as f64).exp() / sum) as f32)
        .collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Mean loss over a [B, K] logit batch; gradient already divided by B.
pub fn softmax_xent_batch(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != b {
        return Err(Error::ShapeMismatch {
            context: "softmax_xent_batch labels",
            expected: vec![b],
            got: vec![labels.len()],
        });
    }
    let mut total = 0.0f64;
    let mut grad = vec![0.0f32; b * k];
    for (i, &label) in labels.iter().enumerate() {
        let (loss, g) = softmax_xent(&logits.data()[i * k..(i + 1) * k], label)?;
        total += loss;
        let scale = 1.0 / b as f32;
        for (slot, gv) in grad[i * k..(i + 1) * k].iter_mut().zip(g) {
            *slot = gv * scale;
        }
    }
    Ok((total / b as f64, Tensor::from_vec(vec![b, k], grad)?))
}
