//! Channel-wise batch normalization over NCHW tensors.
//!
//! Statistics use the population form (divide by count), matching how the
//! stored running statistics are applied at eval time. Accumulation is f64.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Per-layer normalization state: running statistics plus the affine pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BnLayerState {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub eps: f32,
}

impl BnLayerState {
    /// Identity-normalization state for `channels` channels.
    pub fn identity(channels: usize) -> Self {
        BnLayerState {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.mean.len();
        if self.var.len() != c || self.gamma.len() != c || self.beta.len() != c {
            return Err(Error::ShapeMismatch {
                context: "BnLayerState vectors",
                expected: vec![c],
                got: vec![self.var.len(), self.gamma.len(), self.beta.len()],
            });
        }
        if self.eps <= 0.0 || !self.eps.is_finite() {
            return Err(Error::InvalidArgument {
                context: "BnLayerState",
                detail: format!("eps must be positive, got {}", self.eps),
            });
        }
        if self.var.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidArgument {
                context: "BnLayerState",
                detail: "variance must be nonnegative and finite".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

pub struct BnForward {
    pub output: Tensor,
    /// Batch statistics actually used; present in train mode only.
    pub batch_mean: Option<Vec<f32>>,
    pub batch_var: Option<Vec<f32>>,
}

fn nchw(x: &Tensor, channels: usize) -> Result<[usize; 4]> {
    if x.shape().len() != 4 || x.shape()[1] != channels {
        return Err(Error::ShapeMismatch {
            context: "batchnorm input",
            expected: vec![0, channels, 0, 0],
            got: x.shape().to_vec(),
        });
    }
    Ok([x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]])
}

/// Per-channel mean and population variance over batch and spatial dims.
pub fn batch_stats(x: &Tensor, channels: usize) -> Result<(Vec<f32>, Vec<f32>)> {
    let [n, c, h, w] = nchw(x, channels)?;
    let count = (n * h * w) as f64;
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for ni in 0..n {
        for ci in 0..c {
            let plane = &x.data()[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
            mean[ci] += plane.iter().map(|&v| v as f64).sum::<f64>();
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    for ni in 0..n {
        for ci in 0..c {
            let plane = &x.data()[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
            let m = mean[ci];
            var[ci] += plane.iter().map(|&v| (v as f64 - m) * (v as f64 - m)).sum::<f64>();
        }
    }
    for v in &mut var {
        *v /= count;
    }
    Ok((
        mean.into_iter().map(|m| m as f32).collect(),
        var.into_iter().map(|v| v as f32).collect(),
    ))
}

fn affine_apply(x: &Tensor, mean: &[f32], var: &[f32], state: &BnLayerState) -> Tensor {
    let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let mut scale = vec![0.0f32; c];
    let mut shift = vec![0.0f32; c];
    for ci in 0..c {
        let s = state.gamma[ci] / (var[ci] + state.eps).sqrt();
        scale[ci] = s;
        shift[ci] = state.beta[ci] - mean[ci] * s;
    }
    let mut out = vec![0.0f32; x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            let (s, sh) = (scale[ci], shift[ci]);
            for (o, &v) in out[base..base + h * w].iter_mut().zip(&x.data()[base..base + h * w]) {
                *o = v * s + sh;
            }
        }
    }
    Tensor::from_vec(vec![n, c, h, w], out).expect("same shape")
}

/// Normalize `x`. Train mode uses the current batch statistics (and reports
/// them); eval mode uses `state.mean` / `state.var`. Both apply gamma/beta.
pub fn batchnorm(x: &Tensor, state: &BnLayerState, mode: BnMode) -> Result<BnForward> {
    state.validate()?;
    let [n, ..] = nchw(x, state.channels())?;
    match mode {
        BnMode::Train => {
            if n < 2 {
                return Err(Error::BatchTooSmall { got: n, min: 2 });
            }
            let (mean, var) = batch_stats(x, state.channels())?;
            let output = affine_apply(x, &mean, &var, state);
            Ok(BnForward { output, batch_mean: Some(mean), batch_var: Some(var) })
        }
        BnMode::Eval => {
            let output = affine_apply(x, &state.mean, &state.var, state);
            Ok(BnForward { output, batch_mean: None, batch_var: None })
        }
    }
}

/// Train-mode backward through the batch statistics.
///
/// Returns (grad_input, grad_gamma, grad_beta).
pub fn batchnorm_train_backward(
    x: &Tensor,
    state: &BnLayerState,
    batch_mean: &[f32],
    batch_var: &[f32],
    grad_out: &Tensor,
) -> Result<(Tensor, Vec<f32>, Vec<f32>)> {
    let [n, c, h, w] = nchw(x, state.channels())?;
    let count = (n * h * w) as f64;
    let mut grad_gamma = vec![0.0f64; c];
    let mut grad_beta = vec![0.0f64; c];
    let mut sum_dy = vec![0.0f64; c];
    let mut sum_dy_xhat = vec![0.0f64; c];
    let inv_std: Vec<f64> =
        (0..c).map(|ci| 1.0 / (batch_var[ci] as f64 + state.eps as f64).sqrt()).collect();

    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            let m = batch_mean[ci] as f64;
            let istd = inv_std[ci];
            for i in base..base + h * w {
                let xhat = (x.data()[i] as f64 - m) * istd;
                let dy = grad_out.data()[i] as f64;
                sum_dy[ci] += dy;
                sum_dy_xhat[ci] += dy * xhat;
                grad_gamma[ci] += dy * xhat;
                grad_beta[ci] += dy;
            }
        }
    }

    let mut grad_in = vec![0.0f32; x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            let m = batch_mean[ci] as f64;
            let istd = inv_std[ci];
            let g = state.gamma[ci] as f64;
            let mean_dy = sum_dy[ci] / count;
            let mean_dy_xhat = sum_dy_xhat[ci] / count;
            for i in base..base + h * w {
                let xhat = (x.data()[i] as f64 - m) * istd;
                let dy = grad_out.data()[i] as f64;
                grad_in[i] = (g * istd * (dy - mean_dy - xhat * mean_dy_xhat)) as f32;
            }
        }
    }
    Ok((
        Tensor::from_vec(vec![n, c, h, w], grad_in)?,
        grad_gamma.into_iter().map(|v| v as f32).collect(),
        grad_beta.into_iter().map(|v| v as f32).collect(),
    ))
}
