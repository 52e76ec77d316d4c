//! SGD with classical momentum.

use crate::error::{Error, Result};

/// One momentum buffer per parameter block, same length as the block.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    velocity: Vec<Vec<f32>>,
    pub momentum: f32,
}

impl SgdMomentum {
    /// `block_sizes` fixes the parameter layout up front.
    pub fn new(block_sizes: &[usize], momentum: f32) -> Self {
        SgdMomentum {
            velocity: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            momentum,
        }
    }

    /// v = momentum * v + grad; p -= lr * v, for one block.
    pub fn step(&mut self, block: usize, params: &mut [f32], grads: &[f32], lr: f32) -> Result<()> {
        if lr <= 0.0 {
            return Err(Error::InvalidArgument {
                context: "sgd_step",
                detail: format!("learning rate must be positive, got {lr}"),
            });
        }
        let v = &mut self.velocity[block];
        if v.len() != params.len() || grads.len() != params.len() {
            return Err(Error::ShapeMismatch {
                context: "sgd_step",
                expected: vec![v.len()],
                got: vec![params.len(), grads.len()],
            });
        }
        let m = self.momentum;
        for ((vel, p), &g) in v.iter_mut().zip(params.iter_mut()).zip(grads) {
            *vel = m * *vel + g;
            *p -= lr * *vel;
        }
        Ok(())
    }
}
