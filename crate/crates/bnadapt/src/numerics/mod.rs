//! Minimal dense numerics kernel: tensors, 2-D FFT, layers with hand-written
//! backward passes, batch normalization and SGD.

mod batchnorm;
mod simd;
mod fft;
mod layers;
mod loss;
mod optim;
mod tensor;

pub use batchnorm::{
    batch_stats, batchnorm, batchnorm_train_backward, BnForward, BnLayerState, BnMode,
};
pub use fft::{amplitude, fft2, fftshift, ComplexGrid};
pub use layers::{
    avgpool2, avgpool2_backward, conv2d, conv2d_backward, dense, dense_backward, global_avgpool,
    global_avgpool_backward, matmul_nn, matmul_nt, matmul_tn, maxpool2, maxpool2_backward, relu,
    relu_backward,
};
pub use loss::{softmax, softmax_xent, softmax_xent_batch};
pub use optim::SgdMomentum;
pub use tensor::Tensor;
