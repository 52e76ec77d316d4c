//! Corruption-aware inference for small image classifiers.
//!
//! The crate detects the corruption type of an input image from its
//! normalized Fourier amplitude spectrum and swaps the BatchNorm running
//! statistics of a pretrained classifier from a per-corruption lookup
//! table before running the forward pass. Everything is deterministic from
//! explicit seeds and self-contained: dataset generation, corruption
//! synthesis, model training, evaluation and persistence all live here.
//!
//! Start from [`pipeline::AdaptivePipeline`] or the runnable programs in
//! `examples/`.

pub mod basemodel;
pub mod cli;
pub mod corruptions;
pub mod dataio;
pub mod detector;
pub mod error;
pub mod harness;
pub mod image;
pub mod numerics;
pub mod pipeline;
pub mod rng;
pub mod spectrum;

pub use corruptions::{CorruptionFamily, CorruptionLabel, Severity};
pub use error::{Error, Result};
pub use image::Image;
pub use pipeline::AdaptivePipeline;
