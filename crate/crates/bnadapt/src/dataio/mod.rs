//! Dataset ingestion and bit-exact artifact persistence.

mod artifacts;
mod cifar;
mod container;
mod synthetic;

pub use artifacts::*;
pub use cifar::{parse_cifar10_bin, write_cifar10_bin, CIFAR_RECORD_BYTES};
pub use container::{
    load_container, read_container, save_container, write_container, Chunk, ChunkMap,
    CONTAINER_VERSION,
};
pub use synthetic::{gen_synthetic, CLASS_NAMES};

use crate::error::{Error, Result};
use crate::image::Image;

/// Labeled image collection; all images share one geometry.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub class_labels: Vec<u8>,
    pub split: String,
}

impl Dataset {
    pub fn new(images: Vec<Image>, class_labels: Vec<u8>, split: impl Into<String>) -> Result<Self> {
        if images.len() != class_labels.len() {
            return Err(Error::ShapeMismatch {
                context: "Dataset",
                expected: vec![images.len()],
                got: vec![class_labels.len()],
            });
        }
        if let Some(bad) = class_labels.iter().position(|&l| l > 9) {
            return Err(Error::InvalidLabel {
                context: "Dataset class label",
                got: class_labels[bad] as usize,
                max: 9,
            });
        }
        Ok(Dataset { images, class_labels, split: split.into() })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}
