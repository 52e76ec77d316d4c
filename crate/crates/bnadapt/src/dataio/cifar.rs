//! CIFAR-10 binary records: 1 label byte followed by 3072 pixel bytes
//! (1024 red, 1024 green, 1024 blue, each row-major). Pixels map to [0, 1]
//! by division by 255.

use super::Dataset;
use crate::error::{Error, Result};
use crate::image::Image;

pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;

pub fn parse_cifar10_bin(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::CifarTrailingBytes {
            len: bytes.len(),
            record_size: CIFAR_RECORD_BYTES,
        });
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (record, chunk) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = chunk[0];
        if label > 9 {
            return Err(Error::CifarBadLabel { record, label });
        }
        // Planar RGB in the record matches the Image layout directly.
        let data: Vec<f32> = chunk[1..].iter().map(|&b| b as f32 / 255.0).collect();
        images.push(Image::from_data(32, 32, 3, data)?);
        labels.push(label);
    }
    Dataset::new(images, labels, "cifar10")
}

pub fn write_cifar10_bin(dataset: &Dataset) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(dataset.len() * CIFAR_RECORD_BYTES);
    for (img, &label) in dataset.images.iter().zip(&dataset.class_labels) {
        if img.height() != 32 || img.width() != 32 || img.channels() != 3 {
            return Err(Error::ShapeMismatch {
                context: "write_cifar10_bin",
                expected: vec![32, 32, 3],
                got: vec![img.height(), img.width(), img.channels()],
            });
        }
        out.push(label);
        out.extend(img.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    Ok(out)
}
