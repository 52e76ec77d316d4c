//! End-to-end adaptive inference: featurize, detect the corruption type,
//! fetch the matching BN statistics and run the swapped forward pass.

use crate::basemodel::{apply_bn, BaseCnn, BnTable};
use crate::corruptions::CorruptionLabel;
use crate::detector::{predict, DetectorModel};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::spectrum::{extract_feature, NaturalSpectrum};
use std::sync::Arc;

/// Batch handling for [`AdaptivePipeline::infer_batch`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DetectionMode {
    /// Detect and route every image independently.
    #[default]
    PerImage,
    /// Detect per image, then route the whole batch through the modal
    /// label (ties go to the smallest code).
    BatchMajority,
}

#[derive(Debug, Clone)]
pub struct AdaptivePipeline {
    pub eps: NaturalSpectrum,
    pub detector: DetectorModel,
    pub base: Arc<BaseCnn>,
    pub table: BnTable,
    pub mode: DetectionMode,
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub class: usize,
    pub detected: CorruptionLabel,
    pub class_probs: Vec<f32>,
}

impl AdaptivePipeline {
    pub fn new(
        eps: NaturalSpectrum,
        detector: DetectorModel,
        base: Arc<BaseCnn>,
        table: BnTable,
        mode: DetectionMode,
    ) -> Result<Self> {
        if detector.in_dim() != eps.feature_len() {
            return Err(Error::ShapeMismatch {
                context: "pipeline detector input",
                expected: vec![eps.feature_len()],
                got: vec![detector.in_dim()],
            });
        }
        if detector.n_classes() != table.len() {
            return Err(Error::ShapeMismatch {
                context: "pipeline detector classes vs table entries",
                expected: vec![table.len()],
                got: vec![detector.n_classes()],
            });
        }
        for code in 0..detector.n_classes() {
            let label = CorruptionLabel::from_code(code as u8)?;
            if table.get(label).is_none() {
                return Err(Error::InvalidArgument {
                    context: "pipeline table",
                    detail: format!("missing entry for {}", label.name()),
                });
            }
        }
        for (label, stats) in table.iter() {
            stats.validate_for(&base).map_err(|_| Error::InvalidArgument {
                context: "pipeline table",
                detail: format!("entry {} incompatible with the model", label.name()),
            })?;
        }
        Ok(AdaptivePipeline { eps, detector, base, table, mode })
    }

    /// Detect the corruption of one image.
    pub fn detect(&self, img: &Image) -> Result<(CorruptionLabel, Vec<f32>)> {
        let feature = extract_feature(img, &self.eps)?;
        predict(&self.detector, feature.as_slice())
    }

    /// Forward one image through the statistics of a fixed label.
    pub fn infer_with_label(&self, img: &Image, label: CorruptionLabel) -> Result<Inference> {
        let stats = self.table.get(label).ok_or(Error::InvalidArgument {
            context: "infer_with_label",
            detail: format!("no table entry for {}", label.name()),
        })?;
        let view = apply_bn(&self.base, stats.clone())?;
        let logits = view.forward(&crate::basemodel::batch_from_images(&[img]))?;
        let probs = crate::numerics::softmax(logits.data());
        let mut class = 0usize;
        for (i, &v) in logits.data().iter().enumerate().skip(1) {
            if v > logits.data()[class] {
                class = i;
            }
        }
        Ok(Inference { class, detected: label, class_probs: probs })
    }

    /// Detect, fetch statistics, forward.
    pub fn infer(&self, img: &Image) -> Result<Inference> {
        let (label, _) = self.detect(img)?;
        self.infer_with_label(img, label)
    }

    /// Batch inference under the configured detection mode.
    pub fn infer_batch(&self, images: &[&Image]) -> Result<Vec<Inference>> {
        self.infer_batch_with(images, self.mode)
    }

    pub fn infer_batch_with(
        &self,
        images: &[&Image],
        mode: DetectionMode,
    ) -> Result<Vec<Inference>> {
        if images.is_empty() {
            return Err(Error::EmptyInput("infer_batch"));
        }
        let mut detected = Vec::with_capacity(images.len());
        for img in images {
            detected.push(self.detect(img)?.0);
        }
        if mode == DetectionMode::BatchMajority {
            let mut counts = [0usize; CorruptionLabel::ALL.len()];
            for &d in &detected {
                counts[d.code() as usize] += 1;
            }
            let mut best = 0usize;
            for (i, &c) in counts.iter().enumerate().skip(1) {
                if c > counts[best] {
                    best = i;
                }
            }
            let modal = CorruptionLabel::from_code(best as u8)?;
            detected = vec![modal; images.len()];
        }
        // Group consecutive images by label so each group shares one
        // forward batch under its statistics.
        let mut out: Vec<Option<Inference>> = (0..images.len()).map(|_| None).collect();
        for label in CorruptionLabel::ALL {
            let indices: Vec<usize> =
                (0..images.len()).filter(|&i| detected[i] == label).collect();
            if indices.is_empty() {
                continue;
            }
            let stats = self.table.get(label).ok_or(Error::InvalidArgument {
                context: "infer_batch",
                detail: format!("no table entry for {}", label.name()),
            })?;
            let group: Vec<&Image> = indices.iter().map(|&i| images[i]).collect();
            for (chunk_start, chunk) in group.chunks(64).enumerate() {
                let batch = crate::basemodel::batch_from_images(chunk);
                let logits = self.base.forward_with(&batch, stats)?;
                let k = logits.shape()[1];
                for (row_idx, row) in logits.data().chunks(k).enumerate() {
                    let global = indices[chunk_start * 64 + row_idx];
                    let probs = crate::numerics::softmax(row);
                    let mut class = 0usize;
                    for (i, &v) in row.iter().enumerate().skip(1) {
                        if v > row[class] {
                            class = i;
                        }
                    }
                    out[global] = Some(Inference { class, detected: label, class_probs: probs });
                }
            }
        }
        Ok(out.into_iter().map(|o| o.expect("every image routed")).collect())
    }
}
