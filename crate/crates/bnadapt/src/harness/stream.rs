//! Streaming evaluation: batches of one corruption at a time, with the
//! active corruption resampled every K batches, comparing three policies.
//!
//! Every switch period sees the same per-corruption image streams and the
//! same number of batches per corruption, so policy curves across K differ
//! only through the adaptation behavior, not through the sample mix.

use crate::basemodel::{accumulate_bn, BnAccumulator};
use crate::corruptions::{CorruptedCorpus, CorruptedRecord, CorruptionLabel};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::pipeline::{AdaptivePipeline, DetectionMode};
use crate::rng::Rng;
use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamPolicy {
    /// Never adapt; always use the trained natural statistics.
    StaticNatural,
    /// At each batch start, replace the running statistics with ones
    /// estimated from the previous ten batches (fewer if the stream just
    /// started, natural if none).
    OnlineBnWindow,
    /// Detect per image and fetch statistics from the lookup table.
    AdaptiveLookup,
}

impl StreamPolicy {
    pub const ALL: [StreamPolicy; 3] = [
        StreamPolicy::StaticNatural,
        StreamPolicy::OnlineBnWindow,
        StreamPolicy::AdaptiveLookup,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StreamPolicy::StaticNatural => "static_natural",
            StreamPolicy::OnlineBnWindow => "online_bn_window",
            StreamPolicy::AdaptiveLookup => "adaptive_lookup",
        }
    }
}

#[derive(Debug, Clone)]
pub struct StreamConfig {
    pub batch_size: usize,
    /// Switch periods K to sweep.
    pub periods: Vec<usize>,
    /// Batches each corruption contributes per period value; must be a
    /// multiple of every K so corruption coverage is balanced.
    pub batches_per_corruption: usize,
    /// Online window length in batches.
    pub window: usize,
    pub seed: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            batch_size: 16,
            periods: vec![1, 2, 4, 8, 16, 32],
            batches_per_corruption: 32,
            window: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StreamReport {
    /// (policy, K, accuracy over the whole stream).
    pub rows: Vec<(StreamPolicy, usize, f64)>,
}

impl StreamReport {
    pub fn accuracy(&self, policy: StreamPolicy, k: usize) -> Option<f64> {
        self.rows.iter().find(|&&(p, kk, _)| p == policy && kk == k).map(|&(_, _, a)| a)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("policy\tk\taccuracy\n");
        for &(p, k, a) in &self.rows {
            out.push_str(&format!("{}\t{}\t{:.6}\n", p.name(), k, a));
        }
        out
    }
}

/// One corruption's record stream, shared by every K.
struct CorruptionStream<'a> {
    records: Vec<&'a CorruptedRecord>,
    cursor: usize,
}

impl<'a> CorruptionStream<'a> {
    fn next_batch(&mut self, n: usize) -> Vec<&'a CorruptedRecord> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.records[self.cursor % self.records.len()]);
            self.cursor += 1;
        }
        out
    }
}

pub fn stream_eval(
    cfg: &StreamConfig,
    pipeline: &AdaptivePipeline,
    pools: &CorruptedCorpus,
) -> Result<StreamReport> {
    if cfg.batch_size == 0 || cfg.window == 0 {
        return Err(Error::InvalidArgument {
            context: "stream_eval",
            detail: "batch size and window must be positive".into(),
        });
    }
    let labels = CorruptionLabel::CORRUPTIONS;
    let mut missing = Vec::new();
    for &label in &labels {
        if pools.by_corruption(label).is_empty() {
            missing.push(label.name().to_string());
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingCells { cells: missing });
    }
    for &k in &cfg.periods {
        if k == 0 || cfg.batches_per_corruption % k != 0 {
            return Err(Error::InvalidArgument {
                context: "stream_eval",
                detail: format!(
                    "period {k} must divide batches_per_corruption {}",
                    cfg.batches_per_corruption
                ),
            });
        }
    }

    let natural = pipeline.base.bn_stats();
    let mut rows = Vec::new();
    for &k in &cfg.periods {
        // Balanced corruption segment order: shuffled rounds of all labels.
        let segments = labels.len() * cfg.batches_per_corruption / k;
        let rounds = segments / labels.len();
        let mut order: Vec<CorruptionLabel> = Vec::with_capacity(segments);
        for round in 0..rounds {
            let mut chunk = labels.to_vec();
            Rng::derive(cfg.seed ^ 0xface, (k as u64) << 16 | round as u64).shuffle(&mut chunk);
            order.extend(chunk);
        }

        // Per-corruption record streams, identical for every K: a seeded
        // shuffle of the pool consumed in order of occurrence.
        let mut streams: Vec<CorruptionStream> = labels
            .iter()
            .map(|&label| {
                let mut records = pools.by_corruption(label);
                Rng::derive(cfg.seed ^ 0xb00c, label.code() as u64).shuffle(&mut records);
                CorruptionStream { records, cursor: 0 }
            })
            .collect();

        let mut correct = [0usize; 3];
        let mut total = 0usize;
        let mut window: VecDeque<BnAccumulator> = VecDeque::new();

        for (seg, &label) in order.iter().enumerate() {
            let stream = &mut streams[labels.iter().position(|&l| l == label).unwrap()];
            for _ in 0..k {
                let batch = stream.next_batch(cfg.batch_size);
                let images: Vec<&Image> = batch.iter().map(|r| &r.image).collect();
                let truth: Vec<usize> = batch.iter().map(|r| r.class_label as usize).collect();
                total += cfg.batch_size;

                // static_natural
                let preds = pipeline.base.predict_images(&images, &natural)?;
                correct[0] += preds.iter().zip(&truth).filter(|(&p, &t)| p == t).count();

                // online_bn_window: stats from the previous batches only.
                let win_stats = if window.is_empty() {
                    natural.clone()
                } else {
                    let mut acc = window[0].clone();
                    for other in window.iter().skip(1) {
                        acc.merge(other);
                    }
                    acc.finalize()?
                };
                let preds = pipeline.base.predict_images(&images, &win_stats)?;
                correct[1] += preds.iter().zip(&truth).filter(|(&p, &t)| p == t).count();
                let mut batch_acc = BnAccumulator::new();
                accumulate_bn(&pipeline.base, &images, &mut batch_acc)?;
                window.push_back(batch_acc);
                if window.len() > cfg.window {
                    window.pop_front();
                }

                // adaptive_lookup
                let results = pipeline.infer_batch_with(&images, DetectionMode::PerImage)?;
                correct[2] +=
                    results.iter().zip(&truth).filter(|(r, &t)| r.class == t).count();
            }
            let _ = seg;
        }
        for (i, policy) in StreamPolicy::ALL.iter().enumerate() {
            rows.push((*policy, k, correct[i] as f64 / total as f64));
        }
    }
    Ok(StreamReport { rows })
}
