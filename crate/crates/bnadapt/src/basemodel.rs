//! The pretrained task classifier: a small four-BN-layer CNN, plus BN
//! statistics estimation, merging and swapping.
//!
//! Running statistics live in the model; [`apply_bn`] produces a cheap view
//! that shares every weight and overrides only the per-layer mean/variance.
//! Statistics estimation runs the shared eval-mode forward and records the
//! activations entering each BN layer, so any batching of the same sample
//! order accumulates identically.

use crate::corruptions::CorruptionLabel;
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::numerics::{
    batchnorm, batchnorm_train_backward, conv2d, conv2d_backward, dense, dense_backward,
    global_avgpool, global_avgpool_backward, maxpool2, maxpool2_backward, relu, relu_backward,
    softmax_xent_batch, BnLayerState, BnMode, SgdMomentum, Tensor,
};
use crate::rng::Rng;
use std::collections::BTreeMap;
use std::sync::Arc;

pub const BN_CHANNELS: [usize; 4] = [16, 16, 32, 32];
pub const INPUT_SIZE: usize = 32;
pub const N_CLASSES: usize = 10;

// ---- statistics containers -------------------------------------------------

/// Running mean/variance for every BN layer, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub layers: Vec<(Vec<f32>, Vec<f32>)>,
}

impl BnStats {
    pub fn validate_for(&self, model: &BaseCnn) -> Result<()> {
        if self.layers.len() != model.bn.len() {
            return Err(Error::ShapeMismatch {
                context: "BnStats layer count",
                expected: vec![model.bn.len()],
                got: vec![self.layers.len()],
            });
        }
        for (i, (mean, var)) in self.layers.iter().enumerate() {
            if mean.len() != model.bn[i].channels() || var.len() != model.bn[i].channels() {
                return Err(Error::ShapeMismatch {
                    context: "BnStats channels",
                    expected: vec![model.bn[i].channels()],
                    got: vec![mean.len(), var.len()],
                });
            }
            if var.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(Error::InvalidArgument {
                    context: "BnStats",
                    detail: format!("layer {i} variance must be nonnegative"),
                });
            }
        }
        Ok(())
    }
}

/// Weighted average of two statistics sets: `(na*a + nb*b) / (na + nb)`
/// per channel, for means and variances alike.
pub fn merge_bn(natural: &BnStats, corrupted: &BnStats, n_nat: f64, n_cor: f64) -> Result<BnStats> {
    if natural.layers.len() != corrupted.layers.len() {
        return Err(Error::ShapeMismatch {
            context: "merge_bn layer count",
            expected: vec![natural.layers.len()],
            got: vec![corrupted.layers.len()],
        });
    }
    let total = n_nat + n_cor;
    if total <= 0.0 {
        return Err(Error::InvalidArgument {
            context: "merge_bn",
            detail: "weights must sum to a positive value".into(),
        });
    }
    let mut layers = Vec::with_capacity(natural.layers.len());
    for ((ma, va), (mb, vb)) in natural.layers.iter().zip(&corrupted.layers) {
        if ma.len() != mb.len() {
            return Err(Error::ShapeMismatch {
                context: "merge_bn channels",
                expected: vec![ma.len()],
                got: vec![mb.len()],
            });
        }
        let mean = ma
            .iter()
            .zip(mb)
            .map(|(&a, &b)| ((n_nat * a as f64 + n_cor * b as f64) / total) as f32)
            .collect();
        let var = va
            .iter()
            .zip(vb)
            .map(|(&a, &b)| ((n_nat * a as f64 + n_cor * b as f64) / total) as f32)
            .collect();
        layers.push((mean, var));
    }
    Ok(BnStats { layers })
}

/// Streaming per-channel count/mean/M2 accumulators, one per BN layer.
#[derive(Debug, Clone)]
pub struct BnAccumulator {
    counts: Vec<u64>,
    means: Vec<Vec<f64>>,
    m2s: Vec<Vec<f64>>,
}

impl BnAccumulator {
    pub fn new() -> Self {
        BnAccumulator {
            counts: vec![0; BN_CHANNELS.len()],
            means: BN_CHANNELS.iter().map(|&c| vec![0.0; c]).collect(),
            m2s: BN_CHANNELS.iter().map(|&c| vec![0.0; c]).collect(),
        }
    }

    /// Welford update with every value of one pre-BN activation tensor.
    fn add(&mut self, layer: usize, pre_bn: &Tensor) {
        let [n, c, h, w] = [
            pre_bn.shape()[0],
            pre_bn.shape()[1],
            pre_bn.shape()[2],
            pre_bn.shape()[3],
        ];
        for ni in 0..n {
            self.counts[layer] += (h * w) as u64;
            let count = self.counts[layer] as f64;
            for ci in 0..c {
                let plane = &pre_bn.data()[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                let mean = &mut self.means[layer][ci];
                let m2 = &mut self.m2s[layer][ci];
                let mut k = count - (h * w) as f64;
                for &v in plane {
                    k += 1.0;
                    let delta = v as f64 - *mean;
                    *mean += delta / k;
                    *m2 += delta * (v as f64 - *mean);
                }
            }
        }
    }

    /// Fold another accumulator into this one (parallel combine).
    pub fn merge(&mut self, other: &BnAccumulator) {
        for layer in 0..self.counts.len() {
            let (na, nb) = (self.counts[layer] as f64, other.counts[layer] as f64);
            if nb == 0.0 {
                continue;
            }
            if na == 0.0 {
                self.counts[layer] = other.counts[layer];
                self.means[layer] = other.means[layer].clone();
                self.m2s[layer] = other.m2s[layer].clone();
                continue;
            }
            let total = na + nb;
            for ci in 0..self.means[layer].len() {
                let delta = other.means[layer][ci] - self.means[layer][ci];
                self.means[layer][ci] += delta * nb / total;
                self.m2s[layer][ci] +=
                    other.m2s[layer][ci] + delta * delta * na * nb / total;
            }
            self.counts[layer] = self.counts[layer] + other.counts[layer];
        }
    }

    pub fn sample_count(&self) -> u64 {
        self.counts[0] / (INPUT_SIZE * INPUT_SIZE) as u64
    }

    /// Population mean/variance per layer.
    pub fn finalize(&self) -> Result<BnStats> {
        if self.counts.iter().any(|&c| c == 0) {
            return Err(Error::EmptyInput("BnAccumulator::finalize"));
        }
        let layers = (0..self.counts.len())
            .map(|layer| {
                let count = self.counts[layer] as f64;
                let mean = self.means[layer].iter().map(|&m| m as f32).collect();
                let var = self.m2s[layer].iter().map(|&m2| (m2 / count).max(0.0) as f32).collect();
                (mean, var)
            })
            .collect();
        Ok(BnStats { layers })
    }
}

impl Default for BnAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

// ---- the model ------------------------------------------------------------------

/// conv3x3(3->16) BN ReLU, conv3x3(16->16) BN ReLU, maxpool2,
/// conv3x3(16->32) BN ReLU, conv3x3(32->32) BN ReLU, maxpool2,
/// global average pool, dense 32->10. Convolutions carry no bias; BN
/// absorbs the shift.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseCnn {
    pub convs: [Tensor; 4],
    pub bn: [BnLayerState; 4],
    pub fc_w: Tensor,
    pub fc_b: Vec<f32>,
}

fn kaiming_conv(co: usize, ci: usize, k: usize, rng: &mut Rng) -> Tensor {
    let bound = (6.0 / (ci * k * k) as f64).sqrt();
    let data = (0..co * ci * k * k).map(|_| rng.range(-bound, bound) as f32).collect();
    Tensor::from_vec(vec![co, ci, k, k], data).expect("conv init shape")
}

impl BaseCnn {
    pub fn init(seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let convs = [
            kaiming_conv(16, 3, 3, &mut rng),
            kaiming_conv(16, 16, 3, &mut rng),
            kaiming_conv(32, 16, 3, &mut rng),
            kaiming_conv(32, 32, 3, &mut rng),
        ];
        let bn = [
            BnLayerState::identity(16),
            BnLayerState::identity(16),
            BnLayerState::identity(32),
            BnLayerState::identity(32),
        ];
        let bound = (6.0 / (32 + N_CLASSES) as f64).sqrt();
        let fc_w = Tensor::from_vec(
            vec![N_CLASSES, 32],
            (0..N_CLASSES * 32).map(|_| rng.range(-bound, bound) as f32).collect(),
        )
        .expect("fc init shape");
        BaseCnn { convs, bn, fc_w, fc_b: vec![0.0; N_CLASSES] }
    }

    /// The model's own running statistics.
    pub fn bn_stats(&self) -> BnStats {
        BnStats {
            layers: self.bn.iter().map(|s| (s.mean.clone(), s.var.clone())).collect(),
        }
    }

    /// Replace the running statistics in place (weights untouched).
    pub fn with_stats(mut self, stats: &BnStats) -> Result<Self> {
        stats.validate_for(&self)?;
        for (state, (mean, var)) in self.bn.iter_mut().zip(&stats.layers) {
            state.mean = mean.clone();
            state.var = var.clone();
        }
        Ok(self)
    }

    /// Shared eval-mode forward. `stats` supplies the running mean/variance
    /// per BN layer; `tap` observes each pre-BN activation tensor.
    fn forward_tapped(
        &self,
        x: &Tensor,
        stats: &BnStats,
        tap: &mut dyn FnMut(usize, &Tensor),
    ) -> Result<Tensor> {
        let mut cur = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            cur = conv2d(&cur, conv, 1, 1)?;
            tap(i, &cur);
            let state = BnLayerState {
                mean: stats.layers[i].0.clone(),
                var: stats.layers[i].1.clone(),
                gamma: self.bn[i].gamma.clone(),
                beta: self.bn[i].beta.clone(),
                eps: self.bn[i].eps,
            };
            cur = relu(&batchnorm(&cur, &state, BnMode::Eval)?.output);
            if i == 1 || i == 3 {
                cur = maxpool2(&cur, 2, 2)?.0;
            }
        }
        let pooled = global_avgpool(&cur)?;
        dense(&pooled, &self.fc_w, &self.fc_b)
    }

    /// Eval-mode logits under the model's own running statistics.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_tapped(x, &self.bn_stats(), &mut |_, _| {})
    }

    /// Eval-mode logits under the supplied statistics.
    pub fn forward_with(&self, x: &Tensor, stats: &BnStats) -> Result<Tensor> {
        stats.validate_for(self)?;
        self.forward_tapped(x, stats, &mut |_, _| {})
    }

    /// Predicted classes for a batch of images.
    pub fn predict_images(&self, images: &[&Image], stats: &BnStats) -> Result<Vec<usize>> {
        stats.validate_for(self)?;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let batch = batch_from_images(chunk);
            let logits = self.forward_tapped(&batch, stats, &mut |_, _| {})?;
            out.extend(logits.data().chunks(N_CLASSES).map(|row| {
                let mut best = 0usize;
                for (i, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            }));
        }
        Ok(out)
    }
}

/// Stack planar images into an NCHW batch tensor.
pub fn batch_from_images(images: &[&Image]) -> Tensor {
    let (h, w, c) = (images[0].height(), images[0].width(), images[0].channels());
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        data.extend_from_slice(img.data());
    }
    Tensor::from_vec(vec![images.len(), c, h, w], data).expect("batch shape")
}

// ---- model view -----------------------------------------------------------------

/// Weight-sharing view with its own running statistics.
#[derive(Debug, Clone)]
pub struct AdaptedModel {
    pub base: Arc<BaseCnn>,
    pub stats: BnStats,
}

impl AdaptedModel {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.base.forward_with(x, &self.stats)
    }
}

/// Build a view of `base` with `stats` swapped in; the base is untouched
/// and gamma/beta stay with the model.
pub fn apply_bn(base: &Arc<BaseCnn>, stats: BnStats) -> Result<AdaptedModel> {
    stats.validate_for(base)?;
    Ok(AdaptedModel { base: Arc::clone(base), stats })
}

// ---- statistics estimation --------------------------------------------------------

/// Feed images through the eval-mode forward and accumulate pre-BN
/// activation statistics into `acc`. The forward normalizes with the
/// model's current running stats, so accumulation does not depend on how
/// the images are batched.
pub fn accumulate_bn(model: &BaseCnn, images: &[&Image], acc: &mut BnAccumulator) -> Result<()> {
    let stats = model.bn_stats();
    for chunk in images.chunks(64) {
        let batch = batch_from_images(chunk);
        model.forward_tapped(&batch, &stats, &mut |layer, pre_bn| {
            acc.add(layer, pre_bn);
        })?;
    }
    Ok(())
}

/// Population mean/variance of every BN layer's input over `images`.
pub fn estimate_bn(model: &BaseCnn, images: &[&Image]) -> Result<BnStats> {
    if images.len() < 2 {
        return Err(Error::BatchTooSmall { got: images.len(), min: 2 });
    }
    let mut acc = BnAccumulator::new();
    accumulate_bn(model, images, &mut acc)?;
    acc.finalize()
}

// ---- lookup table -----------------------------------------------------------------

/// Corruption label -> BN statistics. Always contains `natural`.
#[derive(Debug, Clone, PartialEq)]
pub struct BnTable {
    entries: BTreeMap<u8, BnStats>,
}

impl BnTable {
    pub fn new(entries: BTreeMap<u8, BnStats>) -> Result<Self> {
        if !entries.contains_key(&CorruptionLabel::Natural.code()) {
            return Err(Error::InvalidArgument {
                context: "BnTable",
                detail: "table must contain the natural entry".into(),
            });
        }
        Ok(BnTable { entries })
    }

    pub fn get(&self, label: CorruptionLabel) -> Option<&BnStats> {
        self.entries.get(&label.code())
    }

    pub fn natural(&self) -> &BnStats {
        self.entries
            .get(&CorruptionLabel::Natural.code())
            .expect("natural entry is enforced at construction")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = CorruptionLabel> + '_ {
        self.entries.keys().map(|&c| CorruptionLabel::from_code(c).expect("valid code"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (CorruptionLabel, &BnStats)> {
        self.entries
            .iter()
            .map(|(&c, s)| (CorruptionLabel::from_code(c).expect("valid code"), s))
    }
}

/// Build the lookup table: each corruption entry is the equal-weight merge
/// of the natural stats with stats estimated on that corruption's corpus;
/// the natural entry is the model's running stats unchanged.
pub fn build_bn_table(
    model: &BaseCnn,
    corpora: &[(CorruptionLabel, Vec<&Image>)],
) -> Result<BnTable> {
    let natural = model.bn_stats();
    let mut entries = BTreeMap::new();
    entries.insert(CorruptionLabel::Natural.code(), natural.clone());
    for (label, images) in corpora {
        if *label == CorruptionLabel::Natural {
            continue;
        }
        if images.len() < 2 {
            return Err(Error::MissingCells {
                cells: vec![format!("{} ({} images)", label.name(), images.len())],
            });
        }
        let estimated = estimate_bn(model, images)?;
        entries.insert(label.code(), merge_bn(&natural, &estimated, 1.0, 1.0)?);
    }
    BnTable::new(entries)
}

// ---- training -------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BaseTrainConfig {
    pub epochs: usize,
    pub drop_epochs: Vec<usize>,
    pub base_lr: f32,
    pub momentum: f32,
    pub batch_size: usize,
    /// EMA weight of the new batch statistics in the running stats.
    pub bn_momentum: f32,
    pub seed: u64,
}

impl Default for BaseTrainConfig {
    fn default() -> Self {
        BaseTrainConfig {
            epochs: 6,
            drop_epochs: vec![5],
            base_lr: 0.05,
            momentum: 0.9,
            batch_size: 64,
            bn_momentum: 0.1,
            seed: 0,
        }
    }
}

impl BaseTrainConfig {
    fn lr_at(&self, epoch: usize) -> f32 {
        let drops = self.drop_epochs.iter().filter(|&&d| epoch >= d).count();
        self.base_lr * 0.1f32.powi(drops as i32)
    }
}

/// Train from scratch on `dataset`; returns the model with frozen running
/// statistics, plus per-epoch (mean loss, train accuracy).
pub fn train_base(dataset: &Dataset, cfg: &BaseTrainConfig) -> Result<(BaseCnn, Vec<(f64, f64)>)> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("train_base"));
    }
    let mut model = BaseCnn::init(cfg.seed);
    let block_sizes: Vec<usize> = model
        .convs
        .iter()
        .map(|c| c.len())
        .chain(model.bn.iter().flat_map(|b| [b.gamma.len(), b.beta.len()]))
        .chain([model.fc_w.len(), model.fc_b.len()])
        .collect();
    let mut opt = SgdMomentum::new(&block_sizes, cfg.momentum);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        Rng::derive(cfg.seed ^ 0x5eed, epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue; // BN train mode needs at least two samples
            }
            let images: Vec<&Image> = chunk.iter().map(|&i| &dataset.images[i]).collect();
            let labels: Vec<usize> =
                chunk.iter().map(|&i| dataset.class_labels[i] as usize).collect();
            let x = batch_from_images(&images);

            // Forward with caches.
            let mut conv_inputs = Vec::with_capacity(4); // what each conv consumed
            let mut pre = Vec::with_capacity(4); // conv outputs (pre-BN)
            let mut post_bn = Vec::with_capacity(4); // BN outputs (pre-ReLU)
            let mut pool_idx = Vec::with_capacity(2);
            let mut pool_in_shape = Vec::with_capacity(2);
            let mut batch_stats = Vec::with_capacity(4);
            let mut cur = x;
            for i in 0..4 {
                let z = conv2d(&cur, &model.convs[i], 1, 1)?;
                conv_inputs.push(cur);
                let fwd = batchnorm(&z, &model.bn[i], BnMode::Train)?;
                let (bm, bv) = (fwd.batch_mean.unwrap(), fwd.batch_var.unwrap());
                // EMA running-statistics update.
                let m = cfg.bn_momentum;
                for (run, &new) in model.bn[i].mean.iter_mut().zip(&bm) {
                    *run = (1.0 - m) * *run + m * new;
                }
                for (run, &new) in model.bn[i].var.iter_mut().zip(&bv) {
                    *run = (1.0 - m) * *run + m * new;
                }
                cur = relu(&fwd.output);
                pre.push(z);
                post_bn.push(fwd.output);
                batch_stats.push((bm, bv));
                if i == 1 || i == 3 {
                    pool_in_shape.push(cur.shape().to_vec());
                    let (pooled, idx) = maxpool2(&cur, 2, 2)?;
                    pool_idx.push(idx);
                    cur = pooled;
                }
            }
            let final_conv = cur; // [B, 32, 8, 8]
            let pooled = global_avgpool(&final_conv)?;
            let logits = dense(&pooled, &model.fc_w, &model.fc_b)?;

            let (loss, grad_logits) = softmax_xent_batch(&logits, &labels)?;
            loss_sum += loss;
            batches += 1;
            for (row, &label) in logits.data().chunks(N_CLASSES).zip(&labels) {
                let mut best = 0usize;
                for (i, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = i;
                    }
                }
                if best == label {
                    correct += 1;
                }
            }

            // Backward.
            let (gpooled, gfc_w, gfc_b) = dense_backward(&pooled, &model.fc_w, &grad_logits)?;
            let mut grad = global_avgpool_backward(&gpooled, final_conv.shape());
            let mut conv_grads: Vec<Tensor> = Vec::with_capacity(4);
            let mut bn_grads: Vec<(Vec<f32>, Vec<f32>)> = Vec::with_capacity(4);
            for i in (0..4).rev() {
                if i == 1 || i == 3 {
                    let pool = if i == 3 { 1 } else { 0 };
                    grad = maxpool2_backward(&grad, &pool_idx[pool], &pool_in_shape[pool]);
                }
                let g_bn_out = relu_backward(&post_bn[i], &grad);
                let (g_pre, g_gamma, g_beta) = batchnorm_train_backward(
                    &pre[i],
                    &model.bn[i],
                    &batch_stats[i].0,
                    &batch_stats[i].1,
                    &g_bn_out,
                )?;
                let (g_input, g_conv) =
                    conv2d_backward(&conv_inputs[i], &model.convs[i], &g_pre, 1, 1)?;
                conv_grads.push(g_conv);
                bn_grads.push((g_gamma, g_beta));
                grad = g_input;
            }
            conv_grads.reverse();
            bn_grads.reverse();

            for (i, g) in conv_grads.iter().enumerate() {
                opt.step(i, model.convs[i].data_mut(), g.data(), lr)?;
            }
            for (i, (g_gamma, g_beta)) in bn_grads.iter().enumerate() {
                opt.step(4 + 2 * i, &mut model.bn[i].gamma, g_gamma, lr)?;
                opt.step(4 + 2 * i + 1, &mut model.bn[i].beta, g_beta, lr)?;
            }
            opt.step(12, model.fc_w.data_mut(), gfc_w.data(), lr)?;
            opt.step(13, &mut model.fc_b, &gfc_b, lr)?;
        }
        history.push((loss_sum / batches as f64, correct as f64 / dataset.len() as f64));
    }
    Ok((model, history))
}
