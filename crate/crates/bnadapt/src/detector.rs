//! Corruption-type detector: a three-layer fully connected net over
//! normalized half-spectrum features, hidden widths fixed at 1024 and 512.

use crate::corruptions::{CorruptedCorpus, CorruptionLabel};
use crate::error::{Error, Result};
use crate::numerics::{
    dense, dense_backward, relu, relu_backward, softmax, softmax_xent_batch, SgdMomentum, Tensor,
};
use crate::rng::Rng;
use crate::spectrum::{extract_feature, NaturalSpectrum};

pub const HIDDEN_1: usize = 1024;
pub const HIDDEN_2: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// [out, in] row-major.
    pub w: Tensor,
    pub b: Vec<f32>,
}

impl DenseLayer {
    fn glorot(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.range(-bound, bound) as f32)
            .collect();
        DenseLayer {
            w: Tensor::from_vec(vec![out_dim, in_dim], data).expect("init shape"),
            b: vec![0.0; out_dim],
        }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub l1: DenseLayer,
    pub l2: DenseLayer,
    pub l3: DenseLayer,
}

impl DetectorModel {
    pub fn in_dim(&self) -> usize {
        self.l1.w.shape()[1]
    }

    pub fn n_classes(&self) -> usize {
        self.l3.w.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.l1.param_count() + self.l2.param_count() + self.l3.param_count()
    }

    /// Logits for a [B, in_dim] batch.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h1 = relu(&dense(x, &self.l1.w, &self.l1.b)?);
        let h2 = relu(&dense(&h1, &self.l2.w, &self.l2.b)?);
        dense(&h2, &self.l3.w, &self.l3.b)
    }
}

/// Uniform fan-based init, zero biases, deterministic in `seed`.
pub fn init_detector(in_dim: usize, n_classes: usize, seed: u64) -> DetectorModel {
    let mut rng = Rng::new(seed);
    DetectorModel {
        l1: DenseLayer::glorot(in_dim, HIDDEN_1, &mut rng),
        l2: DenseLayer::glorot(HIDDEN_1, HIDDEN_2, &mut rng),
        l3: DenseLayer::glorot(HIDDEN_2, n_classes, &mut rng),
    }
}

// ---- training schedule ---------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainSchedule {
    pub epochs: usize,
    /// Learning rate is divided by 10 from each of these epochs on (1-based).
    pub drop_epochs: Vec<usize>,
    pub base_lr: f32,
    pub momentum: f32,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            epochs: 50,
            drop_epochs: vec![20, 35],
            base_lr: 0.01,
            momentum: 0.9,
            batch_size: 128,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn lr_at(&self, epoch: usize) -> f32 {
        let drops = self.drop_epochs.iter().filter(|&&d| epoch >= d).count();
        self.base_lr * 0.1f32.powi(drops as i32)
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f32,
    pub mean_loss: f64,
    pub train_acc: f64,
}

// ---- corpora ----------------------------------------------------------------

/// Flat feature matrix with corruption-code targets.
#[derive(Debug, Clone)]
pub struct DetectorCorpus {
    /// [n, dim]
    pub features: Tensor,
    pub labels: Vec<u8>,
}

impl DetectorCorpus {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    /// Fourier features for every record.
    pub fn featurize(corpus: &CorruptedCorpus, eps: &NaturalSpectrum) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyInput("DetectorCorpus::featurize"));
        }
        let dim = eps.feature_len();
        let mut data = Vec::with_capacity(corpus.len() * dim);
        let mut labels = Vec::with_capacity(corpus.len());
        for r in &corpus.records {
            data.extend_from_slice(extract_feature(&r.image, eps)?.as_slice());
            labels.push(r.corruption.code());
        }
        Ok(DetectorCorpus {
            features: Tensor::from_vec(vec![labels.len(), dim], data)?,
            labels,
        })
    }

    /// Flattened raw pixels; the control representation.
    pub fn from_raw_pixels(corpus: &CorruptedCorpus) -> Result<Self> {
        let first = corpus.records.first().ok_or(Error::EmptyInput("from_raw_pixels"))?;
        let dim = first.image.data().len();
        let mut data = Vec::with_capacity(corpus.len() * dim);
        let mut labels = Vec::with_capacity(corpus.len());
        for r in &corpus.records {
            data.extend_from_slice(r.image.data());
            labels.push(r.corruption.code());
        }
        Ok(DetectorCorpus {
            features: Tensor::from_vec(vec![labels.len(), dim], data)?,
            labels,
        })
    }

    fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let dim = self.dim();
        let mut data = Vec::with_capacity(indices.len() * dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.features.data()[i * dim..(i + 1) * dim]);
            labels.push(self.labels[i] as usize);
        }
        (
            Tensor::from_vec(vec![indices.len(), dim], data).expect("gather shape"),
            labels,
        )
    }
}

// ---- training -----------------------------------------------------------------

/// Shuffled minibatch SGD over the schedule; returns per-epoch stats.
pub fn train_detector(
    model: &mut DetectorModel,
    corpus: &DetectorCorpus,
    schedule: &TrainSchedule,
) -> Result<Vec<EpochStats>> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("train_detector"));
    }
    if corpus.dim() != model.in_dim() {
        return Err(Error::ShapeMismatch {
            context: "train_detector features",
            expected: vec![model.in_dim()],
            got: vec![corpus.dim()],
        });
    }
    let k = model.n_classes();
    if let Some(&bad) = corpus.labels.iter().find(|&&l| l as usize >= k) {
        return Err(Error::InvalidLabel {
            context: "train_detector labels",
            got: bad as usize,
            max: k - 1,
        });
    }

    let sizes = [
        model.l1.w.len(),
        model.l1.b.len(),
        model.l2.w.len(),
        model.l2.b.len(),
        model.l3.w.len(),
        model.l3.b.len(),
    ];
    let mut opt = SgdMomentum::new(&sizes, schedule.momentum);
    let mut history = Vec::with_capacity(schedule.epochs);
    let mut order: Vec<usize> = (0..corpus.len()).collect();

    for epoch in 1..=schedule.epochs {
        let lr = schedule.lr_at(epoch);
        Rng::derive(schedule.seed, epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        let mut batches = 0usize;
        for chunk in order.chunks(schedule.batch_size) {
            let (x, labels) = corpus.gather(chunk);

            // Forward with caches.
            let z1 = dense(&x, &model.l1.w, &model.l1.b)?;
            let h1 = relu(&z1);
            let z2 = dense(&h1, &model.l2.w, &model.l2.b)?;
            let h2 = relu(&z2);
            let logits = dense(&h2, &model.l3.w, &model.l3.b)?;

            let (loss, grad_logits) = softmax_xent_batch(&logits, &labels)?;
            loss_sum += loss;
            batches += 1;
            for (row, &label) in logits.data().chunks(k).zip(&labels) {
                if argmax(row) == label {
                    correct += 1;
                }
            }

            // Backward.
            let (gh2, gw3, gb3) = dense_backward(&h2, &model.l3.w, &grad_logits)?;
            let gz2 = relu_backward(&z2, &gh2);
            let (gh1, gw2, gb2) = dense_backward(&h1, &model.l2.w, &gz2)?;
            let gz1 = relu_backward(&z1, &gh1);
            let (_, gw1, gb1) = dense_backward(&x, &model.l1.w, &gz1)?;

            opt.step(0, model.l1.w.data_mut(), gw1.data(), lr)?;
            opt.step(1, &mut model.l1.b, &gb1, lr)?;
            opt.step(2, model.l2.w.data_mut(), gw2.data(), lr)?;
            opt.step(3, &mut model.l2.b, &gb2, lr)?;
            opt.step(4, model.l3.w.data_mut(), gw3.data(), lr)?;
            opt.step(5, &mut model.l3.b, &gb3, lr)?;
        }
        history.push(EpochStats {
            epoch,
            lr,
            mean_loss: loss_sum / batches as f64,
            train_acc: correct as f64 / corpus.len() as f64,
        });
    }
    Ok(history)
}

// ---- prediction / evaluation ----------------------------------------------------

/// Argmax with ties broken toward the smallest index.
fn argmax(row: &[f32]) -> usize {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Predicted corruption and the softmax probability vector.
pub fn predict(model: &DetectorModel, feature: &[f32]) -> Result<(CorruptionLabel, Vec<f32>)> {
    if feature.len() != model.in_dim() {
        return Err(Error::ShapeMismatch {
            context: "predict feature",
            expected: vec![model.in_dim()],
            got: vec![feature.len()],
        });
    }
    let x = Tensor::from_vec(vec![1, feature.len()], feature.to_vec())?;
    let logits = model.forward(&x)?;
    let probs = softmax(logits.data());
    let label = CorruptionLabel::from_code(argmax(logits.data()) as u8)?;
    Ok((label, probs))
}

/// Predicted class codes for a whole [n, dim] feature matrix.
pub fn predict_batch(model: &DetectorModel, features: &Tensor) -> Result<Vec<usize>> {
    if features.shape()[1] != model.in_dim() {
        return Err(Error::ShapeMismatch {
            context: "predict_batch features",
            expected: vec![model.in_dim()],
            got: vec![features.shape()[1]],
        });
    }
    let k = model.n_classes();
    let mut out = Vec::with_capacity(features.shape()[0]);
    // Bounded batches keep the activation buffers small.
    let dim = features.shape()[1];
    for chunk in features.data().chunks(256 * dim) {
        let rows = chunk.len() / dim;
        let x = Tensor::from_vec(vec![rows, dim], chunk.to_vec())?;
        let logits = model.forward(&x)?;
        out.extend(logits.data().chunks(k).map(argmax));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DetectorEval {
    pub accuracy: f64,
    /// [true][predicted] counts.
    pub confusion: Vec<Vec<usize>>,
}

/// Accuracy and confusion matrix over a labeled corpus.
pub fn evaluate(model: &DetectorModel, corpus: &DetectorCorpus) -> Result<DetectorEval> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("detector evaluate"));
    }
    let k = model.n_classes();
    let preds = predict_batch(model, &corpus.features)?;
    let mut confusion = vec![vec![0usize; k]; k];
    let mut correct = 0usize;
    for (&label, &pred) in corpus.labels.iter().zip(&preds) {
        confusion[label as usize][pred] += 1;
        if label as usize == pred {
            correct += 1;
        }
    }
    Ok(DetectorEval {
        accuracy: correct as f64 / corpus.len() as f64,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_for_desk_scale_dims() {
        let m = init_detector(544, 12, 1);
        let expected = 544 * 1024 + 1024 + 1024 * 512 + 512 + 512 * 12 + 12;
        assert_eq!(m.param_count(), expected);
        assert_eq!(expected, 1_089_036);
    }

    #[test]
    fn init_is_seed_deterministic_with_zero_biases() {
        let a = init_detector(32, 4, 9);
        let b = init_detector(32, 4, 9);
        assert_eq!(a, b);
        assert!(a.l1.b.iter().all(|&v| v == 0.0));
        assert!(a.l2.b.iter().all(|&v| v == 0.0));
        assert!(a.l3.b.iter().all(|&v| v == 0.0));
        let c = init_detector(32, 4, 10);
        assert!(a.l1.w.data() != c.l1.w.data());
    }

    #[test]
    fn lr_schedule_divides_by_ten_at_each_drop() {
        let s = TrainSchedule::default();
        assert_eq!(s.lr_at(1), 0.01);
        assert_eq!(s.lr_at(19), 0.01);
        assert!((s.lr_at(20) - 0.001).abs() < 1e-9);
        assert!((s.lr_at(34) - 0.001).abs() < 1e-9);
        assert!((s.lr_at(35) - 0.0001).abs() < 1e-9);
        assert!((s.lr_at(50) - s.base_lr / 100.0).abs() < 1e-9);
    }

    fn toy_corpus() -> DetectorCorpus {
        // Two linearly separable clusters in 4-D.
        let mut rng = Rng::new(3);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..80 {
            let class = i % 2;
            let center = if class == 0 { 1.0f32 } else { -1.0 };
            for _ in 0..4 {
                data.push(center + rng.range(-0.3, 0.3) as f32);
            }
            labels.push(class as u8);
        }
        DetectorCorpus {
            features: Tensor::from_vec(vec![80, 4], data).unwrap(),
            labels,
        }
    }

    #[test]
    fn separable_toy_reaches_full_train_accuracy() {
        let corpus = toy_corpus();
        let mut model = init_detector(4, 2, 5);
        let schedule = TrainSchedule {
            epochs: 15,
            drop_epochs: vec![10],
            batch_size: 16,
            ..TrainSchedule::default()
        };
        let history = train_detector(&mut model, &corpus, &schedule).unwrap();
        let last = history.last().unwrap();
        assert_eq!(last.train_acc, 1.0, "history: {history:?}");
        assert!(last.mean_loss < history[0].mean_loss);
    }

    #[test]
    fn training_rejects_label_out_of_range() {
        let mut corpus = toy_corpus();
        corpus.labels[0] = 7;
        let mut model = init_detector(4, 2, 5);
        assert!(matches!(
            train_detector(&mut model, &corpus, &TrainSchedule::default()),
            Err(Error::InvalidLabel { .. })
        ));
    }

    #[test]
    fn predict_checks_feature_length_and_normalizes_probs() {
        let model = init_detector(8, 3, 2);
        assert!(predict(&model, &[0.0; 4]).is_err());
        let (_, probs) = predict(&model, &[0.1; 8]).unwrap();
        let total: f32 = probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-5);
        assert!(probs.iter().all(|&p| p >= 0.0));
    }

    /// A hand-wired model that copies the first `k` inputs to the logits.
    fn passthrough_model(dim: usize, k: usize) -> DetectorModel {
        let mut m = init_detector(dim, k, 0);
        for layer in [&mut m.l1, &mut m.l2, &mut m.l3] {
            for v in layer.w.data_mut() {
                *v = 0.0;
            }
        }
        for i in 0..dim.min(HIDDEN_1) {
            let cols = m.l1.w.shape()[1];
            m.l1.w.data_mut()[i * cols + i] = 1.0;
        }
        for i in 0..HIDDEN_2.min(HIDDEN_1) {
            let cols = m.l2.w.shape()[1];
            m.l2.w.data_mut()[i * cols + i] = 1.0;
        }
        for i in 0..k {
            let cols = m.l3.w.shape()[1];
            m.l3.w.data_mut()[i * cols + i] = 1.0;
        }
        m
    }

    #[test]
    fn perfect_predictor_yields_diagonal_confusion() {
        let k = 4;
        let model = passthrough_model(k, k);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let class = i % k;
            for j in 0..k {
                data.push(if j == class { 1.0 } else { 0.0 });
            }
            labels.push(class as u8);
        }
        let corpus = DetectorCorpus {
            features: Tensor::from_vec(vec![40, k], data).unwrap(),
            labels,
        };
        let eval = evaluate(&model, &corpus).unwrap();
        assert_eq!(eval.accuracy, 1.0);
        for (i, row) in eval.confusion.iter().enumerate() {
            for (j, &count) in row.iter().enumerate() {
                assert_eq!(count, if i == j { 10 } else { 0 });
            }
        }
        // Row sums equal per-class counts.
        for row in &eval.confusion {
            assert_eq!(row.iter().sum::<usize>(), 10);
        }
    }

    #[test]
    fn evaluation_is_permutation_invariant() {
        let corpus = toy_corpus();
        let mut model = init_detector(4, 2, 5);
        let schedule = TrainSchedule { epochs: 5, batch_size: 16, ..TrainSchedule::default() };
        train_detector(&mut model, &corpus, &schedule).unwrap();
        let base = evaluate(&model, &corpus).unwrap();

        let mut order: Vec<usize> = (0..corpus.len()).collect();
        Rng::new(77).shuffle(&mut order);
        let (features, labels) = corpus.gather(&order);
        let shuffled = DetectorCorpus {
            features,
            labels: labels.into_iter().map(|l| l as u8).collect(),
        };
        let perm = evaluate(&model, &shuffled).unwrap();
        assert_eq!(base.accuracy, perm.accuracy);
        assert_eq!(base.confusion, perm.confusion);
    }

    #[test]
    fn argmax_breaks_ties_toward_smallest_code() {
        assert_eq!(argmax(&[1.0, 1.0, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.9, 0.9]), 1);
    }
}
