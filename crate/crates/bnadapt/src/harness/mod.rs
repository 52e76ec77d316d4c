//! Evaluation machinery: per-corruption error reports, the cross-corruption
//! gain matrix and the streaming adaptation comparison.

mod stream;

pub use stream::{stream_eval, StreamConfig, StreamPolicy, StreamReport};

use crate::basemodel::{AdaptedModel, BaseCnn, BnTable};
use crate::corruptions::{CorruptedCorpus, CorruptionLabel, Severity};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::pipeline::AdaptivePipeline;
use std::sync::Arc;

/// Anything that maps a batch of images to class predictions.
pub trait Classifier {
    fn classify(&self, images: &[&Image]) -> Result<Vec<usize>>;
}

impl Classifier for BaseCnn {
    fn classify(&self, images: &[&Image]) -> Result<Vec<usize>> {
        self.predict_images(images, &self.bn_stats())
    }
}

impl Classifier for AdaptedModel {
    fn classify(&self, images: &[&Image]) -> Result<Vec<usize>> {
        self.base.predict_images(images, &self.stats)
    }
}

impl Classifier for AdaptivePipeline {
    fn classify(&self, images: &[&Image]) -> Result<Vec<usize>> {
        Ok(self.infer_batch(images)?.into_iter().map(|r| r.class).collect())
    }
}

/// Closure adapter, mostly for stubs in tests.
pub struct FnClassifier<F: Fn(&Image) -> usize>(pub F);

impl<F: Fn(&Image) -> usize> Classifier for FnClassifier<F> {
    fn classify(&self, images: &[&Image]) -> Result<Vec<usize>> {
        Ok(images.iter().map(|img| (self.0)(img)).collect())
    }
}

// ---- per-corruption error report ----------------------------------------------

#[derive(Debug, Clone)]
pub struct CorruptionErrorReport {
    /// Error rate per (corruption, severity) cell, in corruption code then
    /// severity order.
    pub cells: Vec<(CorruptionLabel, Severity, f64)>,
    /// Summed error over the five severities, per corruption.
    pub uce: Vec<(CorruptionLabel, f64)>,
    /// Mean error rate over every corrupted cell (uCE / severity count,
    /// averaged over corruptions).
    pub mce: f64,
    /// Accuracy on the natural records, when the corpus has them.
    pub clean_accuracy: Option<f64>,
    /// Accuracy over every record in the corpus.
    pub combined_accuracy: f64,
}

impl CorruptionErrorReport {
    pub fn corrupted_accuracy(&self) -> f64 {
        1.0 - self.mce
    }

    /// Tab-separated rendering with one row per cell plus aggregates.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("corruption\tseverity\terror\n");
        for (label, s, e) in &self.cells {
            out.push_str(&format!("{}\t{}\t{:.6}\n", label.name(), s.level(), e));
        }
        for (label, u) in &self.uce {
            out.push_str(&format!("{}\tuCE\t{:.6}\n", label.name(), u));
        }
        out.push_str(&format!("mCE\t-\t{:.6}\n", self.mce));
        if let Some(clean) = self.clean_accuracy {
            out.push_str(&format!("clean_accuracy\t-\t{:.6}\n", clean));
        }
        out.push_str(&format!("combined_accuracy\t-\t{:.6}\n", self.combined_accuracy));
        out
    }
}

/// Evaluate over a corpus that covers every (corruption, severity) cell;
/// natural records are optional and feed only the clean/combined numbers.
pub fn eval_per_corruption<C: Classifier>(
    classifier: &C,
    corpus: &CorruptedCorpus,
) -> Result<CorruptionErrorReport> {
    let mut missing = Vec::new();
    for label in CorruptionLabel::CORRUPTIONS {
        for s in Severity::ALL {
            if corpus.cell(label, s).is_empty() {
                missing.push(format!("{} s{}", label.name(), s.level()));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingCells { cells: missing });
    }

    let images: Vec<&Image> = corpus.records.iter().map(|r| &r.image).collect();
    let preds = classifier.classify(&images)?;

    let mut cells = Vec::new();
    let mut uce = Vec::new();
    let mut mce_acc = 0.0f64;
    for label in CorruptionLabel::CORRUPTIONS {
        let mut label_sum = 0.0f64;
        for s in Severity::ALL {
            let mut total = 0usize;
            let mut wrong = 0usize;
            for (r, &p) in corpus.records.iter().zip(&preds) {
                if r.corruption == label && r.severity == s {
                    total += 1;
                    if p != r.class_label as usize {
                        wrong += 1;
                    }
                }
            }
            let e = wrong as f64 / total as f64;
            cells.push((label, s, e));
            label_sum += e;
        }
        uce.push((label, label_sum));
        mce_acc += label_sum / Severity::ALL.len() as f64;
    }
    let mce = mce_acc / CorruptionLabel::CORRUPTIONS.len() as f64;

    let mut nat_total = 0usize;
    let mut nat_right = 0usize;
    let mut all_right = 0usize;
    for (r, &p) in corpus.records.iter().zip(&preds) {
        let correct = p == r.class_label as usize;
        if correct {
            all_right += 1;
        }
        if r.corruption == CorruptionLabel::Natural {
            nat_total += 1;
            if correct {
                nat_right += 1;
            }
        }
    }
    Ok(CorruptionErrorReport {
        cells,
        uce,
        mce,
        clean_accuracy: (nat_total > 0).then(|| nat_right as f64 / nat_total as f64),
        combined_accuracy: all_right as f64 / corpus.len() as f64,
    })
}

// ---- gain matrix ------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GainMatrix {
    /// Table entries, one row each (natural first).
    pub rows: Vec<CorruptionLabel>,
    /// Evaluated corruptions, one column each.
    pub cols: Vec<CorruptionLabel>,
    /// delta[i][j]: accuracy on corruption j under entry i's statistics,
    /// minus accuracy under natural statistics.
    pub delta: Vec<Vec<f64>>,
    /// Accuracy on corruption j under natural statistics.
    pub baseline: Vec<f64>,
}

impl GainMatrix {
    pub fn diagonal_mean(&self) -> f64 {
        let mut acc = 0.0;
        let mut n = 0usize;
        for (i, &row) in self.rows.iter().enumerate() {
            if let Some(j) = self.cols.iter().position(|&c| c == row) {
                acc += self.delta[i][j];
                n += 1;
            }
        }
        acc / n as f64
    }

    pub fn off_diagonal_mean(&self) -> f64 {
        let mut acc = 0.0;
        let mut n = 0usize;
        for (i, &row) in self.rows.iter().enumerate() {
            if row == CorruptionLabel::Natural {
                continue;
            }
            for (j, &col) in self.cols.iter().enumerate() {
                if col != row {
                    acc += self.delta[i][j];
                    n += 1;
                }
            }
        }
        acc / n as f64
    }

    /// Mean delta over ordered pairs of distinct noise corruptions.
    pub fn intra_noise_off_diagonal_mean(&self) -> f64 {
        let noise = [
            CorruptionLabel::GaussianNoise,
            CorruptionLabel::ShotNoise,
            CorruptionLabel::ImpulseNoise,
        ];
        let mut acc = 0.0;
        let mut n = 0usize;
        for (i, &row) in self.rows.iter().enumerate() {
            if !noise.contains(&row) {
                continue;
            }
            for (j, &col) in self.cols.iter().enumerate() {
                if noise.contains(&col) && col != row {
                    acc += self.delta[i][j];
                    n += 1;
                }
            }
        }
        acc / n as f64
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("stats\\eval");
        for c in &self.cols {
            out.push('\t');
            out.push_str(c.name());
        }
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            out.push_str(row.name());
            for j in 0..self.cols.len() {
                out.push_str(&format!("\t{:+.4}", self.delta[i][j]));
            }
            out.push('\n');
        }
        out.push_str("baseline");
        for b in &self.baseline {
            out.push_str(&format!("\t{:.4}", b));
        }
        out.push('\n');
        out
    }
}

/// Accuracy delta of every table entry on every corruption, against the
/// natural-statistics baseline.
pub fn gain_matrix(
    base: &Arc<BaseCnn>,
    table: &BnTable,
    corpus: &CorruptedCorpus,
) -> Result<GainMatrix> {
    let cols: Vec<CorruptionLabel> = CorruptionLabel::CORRUPTIONS.to_vec();
    let mut missing = Vec::new();
    for &c in &cols {
        if corpus.by_corruption(c).is_empty() {
            missing.push(c.name().to_string());
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingCells { cells: missing });
    }
    let rows: Vec<CorruptionLabel> = table.labels().collect();

    let mut baseline = Vec::with_capacity(cols.len());
    let natural = base.bn_stats();
    let mut col_data: Vec<(Vec<&Image>, Vec<u8>)> = Vec::with_capacity(cols.len());
    for &c in &cols {
        let recs = corpus.by_corruption(c);
        let imgs: Vec<&Image> = recs.iter().map(|r| &r.image).collect();
        let labels: Vec<u8> = recs.iter().map(|r| r.class_label).collect();
        let preds = base.predict_images(&imgs, &natural)?;
        let right = preds.iter().zip(&labels).filter(|(&p, &l)| p == l as usize).count();
        baseline.push(right as f64 / imgs.len() as f64);
        col_data.push((imgs, labels));
    }

    let mut delta = vec![vec![0.0f64; cols.len()]; rows.len()];
    for (i, &row_label) in rows.iter().enumerate() {
        let stats = table.get(row_label).expect("row label comes from the table");
        for (j, (imgs, labels)) in col_data.iter().enumerate() {
            let preds = base.predict_images(imgs, stats)?;
            let right = preds.iter().zip(labels).filter(|(&p, &l)| p == l as usize).count();
            delta[i][j] = right as f64 / imgs.len() as f64 - baseline[j];
        }
    }
    Ok(GainMatrix { rows, cols, delta, baseline })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corruptions::build_corrupted_dataset;
    use crate::dataio::gen_synthetic;

    fn small_corpus(with_natural: bool, seed: u64) -> CorruptedCorpus {
        let ds = gen_synthetic(30, seed);
        let labels: Vec<CorruptionLabel> = if with_natural {
            CorruptionLabel::ALL.to_vec()
        } else {
            CorruptionLabel::CORRUPTIONS.to_vec()
        };
        build_corrupted_dataset(&ds.images, &ds.class_labels, &labels, &Severity::ALL, 4, seed)
            .unwrap()
    }

    #[test]
    fn perfect_stub_has_zero_errors() {
        let corpus = small_corpus(true, 1);
        let truth: Vec<(Vec<f32>, usize)> = corpus
            .records
            .iter()
            .map(|r| (r.image.data().to_vec(), r.class_label as usize))
            .collect();
        let oracle = FnClassifier(move |img: &Image| {
            truth
                .iter()
                .find(|(data, _)| data == img.data())
                .map(|&(_, label)| label)
                .unwrap_or(0)
        });
        let report = eval_per_corruption(&oracle, &corpus).unwrap();
        assert_eq!(report.mce, 0.0);
        assert!(report.cells.iter().all(|&(_, _, e)| e == 0.0));
        assert_eq!(report.clean_accuracy, Some(1.0));
        assert_eq!(report.combined_accuracy, 1.0);
    }

    #[test]
    fn constant_stub_errors_at_class_frequency() {
        // Class labels are balanced mod 10, so a constant guess of class 3
        // is right on exactly the records whose class is 3.
        let corpus = small_corpus(false, 2);
        let stub = FnClassifier(|_: &Image| 3usize);
        let report = eval_per_corruption(&stub, &corpus).unwrap();
        let expected: f64 = corpus
            .records
            .iter()
            .filter(|r| r.class_label != 3)
            .count() as f64
            / corpus.len() as f64;
        assert!((report.mce - expected).abs() < 1e-12);
        assert!(report.clean_accuracy.is_none());
    }

    #[test]
    fn uce_and_mce_recompute_from_cells() {
        let corpus = small_corpus(true, 3);
        let stub = FnClassifier(|img: &Image| (img.data()[0] * 9.0) as usize);
        let report = eval_per_corruption(&stub, &corpus).unwrap();
        for (label, u) in &report.uce {
            let sum: f64 = report
                .cells
                .iter()
                .filter(|(l, _, _)| l == label)
                .map(|&(_, _, e)| e)
                .sum();
            assert!((sum - u).abs() < 1e-12);
        }
        let mce: f64 = report.uce.iter().map(|&(_, u)| u / 5.0).sum::<f64>() / 11.0;
        assert!((mce - report.mce).abs() < 1e-12);
    }

    #[test]
    fn missing_cells_are_listed() {
        let ds = gen_synthetic(20, 4);
        let mut corpus = build_corrupted_dataset(
            &ds.images,
            &ds.class_labels,
            &CorruptionLabel::CORRUPTIONS,
            &Severity::ALL,
            3,
            4,
        )
        .unwrap();
        corpus.records.retain(|r| {
            !(r.corruption == CorruptionLabel::Fog && r.severity == Severity::new(2).unwrap())
        });
        let stub = FnClassifier(|_: &Image| 0usize);
        match eval_per_corruption(&stub, &corpus) {
            Err(Error::MissingCells { cells }) => assert_eq!(cells, vec!["fog s2".to_string()]),
            other => panic!("expected MissingCells, got {other:?}"),
        }
    }

    #[test]
    fn tsv_report_has_header_and_cell_rows() {
        let corpus = small_corpus(true, 5);
        let stub = FnClassifier(|_: &Image| 0usize);
        let report = eval_per_corruption(&stub, &corpus).unwrap();
        let tsv = report.to_tsv();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines[0], "corruption\tseverity\terror");
        // 55 cells + 11 uce rows + mce + clean + combined.
        assert_eq!(lines.len(), 1 + 55 + 11 + 3);
    }

    #[test]
    fn gain_matrix_natural_row_is_identically_zero() {
        use crate::basemodel::{build_bn_table, BaseCnn};
        let ds = gen_synthetic(24, 6);
        let base = Arc::new(BaseCnn::init(6));
        let refs: Vec<&Image> = ds.images.iter().collect();
        let corpora: Vec<(CorruptionLabel, Vec<&Image>)> = CorruptionLabel::CORRUPTIONS
            .iter()
            .map(|&l| (l, refs.clone()))
            .collect();
        let table = build_bn_table(&base, &corpora).unwrap();
        let corpus = small_corpus(false, 7);
        let gm = gain_matrix(&base, &table, &corpus).unwrap();
        let natural_row = gm.rows.iter().position(|&r| r == CorruptionLabel::Natural).unwrap();
        for &d in &gm.delta[natural_row] {
            assert_eq!(d, 0.0);
        }
        assert_eq!(gm.cols.len(), 11);
        assert_eq!(gm.rows.len(), 12);
        // Spot check the TSV shape.
        let tsv = gm.to_tsv();
        assert_eq!(tsv.lines().count(), 1 + 12 + 1);
    }

    #[test]
    fn gain_matrix_requires_every_column() {
        use crate::basemodel::{build_bn_table, BaseCnn};
        let ds = gen_synthetic(12, 8);
        let base = Arc::new(BaseCnn::init(8));
        let refs: Vec<&Image> = ds.images.iter().collect();
        let corpora: Vec<(CorruptionLabel, Vec<&Image>)> = CorruptionLabel::CORRUPTIONS
            .iter()
            .map(|&l| (l, refs.clone()))
            .collect();
        let table = build_bn_table(&base, &corpora).unwrap();
        let mut corpus = small_corpus(false, 9);
        corpus.records.retain(|r| r.corruption != CorruptionLabel::Pixelate);
        assert!(matches!(
            gain_matrix(&base, &table, &corpus),
            Err(Error::MissingCells { .. })
        ));
    }

    #[test]
    fn report_is_permutation_invariant() {
        let corpus = small_corpus(true, 10);
        let stub = FnClassifier(|img: &Image| (img.data()[10] * 7.0) as usize);
        let a = eval_per_corruption(&stub, &corpus).unwrap();
        let mut shuffled = corpus.clone();
        crate::rng::Rng::new(11).shuffle(&mut shuffled.records);
        let b = eval_per_corruption(&stub, &shuffled).unwrap();
        assert_eq!(a.mce, b.mce);
        assert_eq!(a.combined_accuracy, b.combined_accuracy);
    }
}
