//! The whole pipeline on a small budget: generate data, train the base
//! classifier, estimate the reference spectrum, train the corruption
//! detector, collect the BN lookup table, then compare adaptive inference
//! against the frozen model on a corrupted test set.
//!
//! Run with `--full` for the desk-scale budget (several minutes).

use bnadapt::basemodel::{build_bn_table, train_base, BaseCnn, BaseTrainConfig};
use bnadapt::corruptions::{build_corrupted_dataset, CorruptionLabel, Severity};
use bnadapt::dataio::gen_synthetic;
use bnadapt::detector::{init_detector, train_detector, DetectorCorpus, TrainSchedule};
use bnadapt::harness::eval_per_corruption;
use bnadapt::pipeline::{AdaptivePipeline, DetectionMode};
use bnadapt::spectrum::{mean_amplitude, ChannelMode};
use bnadapt::Image;
use std::sync::Arc;

fn main() {
    let full = std::env::args().any(|a| a == "--full");
    let (n_train, n_test, per_cell, epochs) = if full { (5000, 1000, 100, 50) } else { (1200, 300, 25, 12) };

    println!("== data ==");
    let train = gen_synthetic(n_train, 7);
    let test = gen_synthetic(n_test, 8);
    println!("{n_train} train / {n_test} test synthetic images");

    println!("== base model ==");
    let t0 = std::time::Instant::now();
    let (base, history) = train_base(&train, &BaseTrainConfig { seed: 42, ..Default::default() }).unwrap();
    println!(
        "trained in {:.1?}; final train accuracy {:.3}",
        t0.elapsed(),
        history.last().unwrap().1
    );
    let base = Arc::new(base);

    println!("== adaptation corpus, reference spectrum, detector ==");
    let adapt = build_corrupted_dataset(
        &train.images,
        &train.class_labels,
        &CorruptionLabel::ALL,
        &Severity::ALL,
        per_cell,
        21,
    )
    .unwrap();
    let natural_pool: Vec<Image> = adapt
        .by_corruption(CorruptionLabel::Natural)
        .iter()
        .map(|r| r.image.clone())
        .collect();
    let eps = mean_amplitude(&natural_pool, ChannelMode::FirstChannel).unwrap();
    let features = DetectorCorpus::featurize(&adapt, &eps).unwrap();
    let mut detector = init_detector(features.dim(), 12, 55);
    let schedule = TrainSchedule { epochs, seed: 5, ..Default::default() };
    let t0 = std::time::Instant::now();
    let hist = train_detector(&mut detector, &features, &schedule).unwrap();
    println!(
        "detector trained in {:.1?}; final train accuracy {:.3}",
        t0.elapsed(),
        hist.last().unwrap().train_acc
    );

    println!("== BN lookup table ==");
    let corpora: Vec<(CorruptionLabel, Vec<&Image>)> = CorruptionLabel::CORRUPTIONS
        .iter()
        .map(|&l| (l, adapt.by_corruption(l).iter().map(|r| &r.image).collect::<Vec<_>>()))
        .collect();
    let table = build_bn_table(&base, &corpora).unwrap();
    println!("{} entries", table.len());

    println!("== evaluation ==");
    let eval_corpus = build_corrupted_dataset(
        &test.images,
        &test.class_labels,
        &CorruptionLabel::ALL,
        &Severity::ALL,
        per_cell.min(n_test / 2),
        22,
    )
    .unwrap();
    let pipeline =
        AdaptivePipeline::new(eps, detector, Arc::clone(&base), table, DetectionMode::PerImage)
            .unwrap();
    let base_report = eval_per_corruption(&*base.clone() as &BaseCnn, &eval_corpus).unwrap();
    let ours = eval_per_corruption(&pipeline, &eval_corpus).unwrap();
    println!(
        "base:     corrupted {:.3}  clean {:.3}  mCE {:.3}",
        base_report.corrupted_accuracy(),
        base_report.clean_accuracy.unwrap(),
        base_report.mce
    );
    println!(
        "adaptive: corrupted {:.3}  clean {:.3}  mCE {:.3}",
        ours.corrupted_accuracy(),
        ours.clean_accuracy.unwrap(),
        ours.mce
    );
    println!(
        "corrupted accuracy delta: {:+.1} points",
        100.0 * (ours.corrupted_accuracy() - base_report.corrupted_accuracy())
    );
}
