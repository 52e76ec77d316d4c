//! Train the corruption-type detector on normalized half-spectrum features
//! and print its validation confusion matrix.
//!
//! The default budget is small; pass `--full` for the paper-style recipe
//! (100 samples per corruption/severity, 50 epochs).

use bnadapt::corruptions::{build_corrupted_dataset, CorruptionLabel, Severity};
use bnadapt::dataio::gen_synthetic;
use bnadapt::detector::{evaluate, init_detector, train_detector, DetectorCorpus, TrainSchedule};
use bnadapt::spectrum::{mean_amplitude, ChannelMode};
use bnadapt::Image;

fn main() {
    let full = std::env::args().any(|a| a == "--full");
    let (per_cell, val_cell, epochs) = if full { (100, 40, 50) } else { (25, 15, 15) };

    let train = gen_synthetic(if full { 5000 } else { 1500 }, 7);
    let test = gen_synthetic(if full { 1000 } else { 400 }, 8);
    let train_corpus = build_corrupted_dataset(
        &train.images, &train.class_labels, &CorruptionLabel::ALL, &Severity::ALL, per_cell, 21,
    )
    .unwrap();
    let val_corpus = build_corrupted_dataset(
        &test.images, &test.class_labels, &CorruptionLabel::ALL, &Severity::ALL, val_cell, 22,
    )
    .unwrap();

    let natural: Vec<Image> = train_corpus
        .by_corruption(CorruptionLabel::Natural)
        .iter()
        .map(|r| r.image.clone())
        .collect();
    let eps = mean_amplitude(&natural, ChannelMode::FirstChannel).unwrap();
    let train_feat = DetectorCorpus::featurize(&train_corpus, &eps).unwrap();
    let val_feat = DetectorCorpus::featurize(&val_corpus, &eps).unwrap();

    let mut model = init_detector(train_feat.dim(), 12, 55);
    let schedule = TrainSchedule { epochs, seed: 5, ..Default::default() };
    let t0 = std::time::Instant::now();
    let hist = train_detector(&mut model, &train_feat, &schedule).unwrap();
    println!(
        "trained {} epochs in {:.1?}; last lr {}, train acc {:.3}",
        epochs,
        t0.elapsed(),
        hist.last().unwrap().lr,
        hist.last().unwrap().train_acc
    );

    let eval = evaluate(&model, &val_feat).unwrap();
    println!("validation accuracy {:.4} (chance {:.4})\n", eval.accuracy, 1.0 / 12.0);

    print!("{:15}", "true\\pred");
    for l in CorruptionLabel::ALL {
        print!("{:>6}", &l.name()[..l.name().len().min(5)]);
    }
    println!();
    for (t, row) in eval.confusion.iter().enumerate() {
        print!("{:15}", CorruptionLabel::from_code(t as u8).unwrap().name());
        for &c in row {
            print!("{c:>6}");
        }
        println!();
    }
}
