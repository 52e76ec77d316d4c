//! Build the BN lookup table and print the cross-corruption gain matrix:
//! accuracy delta (in points) of evaluating corruption j under the
//! statistics of entry i, relative to the natural statistics.

use bnadapt::basemodel::{build_bn_table, train_base, BaseTrainConfig};
use bnadapt::corruptions::{build_corrupted_dataset, CorruptionLabel, Severity};
use bnadapt::dataio::gen_synthetic;
use bnadapt::harness::gain_matrix;
use bnadapt::Image;
use std::sync::Arc;

fn main() {
    let full = std::env::args().any(|a| a == "--full");
    let (n_train, per_cell, eval_cell) = if full { (5000, 100, 50) } else { (1200, 25, 12) };

    let train = gen_synthetic(n_train, 7);
    let test = gen_synthetic(n_train / 5, 8);
    let t0 = std::time::Instant::now();
    let (base, _) = train_base(&train, &BaseTrainConfig { seed: 42, ..Default::default() }).unwrap();
    println!("base trained in {:.1?}", t0.elapsed());
    let base = Arc::new(base);

    let adapt = build_corrupted_dataset(
        &train.images, &train.class_labels, &CorruptionLabel::CORRUPTIONS, &Severity::ALL, per_cell, 21,
    )
    .unwrap();
    let corpora: Vec<(CorruptionLabel, Vec<&Image>)> = CorruptionLabel::CORRUPTIONS
        .iter()
        .map(|&l| (l, adapt.by_corruption(l).iter().map(|r| &r.image).collect::<Vec<_>>()))
        .collect();
    let table = build_bn_table(&base, &corpora).unwrap();

    let eval_corpus = build_corrupted_dataset(
        &test.images, &test.class_labels, &CorruptionLabel::CORRUPTIONS, &Severity::ALL, eval_cell, 22,
    )
    .unwrap();
    let t0 = std::time::Instant::now();
    let gm = gain_matrix(&base, &table, &eval_corpus).unwrap();
    println!("gain matrix in {:.1?}\n", t0.elapsed());

    print!("{:15}", "stats\\eval");
    for c in &gm.cols {
        print!("{:>7}", &c.name()[..c.name().len().min(6)]);
    }
    println!();
    for (i, row) in gm.rows.iter().enumerate() {
        print!("{:15}", row.name());
        for d in &gm.delta[i] {
            print!("{:>+7.1}", d * 100.0);
        }
        println!();
    }
    println!(
        "\ndiagonal mean {:+.2} pts, off-diagonal mean {:+.2} pts, intra-noise off-diagonal {:+.2} pts",
        gm.diagonal_mean() * 100.0,
        gm.off_diagonal_mean() * 100.0,
        gm.intra_noise_off_diagonal_mean() * 100.0
    );
}
