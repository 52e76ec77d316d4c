//! Estimate the natural reference spectrum, compute each corruption's
//! normalized mean spectrum and write them as P2 grayscale grids
//! (low frequencies shifted to the center, values clamped at one).

use bnadapt::corruptions::{build_corrupted_dataset, CorruptionLabel, Severity};
use bnadapt::dataio::gen_synthetic;
use bnadapt::spectrum::{mean_amplitude, mean_corruption_spectrum, write_p2, ChannelMode};

fn main() {
    let out_dir = std::env::args().nth(1).unwrap_or_else(|| "spectra_out".into());
    let ds = gen_synthetic(600, 13);
    let eps = mean_amplitude(&ds.images[..500], ChannelMode::FirstChannel).unwrap();
    println!("reference spectrum over {} natural images", eps.count());

    let corpus = build_corrupted_dataset(
        &ds.images,
        &ds.class_labels,
        &CorruptionLabel::ALL,
        &Severity::ALL,
        60,
        17,
    )
    .unwrap();
    let grids = mean_corruption_spectrum(&corpus, &CorruptionLabel::ALL, &eps, true).unwrap();

    std::fs::create_dir_all(&out_dir).unwrap();
    for (label, grid) in grids {
        let mean: f64 = grid.data().iter().map(|&v| v as f64).sum::<f64>() / grid.len() as f64;
        let path = format!("{out_dir}/{}.pgm", label.name());
        std::fs::write(&path, write_p2(&grid)).unwrap();
        println!("{:15} mean normalized amplitude {:.3} -> {path}", label.name(), mean);
    }
}
