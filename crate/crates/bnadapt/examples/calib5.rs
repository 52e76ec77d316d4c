// Parameter study: per-corruption matched deltas, intra-noise gain block,
// brightness per-severity, across two eval seeds.
use bnadapt::basemodel::*;
use bnadapt::corruptions::*;
use bnadapt::dataio::gen_synthetic;
use bnadapt::harness::gain_matrix;
use bnadapt::Image;
use std::sync::Arc;

fn acc(model: &BaseCnn, stats: &BnStats, imgs: &[&Image], labels: &[u8]) -> f64 {
    let preds = model.predict_images(imgs, stats).unwrap();
    preds.iter().zip(labels).filter(|(&p, &l)| p == l as usize).count() as f64 / imgs.len() as f64
}

fn main() {
    let train_seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(42);
    let train = gen_synthetic(5000, 7);
    let test = gen_synthetic(1000, 8);
    let t0 = std::time::Instant::now();
    let (model, _) = train_base(&train, &BaseTrainConfig { seed: train_seed, ..Default::default() }).unwrap();
    println!("train seed {train_seed}");
    println!("base trained in {:?}", t0.elapsed());
    let model = Arc::new(model);

    let adapt = build_corrupted_dataset(
        &train.images, &train.class_labels, &CorruptionLabel::ALL, &Severity::ALL, 100, 21,
    ).unwrap();
    let corpora: Vec<(CorruptionLabel, Vec<&Image>)> = CorruptionLabel::CORRUPTIONS
        .iter()
        .map(|&l| (l, adapt.by_corruption(l).iter().map(|r| &r.image).collect::<Vec<_>>()))
        .collect();
    let table = build_bn_table(&model, &corpora).unwrap();
    let natural = model.bn_stats();

    let clean_refs: Vec<&Image> = test.images.iter().collect();
    println!("clean acc: {:.4}", acc(&model, &natural, &clean_refs, &test.class_labels));

    for eval_seed in [23u64, 24] {
        let eval = build_corrupted_dataset(
            &test.images, &test.class_labels, &CorruptionLabel::CORRUPTIONS, &Severity::ALL, 150, eval_seed,
        ).unwrap();
        let mut wins = 0;
        let mut min_delta = f64::INFINITY;
        print!("seed {eval_seed}: ");
        for &label in &CorruptionLabel::CORRUPTIONS {
            let recs = eval.by_corruption(label);
            let imgs: Vec<&Image> = recs.iter().map(|r| &r.image).collect();
            let labels: Vec<u8> = recs.iter().map(|r| r.class_label).collect();
            let d = (acc(&model, table.get(label).unwrap(), &imgs, &labels)
                - acc(&model, &natural, &imgs, &labels)) * 100.0;
            if d >= 3.0 { wins += 1; }
            min_delta = min_delta.min(d);
            print!("{}={:+.1} ", &label.name()[..4.min(label.name().len())], d);
        }
        println!("-> wins {wins}/11");

        // intra-noise gain block
        let gm = gain_matrix(&model, &table, &eval).unwrap();
        println!("  diag {:+.2} off {:+.2} intra-noise {:+.2}",
            gm.diagonal_mean() * 100.0, gm.off_diagonal_mean() * 100.0,
            gm.intra_noise_off_diagonal_mean() * 100.0);
        let noise = [CorruptionLabel::GaussianNoise, CorruptionLabel::ShotNoise, CorruptionLabel::ImpulseNoise];
        for &row in &noise {
            let i = gm.rows.iter().position(|&r| r == row).unwrap();
            print!("  {:14}", row.name());
            for &col in &noise {
                let j = gm.cols.iter().position(|&c| c == col).unwrap();
                print!(" {:+6.1}", gm.delta[i][j] * 100.0);
            }
            println!();
        }
        // brightness per severity
        print!("  brightness nat/matched:");
        for s in Severity::ALL {
            let recs: Vec<_> = eval.records.iter().filter(|r| r.corruption == CorruptionLabel::Brightness && r.severity == s).collect();
            let imgs: Vec<&Image> = recs.iter().map(|r| &r.image).collect();
            let labels: Vec<u8> = recs.iter().map(|r| r.class_label).collect();
            print!("  s{} {:.2}/{:.2}", s.level(), acc(&model, &natural, &imgs, &labels), acc(&model, table.get(CorruptionLabel::Brightness).unwrap(), &imgs, &labels));
        }
        println!();
    }
}
