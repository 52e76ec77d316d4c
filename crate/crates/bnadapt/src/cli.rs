//! Command-line front end. Every subcommand prints its resolved
//! configuration (including the seed) before doing any work, writes binary
//! artifacts in the BNAD container and reports as tab-separated text.

use crate::basemodel::{build_bn_table, train_base, BaseTrainConfig};
use crate::corruptions::{
    build_corrupted_dataset, corrupt, CorruptedCorpus, CorruptionLabel, Severity,
};
use crate::dataio::{
    gen_synthetic, load_base, load_bn_table, load_detector, load_spectrum, parse_cifar10_bin,
    save_base, save_bn_table, save_detector, save_spectrum, write_cifar10_bin, Dataset,
};
use crate::detector::{init_detector, train_detector, DetectorCorpus, TrainSchedule};
use crate::error::Result;
use crate::harness::{eval_per_corruption, gain_matrix, stream_eval, StreamConfig};
use crate::image::Image;
use crate::pipeline::{AdaptivePipeline, DetectionMode};
use crate::rng::Rng;
use crate::spectrum::{mean_amplitude, mean_corruption_spectrum, write_p2, ChannelMode};
use std::path::{Path, PathBuf};
use std::sync::Arc;

const USAGE: &str = "\
usage: bnadapt <command> [flags]

commands:
  gen-data        --n N --seed S --out DIR
  corrupt         --data FILE --label NAME --severity 1..5 --seed S --out FILE
  eps             --data DIR --count N --seed S --out FILE
  train-base      --data DIR --seed S --out FILE [--epochs N] [--lr X] [--batch N]
  train-detector  --data DIR --seed S --out FILE [--eps FILE] [--per-cell N]
                  [--epochs N] [--lr X] [--batch N] [--log FILE]
  collect-bn      --data DIR --base FILE --seed S --out FILE [--per-cell N]
  eval            --data DIR --base FILE --table FILE --detector FILE
                  --report FILE --seed S [--per-cell N]
  gain-matrix     --data DIR --base FILE --table FILE --report FILE --seed S
                  [--per-cell N]
  stream          --data DIR --base FILE --table FILE --detector FILE
                  --report FILE --seed S [--periods 1,2,4,8,16,32]
                  [--batches-per-corruption N] [--batch N] [--window N]
  export-spectra  --data DIR --eps FILE --out DIR --seed S [--per-cell N]
                  [--no-clamp]

common flags: --seed S, --out PATH, --data PATH
";

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(crate::error::Error),
}

impl From<crate::error::Error> for CliError {
    fn from(e: crate::error::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

/// Parse and run; returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("{USAGE}");
            2
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

struct Flags {
    pairs: Vec<(String, String)>,
}

impl Flags {
    fn parse(args: &[String], allowed: &[&str]) -> std::result::Result<Self, CliError> {
        let mut pairs = Vec::new();
        let mut i = 0;
        while i < args.len() {
            let key = args[i]
                .strip_prefix("--")
                .ok_or_else(|| CliError::Usage(format!("expected a flag, got {:?}", args[i])))?;
            if !allowed.contains(&key) {
                return Err(CliError::Usage(format!("unknown flag --{key}")));
            }
            let value = args
                .get(i + 1)
                .ok_or_else(|| CliError::Usage(format!("flag --{key} needs a value")))?;
            pairs.push((key.to_string(), value.clone()));
            i += 2;
        }
        Ok(Flags { pairs })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn require(&self, key: &str) -> std::result::Result<&str, CliError> {
        self.get(key).ok_or_else(|| CliError::Usage(format!("missing required flag --{key}")))
    }

    fn parse_num<T: std::str::FromStr>(&self, key: &str, default: T) -> std::result::Result<T, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Usage(format!("flag --{key}: cannot parse {v:?}"))),
        }
    }

    fn require_num<T: std::str::FromStr>(&self, key: &str) -> std::result::Result<T, CliError> {
        let v = self.require(key)?;
        v.parse().map_err(|_| CliError::Usage(format!("flag --{key}: cannot parse {v:?}")))
    }
}

fn print_config(cmd: &str, pairs: &[(&str, String)]) {
    let rendered: Vec<String> = pairs.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("config: cmd={cmd} {}", rendered.join(" "));
}

fn dispatch(args: &[String]) -> std::result::Result<(), CliError> {
    let Some(cmd) = args.first() else {
        return Err(CliError::Usage("no command given".into()));
    };
    let rest = &args[1..];
    match cmd.as_str() {
        "gen-data" => cmd_gen_data(rest),
        "corrupt" => cmd_corrupt(rest),
        "eps" => cmd_eps(rest),
        "train-base" => cmd_train_base(rest),
        "train-detector" => cmd_train_detector(rest),
        "collect-bn" => cmd_collect_bn(rest),
        "eval" => cmd_eval(rest),
        "gain-matrix" => cmd_gain_matrix(rest),
        "stream" => cmd_stream(rest),
        "export-spectra" => cmd_export_spectra(rest),
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            Ok(())
        }
        other => Err(CliError::Usage(format!("unknown command {other:?}"))),
    }
}

// ---- data helpers -----------------------------------------------------------

fn load_split(data: &str, split: &str) -> Result<Dataset> {
    let path = Path::new(data);
    let file = if path.is_dir() { path.join(split) } else { path.to_path_buf() };
    let mut ds = parse_cifar10_bin(&std::fs::read(&file)?)?;
    ds.split = split.trim_end_matches(".bin").to_string();
    Ok(ds)
}

fn build_corpus(ds: &Dataset, labels: &[CorruptionLabel], per_cell: usize, seed: u64) -> Result<CorruptedCorpus> {
    build_corrupted_dataset(&ds.images, &ds.class_labels, labels, &Severity::ALL, per_cell, seed)
}

// ---- subcommands --------------------------------------------------------------

fn cmd_gen_data(args: &[String]) -> std::result::Result<(), CliError> {
    let flags = Flags::parse(args, &["n", "seed", "out"])?;
    let n: usize = flags.parse_num("n", 6000)?;
    let seed: u64 = flags.parse_num("seed", 0)?;
    let out = PathBuf::from(flags.require("out")?);
    let n_train = n * 5 / 6;
    print_config(
        "gen-data",
        &[
            ("n", n.to_string()),
            ("n_train", n_train.to_string()),
            ("n_test", (n - n_train).to_string()),
            ("seed", seed.to_string()),
            ("out", out.display().to_string()),
        ],
    );
    std::fs::create_dir_all(&out).map_err(crate::error::Error::from)?;
    let train = gen_synthetic(n_train, Rng::derive(seed, 0).next_u64());
    let test = gen_synthetic(n - n_train, Rng::derive(seed, 1).next_u64());
    std::fs::write(out.join("train.bin"), write_cifar10_bin(&train)?)
        .map_err(crate::error::Error::from)?;
    std::fs::write(out.join("test.bin"), write_cifar10_bin(&test)?)
        .map_err(crate::error::Error::from)?;
    println!("wrote {} train and {} test records", train.len(), test.len());
    Ok(())
}

fn cmd_corrupt(args: &[String]) -> std::result::Result<(), CliError> {
    let flags = Flags::parse(args, &["data", "label", "severity", "seed", "out"])?;
    let data = flags.require("data")?;
    let label = CorruptionLabel::parse(flags.require("label")?)?;
    let severity = Severity::new(flags.require_num::<u8>("severity")?)?;
    let seed: u64 = flags.parse_num("seed", 0)?;
    let out = PathBuf::from(flags.require("out")?);
    print_config(
        "corrupt",
        &[
            ("data", data.to_string()),
            ("label", label.name().to_string()),
            ("severity", severity.level().to_string()),
            ("seed", seed.to_string()),
            ("out", out.display().to_string()),
        ],
    );
    let mut ds = load_split(data, "test.bin")?;
    for (i, img) in ds.images.iter_mut().enumerate() {
        *img = corrupt(img, label, severity, Rng::derive(seed, i as u64).next_u64());
    }
    std::fs::write(&out, write_cifar10_bin(&ds)?).map_err(crate::error::Error::from)?;
    println!("wrote {} corrupted records", ds.len());
    Ok(())
}

fn cmd_eps(args: &[String]) -> std::result::Result<(), CliError> {
    let flags = Flags::parse(args, &["data", "count", "seed", "out"])?;
    let data = flags.require("data")?;
    let count: usize = flags.parse_num("count", 500)?;
    let seed: u64 = flags.parse_num("seed", 0)?;
    let out = PathBuf::from(flags.require("out")?);
    print_config(
        "eps",
        &[
            ("data", data.to_string()),
            ("count", count.to_string()),
            ("seed", seed.to_string()),
            ("out", out.display().to_string()),
        ],
    );
    let ds = load_split(data, "train.bin")?;
    let pool = natural_pool(&ds, count, seed);
    let eps = mean_amplitude(&pool, ChannelMode::FirstChannel)?;
    save_spectrum(&out, &eps)?;
    println!("reference spectrum over {} images -> {}", eps.count(), out.display());
    Ok(())
}

/// Seeded natural subset used for the reference spectrum.
fn natural_pool(ds: &Dataset, count: usize, seed: u64) -> Vec<Image> {
    let mut order: Vec<usize> = (0..ds.len()).collect();
    Rng::derive(seed, 0x0e5).shuffle(&mut order);
    order.iter().take(count.min(ds.len())).map(|&i| ds.images[i].clone()).collect()
}

fn cmd_train_base(args: &[String]) -> std::result::Result<(), CliError> {
    let flags = Flags::parse(args, &["data", "seed", "out", "epochs", "lr", "batch"])?;
    let data = flags.require("data")?;
    let seed: u64 = flags.parse_num("seed", 0)?;
    let out = PathBuf::from(flags.require("out")?);
    let defaults = BaseTrainConfig::default();
    let cfg = BaseTrainConfig {
        epochs: flags.parse_num("epochs", defaults.epochs)?,
        base_lr: flags.parse_num("lr", defaults.base_lr)?,
        batch_size: flags.parse_num("batch", defaults.batch_size)?,
        seed,
        ..defaults
    };
    print_config(
        "train-base",
        &[
            ("data", data.to_string()),
            ("epochs", cfg.epochs.to_string()),
            ("lr", cfg.base_lr.to_string()),
            ("batch", cfg.batch_size.to_string()),
            ("seed", seed.to_string()),
            ("out", out.display().to_string()),
        ],
    );
    let train = load_split(data, "train.bin")?;
    let (model, history) = train_base(&train, &cfg)?;
    for (i, (loss, acc)) in history.iter().enumerate() {
        println!("epoch {}\tloss {:.4}\ttrain_acc {:.4}", i + 1, loss, acc);
    }
    if let Ok(test) = load_split(data, "test.bin") {
        let refs: Vec<&Image> = test.images.iter().collect();
        let preds = model.predict_images(&refs, &model.bn_stats())?;
        let right =
            preds.iter().zip(&test.class_labels).filter(|(&p, &l)| p == l as usize).count();
        println!("test_acc {:.4}", right as f64 / test.len() as f64);
    }
    save_base(&out, &model)?;
    println!("model -> {}", out.display());
    Ok(())
}

fn cmd_train_detector(args: &[String]) -> std::result::Result<(), CliError> {
    let flags = Flags::parse(
        args,
        &["data", "seed", "out", "eps", "per-cell", "epochs", "lr", "batch", "log"],
    )?;
    let data = flags.require("data")?;
    let seed: u64 = flags.parse_num("seed", 0)?;
    let out = PathBuf::from(flags.require("out")?);
    let per_cell: usize = flags.parse_num("per-cell", 100)?;
    let defaults = TrainSchedule::default();
    let schedule = TrainSchedule {
        epochs: flags.parse_num("epochs", defaults.epochs)?,
        base_lr: flags.parse_num("lr", defaults.base_lr)?,
        batch_size: flags.parse_num("batch", defaults.batch_size)?,
        seed,
        ..defaults
    };
    print_config(
        "train-detector",
        &[
            ("data", data.to_string()),
            ("per_cell", per_cell.to_string()),
            ("epochs", schedule.epochs.to_string()),
            ("lr", schedule.base_lr.to_string()),
            ("batch", schedule.batch_size.to_string()),
            ("seed", seed.to_string()),
            ("out", out.display().to_string()),
        ],
    );
    let train = load_split(data, "train.bin")?;
    let eps = match flags.get("eps") {
        Some(path) => load_spectrum(Path::new(path))?,
        None => {
            let pool = natural_pool(&train, 5 * per_cell, seed);
            mean_amplitude(&pool, ChannelMode::FirstChannel)?
        }
    };
    let corpus = build_corpus(&train, &CorruptionLabel::ALL, per_cell, Rng::derive(seed, 1).next_u64())?;
    let features = DetectorCorpus::featurize(&corpus, &eps)?;
    let mut model = init_detector(features.dim(), CorruptionLabel::ALL.len(), seed);
    let history = train_detector(&mut model, &features, &schedule)?;
    let mut log = String::from("epoch,lr,mean_loss,train_acc\n");
    for e in &history {
        log.push_str(&format!("{},{},{:.6},{:.6}\n", e.epoch, e.lr, e.mean_loss, e.train_acc));
    }
    let log_path = match flags.get("log") {
        Some(p) => PathBuf::from(p),
        None => out.with_extension("log"),
    };
    std::fs::write(&log_path, &log).map_err(crate::error::Error::from)?;
    save_detector(&out, &model, &eps)?;
    println!(
        "final train_acc {:.4}; checkpoint -> {}, log -> {}",
        history.last().map(|e| e.train_acc).unwrap_or(0.0),
        out.display(),
        log_path.display()
    );
    Ok(())
}

fn cmd_collect_bn(args: &[String]) -> std::result::Result<(), CliError> {
    let flags = Flags::parse(args, &["data", "base", "seed", "out", "per-cell"])?;
    let data = flags.require("data")?;
    let base_path = flags.require("base")?;
    let seed: u64 = flags.parse_num("seed", 0)?;
    let out = PathBuf::from(flags.require("out")?);
    let per_cell: usize = flags.parse_num("per-cell", 100)?;
    print_config(
        "collect-bn",
        &[
            ("data", data.to_string()),
            ("base", base_path.to_string()),
            ("per_cell", per_cell.to_string()),
            ("seed", seed.to_string()),
            ("out", out.display().to_string()),
        ],
    );
    let train = load_split(data, "train.bin")?;
    let model = load_base(Path::new(base_path))?;
    let corpus = build_corpus(&train, &CorruptionLabel::CORRUPTIONS, per_cell, Rng::derive(seed, 1).next_u64())?;
    let corpora: Vec<(CorruptionLabel, Vec<&Image>)> = CorruptionLabel::CORRUPTIONS
        .iter()
        .map(|&l| (l, corpus.by_corruption(l).iter().map(|r| &r.image).collect::<Vec<_>>()))
        .collect();
    let table = build_bn_table(&model, &corpora)?;
    save_bn_table(&out, &table)?;
    println!("table with {} entries -> {}", table.len(), out.display());
    Ok(())
}

fn assemble_pipeline(
    base_path: &str,
    table_path: &str,
    detector_path: &str,
) -> Result<AdaptivePipeline> {
    let base = Arc::new(load_base(Path::new(base_path))?);
    let table = load_bn_table(Path::new(table_path))?;
    let (detector, eps) = load_detector(Path::new(detector_path))?;
    AdaptivePipeline::new(eps, detector, base, table, DetectionMode::PerImage)
}

fn cmd_eval(args: &[String]) -> std::result::Result<(), CliError> {
    let flags =
        Flags::parse(args, &["data", "base", "table", "detector", "report", "seed", "per-cell"])?;
    let data = flags.require("data")?;
    let report_path = PathBuf::from(flags.require("report")?);
    let seed: u64 = flags.parse_num("seed", 0)?;
    let per_cell: usize = flags.parse_num("per-cell", 100)?;
    print_config(
        "eval",
        &[
            ("data", data.to_string()),
            ("per_cell", per_cell.to_string()),
            ("seed", seed.to_string()),
            ("report", report_path.display().to_string()),
        ],
    );
    let pipeline = assemble_pipeline(
        flags.require("base")?,
        flags.require("table")?,
        flags.require("detector")?,
    )?;
    let test = load_split(data, "test.bin")?;
    let corpus = build_corpus(&test, &CorruptionLabel::ALL, per_cell, Rng::derive(seed, 2).next_u64())?;
    let base_report = eval_per_corruption(&*pipeline.base, &corpus)?;
    let report = eval_per_corruption(&pipeline, &corpus)?;
    std::fs::write(&report_path, report.to_tsv()).map_err(crate::error::Error::from)?;
    println!(
        "base: corrupted_acc {:.4} clean_acc {:.4} mCE {:.4}",
        base_report.corrupted_accuracy(),
        base_report.clean_accuracy.unwrap_or(f64::NAN),
        base_report.mce
    );
    println!(
        "ours: corrupted_acc {:.4} clean_acc {:.4} mCE {:.4}",
        report.corrupted_accuracy(),
        report.clean_accuracy.unwrap_or(f64::NAN),
        report.mce
    );
    println!("report -> {}", report_path.display());
    Ok(())
}

fn cmd_gain_matrix(args: &[String]) -> std::result::Result<(), CliError> {
    let flags = Flags::parse(args, &["data", "base", "table", "report", "seed", "per-cell"])?;
    let data = flags.require("data")?;
    let report_path = PathBuf::from(flags.require("report")?);
    let seed: u64 = flags.parse_num("seed", 0)?;
    let per_cell: usize = flags.parse_num("per-cell", 50)?;
    print_config(
        "gain-matrix",
        &[
            ("data", data.to_string()),
            ("per_cell", per_cell.to_string()),
            ("seed", seed.to_string()),
            ("report", report_path.display().to_string()),
        ],
    );
    let base = Arc::new(load_base(Path::new(flags.require("base")?))?);
    let table = load_bn_table(Path::new(flags.require("table")?))?;
    let test = load_split(data, "test.bin")?;
    let corpus = build_corpus(&test, &CorruptionLabel::CORRUPTIONS, per_cell, Rng::derive(seed, 3).next_u64())?;
    let gm = gain_matrix(&base, &table, &corpus)?;
    std::fs::write(&report_path, gm.to_tsv()).map_err(crate::error::Error::from)?;
    println!(
        "diag mean {:+.4}, off-diag mean {:+.4}, intra-noise off-diag {:+.4}",
        gm.diagonal_mean(),
        gm.off_diagonal_mean(),
        gm.intra_noise_off_diagonal_mean()
    );
    println!("report -> {}", report_path.display());
    Ok(())
}

fn cmd_stream(args: &[String]) -> std::result::Result<(), CliError> {
    let flags = Flags::parse(
        args,
        &[
            "data", "base", "table", "detector", "report", "seed", "periods", "batch",
            "batches-per-corruption", "window", "per-cell",
        ],
    )?;
    let data = flags.require("data")?;
    let report_path = PathBuf::from(flags.require("report")?);
    let seed: u64 = flags.parse_num("seed", 0)?;
    let per_cell: usize = flags.parse_num("per-cell", 100)?;
    let defaults = StreamConfig::default();
    let periods = match flags.get("periods") {
        None => defaults.periods.clone(),
        Some(spec) => spec
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| CliError::Usage(format!("cannot parse --periods {spec:?}")))?,
    };
    let cfg = StreamConfig {
        batch_size: flags.parse_num("batch", defaults.batch_size)?,
        batches_per_corruption: flags
            .parse_num("batches-per-corruption", defaults.batches_per_corruption)?,
        window: flags.parse_num("window", defaults.window)?,
        periods,
        seed,
    };
    print_config(
        "stream",
        &[
            ("data", data.to_string()),
            ("periods", format!("{:?}", cfg.periods)),
            ("batch", cfg.batch_size.to_string()),
            ("batches_per_corruption", cfg.batches_per_corruption.to_string()),
            ("window", cfg.window.to_string()),
            ("seed", seed.to_string()),
            ("report", report_path.display().to_string()),
        ],
    );
    let pipeline = assemble_pipeline(
        flags.require("base")?,
        flags.require("table")?,
        flags.require("detector")?,
    )?;
    let test = load_split(data, "test.bin")?;
    let pools = build_corpus(&test, &CorruptionLabel::CORRUPTIONS, per_cell, Rng::derive(seed, 4).next_u64())?;
    let report = stream_eval(&cfg, &pipeline, &pools)?;
    std::fs::write(&report_path, report.to_tsv()).map_err(crate::error::Error::from)?;
    for (policy, k, acc) in &report.rows {
        println!("{}\tK={k}\tacc {:.4}", policy.name(), acc);
    }
    println!("report -> {}", report_path.display());
    Ok(())
}

fn cmd_export_spectra(args: &[String]) -> std::result::Result<(), CliError> {
    let flags = Flags::parse(args, &["data", "eps", "out", "seed", "per-cell", "no-clamp"])?;
    let data = flags.require("data")?;
    let eps_path = flags.require("eps")?;
    let out = PathBuf::from(flags.require("out")?);
    let seed: u64 = flags.parse_num("seed", 0)?;
    let per_cell: usize = flags.parse_num("per-cell", 50)?;
    let clamp = flags.get("no-clamp").is_none();
    print_config(
        "export-spectra",
        &[
            ("data", data.to_string()),
            ("eps", eps_path.to_string()),
            ("per_cell", per_cell.to_string()),
            ("clamp", clamp.to_string()),
            ("seed", seed.to_string()),
            ("out", out.display().to_string()),
        ],
    );
    let eps = load_spectrum(Path::new(eps_path))?;
    let test = load_split(data, "test.bin")?;
    let corpus = build_corpus(&test, &CorruptionLabel::ALL, per_cell, Rng::derive(seed, 5).next_u64())?;
    std::fs::create_dir_all(&out).map_err(crate::error::Error::from)?;
    let grids = mean_corruption_spectrum(&corpus, &CorruptionLabel::ALL, &eps, clamp)?;
    for (label, grid) in grids {
        let path = out.join(format!("{}.pgm", label.name()));
        std::fs::write(&path, write_p2(&grid)).map_err(crate::error::Error::from)?;
        println!("{} -> {}", label.name(), path.display());
    }
    Ok(())
}
