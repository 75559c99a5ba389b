use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use decseg::config::device_from_env;
use decseg::data::make_synthetic_dataset;
use decseg::{eval_dataset, fit, predict_file, DatasetSpec, FitOptions, Predictor, Recipe, TrainConfig};

#[derive(Parser)]
#[command(name = "decseg", version, about = "Dual-scale semi-supervised segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// `key=value`, parsed as a TOML value; may be repeated.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many completed steps.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Score a checkpoint on the test split of a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Per-image CSV; defaults to `metrics.csv` next to the checkpoint.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write binary masks for an image or a directory of images.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate a procedural dataset.
    MakeSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        labeled: usize,
        #[arg(long, default_value_t = 20)]
        unlabeled: usize,
        #[arg(long, default_value_t = 5)]
        test: usize,
        #[arg(long, default_value_t = 96)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print a config file: the defaults, or a full-scale recipe.
    PrintConfig {
        /// polyp, skin or brain.
        #[arg(long)]
        recipe: Option<String>,
    },
}

fn image_files(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(input)
        .with_context(|| format!("reading {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no images found in {}", input.display());
    }
    Ok(files)
}

fn run(cli: Cli) -> Result<()> {
    device_from_env()?;
    match cli.command {
        Command::Train { config, overrides, resume, stop_after } => {
            let cfg = TrainConfig::load(&config, &overrides)?;
            let summary = fit(&cfg, &FitOptions { resume, stop_after })?;
            println!("checkpoint: {}", summary.checkpoint.display());
            if let Some(m) = summary.metrics {
                println!(
                    "test: mDice {:.4}  mIoU {:.4}  Fbw {:.4}  Salpha {:.4}  MAE {:.4}  ({} images)",
                    m.m_dice, m.m_iou, m.fbw, m.s_alpha, m.mae, m.n_images
                );
            }
        }
        Command::Eval { checkpoint, data, output } => {
            let mut p = Predictor::from_checkpoint(&checkpoint)?;
            let spec = DatasetSpec::new(data, p.image_size());
            let csv = output.unwrap_or_else(|| checkpoint.with_file_name("metrics.csv"));
            let (m, _) = eval_dataset(&mut p, &spec, Some(&csv))?;
            println!("mDice\tmIoU\tFbw\tSalpha\tMAE\tn");
            println!("{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}", m.m_dice, m.m_iou, m.fbw, m.s_alpha, m.mae, m.n_images);
        }
        Command::Predict { checkpoint, input, output } => {
            let mut p = Predictor::from_checkpoint(&checkpoint)?;
            for file in image_files(&input)? {
                let out = predict_file(&mut p, &file, &output)?;
                println!("{}", out.display());
            }
        }
        Command::MakeSynthetic { out, labeled, unlabeled, test, size, seed } => {
            if labeled == 0 || test == 0 {
                bail!("need at least one labelled and one test image");
            }
            make_synthetic_dataset(&out, labeled, unlabeled, test, size, seed)?;
            println!("wrote {} images to {}", labeled + unlabeled + test, out.display());
        }
        Command::PrintConfig { recipe } => {
            let cfg = match recipe {
                Some(r) => TrainConfig::recipe(Recipe::parse(&r)?),
                None => TrainConfig::default(),
            };
            print!("{}", cfg.to_toml());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
