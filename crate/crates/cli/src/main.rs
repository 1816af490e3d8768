//! Command-line driver. Every run is a pure function of (config, seed):
//! identical invocations produce identical bytes. Exit codes are
//! category-coded: 0 success, 2 configuration, 3 checkpoint, 4 i/o,
//! 5 training/evaluation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use miqa::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use miqa::config::{ExperimentConfig, Protocol};
use miqa::error::Result;
use miqa::protocols;
use miqa::results::emit_train_log;
use miqa_core::eval::{evaluate_model, fine_tune, saliency_map, write_pgm};
use miqa_core::meta::meta_train;
use miqa_core::model::build_model;
use miqa_core::taskgen::io::{export_images, read_ppm};
use miqa_core::taskgen::lodo_split;

#[derive(Parser)]
#[command(
    name = "miqa",
    about = "Meta-learned no-reference image quality assessment experiments"
)]
struct Cli {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured seed list with a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (created if missing); defaults to the configured
    /// `run.out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic task set to disk as portable pixmaps plus a
    /// scores manifest.
    GenTasks,
    /// Meta-train a quality prior on every configured family and save it
    /// as a checkpoint.
    MetaTrain,
    /// Fine-tune a checkpointed prior on one held-out family.
    FineTune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        held_out: String,
    },
    /// Evaluate a checkpoint on a held-out family's test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        held_out: String,
    },
    /// Leave-one-family-out protocol over all configured families.
    Lodo,
    /// Meta-vs-pooled-training ablation, seed-paired.
    Ablation,
    /// Grid sweep over tasks-per-batch and adaptation steps.
    Sweep,
    /// 80/20 random-split generalization protocol.
    RandomSplit,
    /// Per-pixel gradient magnitude map for one image under a checkpoint.
    Saliency {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input image (PPM, P6) at the backbone resolution.
        #[arg(long)]
        image: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seeds = vec![seed];
    }
    Ok(cfg)
}

fn ensure_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn first_seed(cfg: &ExperimentConfig) -> u64 {
    cfg.run.seeds.first().copied().unwrap_or(0)
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = load_config(cli)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.run.out_dir));
    match &cli.command {
        Command::GenTasks => {
            ensure_out(&out)?;
            let seed = first_seed(&cfg);
            let tg = cfg.taskgen.to_taskgen_config(seed)?;
            let set = protocols::all_family_tasks(&tg)?;
            let images: Vec<_> = set
                .tasks
                .iter()
                .flat_map(|t| t.support.iter().chain(t.query.iter()).cloned())
                .collect();
            export_images(&out, &images)?;
            println!("exported {} images to {}", images.len(), out.display());
        }
        Command::MetaTrain => {
            ensure_out(&out)?;
            let seed = first_seed(&cfg);
            let spec = cfg.backbone.to_spec();
            let tg = cfg.taskgen.to_taskgen_config(seed)?;
            let set = protocols::all_family_tasks(&tg)?;
            let theta0 = build_model::<f32>(&spec, protocols::theta0_seed(seed))?;
            let (prior, logs) = meta_train(&spec, &set, theta0, &cfg.meta.to_meta_config(seed))?;
            let ckpt = Checkpoint {
                params: prior,
                config_hash: cfg.hash(),
                epoch: cfg.meta.epochs as u32,
            };
            let path = out.join("prior.ckpt");
            save_checkpoint(&ckpt, &path)?;
            let log_rows: Vec<_> = logs
                .iter()
                .map(|l| miqa::results::TrainLogRow {
                    run_id: "meta-train".into(),
                    seed,
                    unit: "all-families".into(),
                    epoch: l.epoch,
                    query_loss: f64::from(l.mean_query_loss),
                })
                .collect();
            emit_train_log(&log_rows, &out.join("train_log.csv"))?;
            println!("saved quality prior to {}", path.display());
        }
        Command::FineTune { checkpoint, held_out } => {
            ensure_out(&out)?;
            let seed = first_seed(&cfg);
            let spec = cfg.backbone.to_spec();
            let ckpt = load_checkpoint(checkpoint)?;
            ckpt.verify_architecture(&spec)?;
            let tg = cfg.taskgen.to_taskgen_config(seed)?;
            let (_, target) = lodo_split::<f32>(&tg, held_out)?;
            let tuned = fine_tune(
                &spec,
                &ckpt.params,
                &target,
                cfg.finetune.steps,
                cfg.finetune.rate as f32,
                &cfg.meta.opt_hyper(),
            )?;
            let report = evaluate_model(&spec, &tuned.params, &target)?;
            let path = out.join("finetuned.ckpt");
            save_checkpoint(
                &Checkpoint { params: tuned.params, config_hash: cfg.hash(), epoch: ckpt.epoch },
                &path,
            )?;
            println!(
                "fine-tuned on `{held_out}`: plcc {} srocc {} (saved {})",
                fmt(report.plcc),
                fmt(report.srocc),
                path.display()
            );
        }
        Command::Evaluate { checkpoint, held_out } => {
            let seed = first_seed(&cfg);
            let spec = cfg.backbone.to_spec();
            let ckpt = load_checkpoint(checkpoint)?;
            ckpt.verify_architecture(&spec)?;
            let tg = cfg.taskgen.to_taskgen_config(seed)?;
            let (_, target) = lodo_split::<f32>(&tg, held_out)?;
            let report = evaluate_model(&spec, &ckpt.params, &target)?;
            println!(
                "`{held_out}` test split (n={}): plcc {} srocc {} mse {:.6}",
                report.n,
                fmt(report.plcc),
                fmt(report.srocc),
                report.mse
            );
        }
        Command::Lodo => {
            cfg.run.protocol = Protocol::Lodo;
            run_protocol(&cfg, &out)?;
        }
        Command::Ablation => {
            cfg.run.protocol = Protocol::Ablation;
            run_protocol(&cfg, &out)?;
        }
        Command::Sweep => {
            cfg.run.protocol = Protocol::Sweep;
            run_protocol(&cfg, &out)?;
        }
        Command::RandomSplit => {
            cfg.run.protocol = Protocol::RandomSplit;
            run_protocol(&cfg, &out)?;
        }
        Command::Saliency { checkpoint, image } => {
            ensure_out(&out)?;
            let spec = cfg.backbone.to_spec();
            let ckpt = load_checkpoint(checkpoint)?;
            ckpt.verify_architecture(&spec)?;
            let pixels = read_ppm::<f32>(image)?;
            let map = saliency_map(&spec, &ckpt.params, &pixels)?;
            let stem = image
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("image");
            let path = out.join(format!("{stem}-saliency.pgm"));
            write_pgm(&path, &map)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn run_protocol(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    ensure_out(out)?;
    let output = protocols::run_protocol(cfg, Some(out))?;
    println!(
        "{}: {} result rows -> {}",
        cfg.run.protocol.name(),
        output.results.len(),
        out.join("results.csv").display()
    );
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "NA".into(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(1))
        }
    }
}
