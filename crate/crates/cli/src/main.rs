//! `srswitch`: the full pipeline as subcommands over a shared configuration.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "srswitch",
    about = "Switch-guided hybrid single-image super-resolution pipeline",
    version
)]
struct Cli {
    /// Flat key=value configuration file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every stochastic step of the subcommand.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Labeling threshold on the SSIM difference.
    #[arg(long, global = true)]
    tau: Option<f64>,

    /// Super-resolution factor (2 or 4).
    #[arg(long, global = true)]
    scale: Option<usize>,

    /// Worker-thread cap (timed benchmark sections always run on 1).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory for CSVs and the run log.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus (half smooth, half structured patches).
    Synth {
        /// Total patch count.
        #[arg(long)]
        count: Option<usize>,
        /// Square HR patch size in pixels.
        #[arg(long)]
        patch_size: Option<usize>,
        /// Train fraction of the corpus.
        #[arg(long)]
        split: Option<f64>,
    },
    /// Tile mosaics into a corpus: sample, degrade, split.
    Prepare {
        /// Mosaic PNG (repeatable).
        #[arg(long, required = true)]
        mosaic: Vec<PathBuf>,
        /// Patches to sample from the tiling.
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long)]
        patch_size: Option<usize>,
        #[arg(long)]
        split: Option<f64>,
    },
    /// Train one SR model on the corpus train split.
    TrainModel {
        /// fsrcnn_t | dbpn_t | dbpn_cascade_t | lapsrn_t | drln_proxy_t
        #[arg(long)]
        model: String,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        momentum: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Label every patch easy/difficult by the SSIM gain of a deep model.
    Label {
        /// Name of the trained deep model to compare against bicubic.
        #[arg(long)]
        deep: String,
    },
    /// Train the switch classifier on a label CSV.
    TrainSwitch {
        /// Label CSV (defaults to <out>/labels.csv).
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Coupled training of K experts and a K-way switch.
    Couple {
        /// Comma-separated expert model names (trained weights must exist).
        #[arg(long)]
        experts: String,
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Route every patch with the trained switch classifier.
    Route {
        /// Expert count the classifier was trained with.
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Benchmark configurations over patch-count sweeps.
    Bench {
        /// Comma-separated: model names and/or hybrid:<easy>+<difficult>.
        #[arg(long)]
        configs: String,
        /// Comma-separated subset sizes.
        #[arg(long)]
        counts: Option<String>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Re-emit a bench CSV as a sorted table.
    Report {
        /// Records CSV produced by `bench` (defaults to <out>/bench.csv).
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Finite-difference check of every gradient in a model.
    Gradcheck {
        #[arg(long)]
        model: String,
    },
    /// Per-patch PSNR/SSIM/entropy CSV for a model (default: bicubic).
    Metrics {
        #[arg(long)]
        model: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version on stdout with success status.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };

    let mut cfg = match &cli.config {
        Some(path) => match RunConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(tau) = cli.tau {
        cfg.tau = tau;
    }
    if let Some(scale) = cli.scale {
        cfg.scale = scale;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }

    match commands::dispatch(cli.command, cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
