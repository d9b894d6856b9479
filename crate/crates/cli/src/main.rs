//! `modcnn`: cost counting, benchmarking, training and analysis of
//! Mixture-of-Depths CNNs.

mod commands;
mod data;
mod manifest;
mod model;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "modcnn", version, about = "Mixture-of-Depths channel routing for CNNs")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Seed for initialization, data order, augmentation and routing.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for tensor kernels.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Directory for CSVs, weights and the run manifest.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// TOML file with `arch.*`, `mod.*` and `train.*` keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dotted-key override such as `train.epochs=3`; repeatable, applied
    /// after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// CIFAR-10 binary directory; falls back to `$MODCNN_DATA`.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Catalog name, `.toml` architecture file or training checkpoint.
    pub model: String,
    /// Input resolution.
    #[arg(long)]
    pub res: Option<usize>,
    /// Stem override; `cifar` picks the CIFAR variant of a catalog model.
    #[arg(long)]
    pub stem: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Catalog models and registered strategies.
    List,
    /// Builds a model and prints its block plan.
    Inspect {
        #[command(flatten)]
        model: ModelArgs,
        /// Also write freshly initialized weights to `--out`.
        #[arg(long)]
        save: bool,
    },
    /// Multiply-accumulates and parameters.
    Count {
        #[command(flatten)]
        model: ModelArgs,
        /// `profiler` (default) or `dense`.
        #[arg(long, default_value = modcnn::cost::DEFAULT_CONVENTION)]
        convention: String,
        /// Print per-layer rows as CSV on stdout.
        #[arg(long)]
        csv: bool,
    },
    /// Batch latency of one model, or of a second relative to the first.
    Bench {
        /// Baseline model.
        a: String,
        /// Model compared against the baseline.
        b: Option<String>,
        #[arg(long)]
        res: Option<usize>,
        #[arg(long)]
        stem: Option<String>,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, default_value_t = modcnn::bench::DEFAULT_WARMUP)]
        warmup: usize,
        #[arg(long, default_value_t = modcnn::bench::DEFAULT_ITERS)]
        iters: usize,
    },
    /// Trains a model and writes its log, weights and checkpoint.
    Train {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Per-block channel selection frequencies.
    Analyze {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Keep blocks whose name contains this.
        #[arg(long)]
        layer: Option<String>,
        /// Separate histograms per class.
        #[arg(long)]
        by_class: bool,
        #[arg(long, default_value_t = 100)]
        batch: usize,
    },
    /// Trains one model per grid point and tabulates accuracy and cost.
    Ablate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Grid axis `c=2,4`, `fusion=...`, `selector=...` or `seed=...`;
        /// repeatable.
        #[arg(long, required = true)]
        grid: Vec<String>,
        /// Latency iterations per row; 0 skips timing.
        #[arg(long, default_value_t = 0)]
        bench_iters: usize,
    },
    /// Finite-difference gradient check of one MoD block in f64.
    Gradcheck {
        /// `mod-basic` or `mod-bottleneck`.
        block: String,
        /// Block channels.
        #[arg(long = "C", default_value_t = 16)]
        channels: usize,
        /// Channel parameter.
        #[arg(long = "c", default_value_t = 4)]
        c: usize,
        #[arg(long, default_value_t = 6)]
        hw: usize,
        #[arg(long, default_value_t = 2)]
        batch: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Standard deviation of noise added to the initial parameters.
        #[arg(long, default_value_t = 0.1)]
        jitter: f64,
    },
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// `cifar`, `cifar-like`, `synth` or `two-class`.
    #[arg(long, default_value = "cifar")]
    pub data: String,
    /// Training samples (balanced per class where possible).
    #[arg(long)]
    pub train_size: Option<usize>,
    /// Evaluation samples.
    #[arg(long)]
    pub test_size: Option<usize>,
}

/// Process exit status per error class.
pub mod exit {
    pub const USAGE: u8 = 2;
    pub const CONFIG: u8 = 3;
    pub const DATA: u8 = 4;
    pub const WEIGHTS: u8 = 5;
    pub const DIVERGED: u8 = 6;
    pub const COMPUTE: u8 = 7;
    pub const ANALYSIS: u8 = 8;
    pub const IO: u8 = 9;
    /// The command ran but its check did not pass.
    pub const CHECK_FAILED: u8 = 10;
}

fn exit_code(e: &anyhow::Error) -> u8 {
    use modcnn::Error as E;
    if e.is::<commands::CheckFailed>() {
        return exit::CHECK_FAILED;
    }
    match e.downcast_ref::<E>() {
        Some(E::Config(_) | E::UnknownName(_)) => exit::CONFIG,
        Some(E::Data { .. } | E::Dataset(_)) => exit::DATA,
        Some(E::WeightFormat(_)) => exit::WEIGHTS,
        Some(E::Divergence { .. }) => exit::DIVERGED,
        Some(E::Tensor(_) | E::Layer { .. } | E::Mechanism(_)) => exit::COMPUTE,
        Some(E::Analysis(_)) => exit::ANALYSIS,
        Some(E::Io(_) | E::Csv(_)) => exit::IO,
        None if e.downcast_ref::<std::io::Error>().is_some() => exit::IO,
        None if e.downcast_ref::<serde_json::Error>().is_some() => exit::CONFIG,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(exit::USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
