//! `qualgauss` command line: synthesize data, train heads, evaluate them and
//! run multi-seed batteries.
//!
//! Settings come from built-in defaults, then an optional `--config` file,
//! then flags, each layer overriding the previous one.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "qualgauss", version, about = "Multivariate Gaussian regression of speech quality scores")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with known mean function and noise covariance.
    Synth(SynthArgs),
    /// Train a head and write its checkpoint and per-epoch trace.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write report tables and optional diagnostics.
    Eval(EvalArgs),
    /// Train and evaluate several seeds, then report mean ± sample std.
    Battery(BatteryArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of training samples
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    /// Feature dimension
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    pub d: u64,
    /// Seed for weights, features and noise
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; receives train.csv, ground_truth.txt and optionally holdout.csv
    #[arg(long)]
    pub out: PathBuf,
    /// Label noise standard deviation, the same for every dimension
    #[arg(long, default_value_t = 0.5)]
    pub noise_std: f64,
    /// Correlation of the strongest label pair, MOS and NOI
    #[arg(long, default_value_t = 0.6)]
    pub max_corr: f64,
    /// Scale of the mean-function weights
    #[arg(long, default_value_t = 1.0)]
    pub weight_scale: f64,
    /// Also write this many holdout samples from the same ground truth
    #[arg(long, default_value_t = 0)]
    pub holdout: usize,
}

/// Every key of the run configuration as an optional override.
#[derive(Debug, Args, Default)]
pub struct RunFlags {
    /// key=value configuration file; flags override its entries
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training dataset (CSV)
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Validation dataset (CSV)
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Checkpoint path [default: model.ckpt]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Trace path [default: <checkpoint>.trace.tsv]
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Directory for reports [default: reports]
    #[arg(long)]
    pub report_dir: Option<PathBuf>,
    /// Head variant: full, independent or mse [default: full]
    #[arg(long)]
    pub variant: Option<String>,
    /// Hidden layer widths, comma-separated; empty for a linear head [default: 256,64]
    #[arg(long)]
    pub hidden_dims: Option<String>,
    /// Dropout rate on hidden activations [default: 0]
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Seed for initialisation, shuffling and dropout [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Adam learning rate [default: 0.0001]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Adam first-moment decay [default: 0.9]
    #[arg(long)]
    pub beta1: Option<f64>,
    /// Adam second-moment decay [default: 0.999]
    #[arg(long)]
    pub beta2: Option<f64>,
    /// Adam epsilon [default: 1e-8]
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Training epochs [default: 30]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Use A = I, b = 0 instead of the 1..5 label-scale map [default: false]
    #[arg(long)]
    pub no_affine: bool,
    /// Reject labels outside [1, 5] instead of warning [default: false]
    #[arg(long)]
    pub strict: bool,
}

impl RunFlags {
    /// Defaults, then the config file, then explicit flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let overrides: [(&str, Option<String>); 15] = [
            ("train", path(&self.train)),
            ("val", path(&self.val)),
            ("checkpoint", path(&self.checkpoint)),
            ("trace", path(&self.trace)),
            ("report_dir", path(&self.report_dir)),
            ("variant", self.variant.clone()),
            ("hidden_dims", self.hidden_dims.clone()),
            ("dropout", self.dropout.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("learning_rate", self.learning_rate.map(|v| v.to_string())),
            ("beta1", self.beta1.map(|v| v.to_string())),
            ("beta2", self.beta2.map(|v| v.to_string())),
            ("epsilon", self.epsilon.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        if self.no_affine {
            cfg.no_affine = true;
        }
        if self.strict {
            cfg.strict = true;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunFlags,
    /// Dataset to evaluate [default: val, else train]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Write predicted-correlation scatter for a label pair, e.g. mos,noi
    #[arg(long)]
    pub scatter: Option<String>,
    /// Write the marginal density grid of one sample's prediction for a label pair, e.g. mos,noi
    #[arg(long)]
    pub grid: Option<String>,
    /// Index of the sample whose prediction the grid shows
    #[arg(long, default_value_t = 0)]
    pub grid_sample: usize,
    /// Grid points per axis
    #[arg(long, default_value_t = 101)]
    pub grid_res: usize,
    /// Grid half-width in marginal standard deviations
    #[arg(long, default_value_t = 6.0)]
    pub grid_width: f64,
}

#[derive(Debug, Args)]
pub struct BatteryArgs {
    #[command(flatten)]
    pub run: RunFlags,
    /// Number of runs; run k uses seed + k
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(2..))]
    pub runs: u64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a.run.resolve()?).map(|_| ()),
        Command::Eval(a) => commands::eval(&a),
        Command::Battery(a) => commands::battery(&a.run.resolve()?, a.runs as usize).map(|_| ()),
    }
}
