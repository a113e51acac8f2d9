//! `slicepool` command-line driver.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use slicepool::architecture::{Reduction, Variant};
use slicepool::data::{SignalKind, Split};

use config::{parse_name, BackboneName};

/// Invalid flags, config or inputs: exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(
    name = "slicepool",
    version,
    about = "2.5D volume classification with attention pooling over slices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic planted-signal dataset (RVF volumes + manifest.json).
    GenData(GenDataArgs),
    /// Train one model per seed and write reports and checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Print the trainable parameter count of a model spec.
    Params(ParamsArgs),
    /// Export the attention map (or a HiResCam volume) for one volume.
    Explain(ExplainArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Cubic volume side (at least 8). [default: 16]
    #[arg(long)]
    pub shape: Option<usize>,
    /// Volumes per class. [default: 200]
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Generator seed. [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Signal geometry: slab or cube. [default: slab]
    #[arg(long, value_parser = parse_name::<SignalKind>)]
    pub signal_kind: Option<SignalKind>,
    /// Blob thickness / side in voxels. [default: shape / 8]
    #[arg(long)]
    pub blob_side: Option<usize>,
    /// Blob amplitude added to the background. [default: 0.8]
    #[arg(long)]
    pub amplitude: Option<f32>,
    /// Gaussian noise standard deviation. [default: 0.1]
    #[arg(long)]
    pub noise_sigma: Option<f32>,
}

/// Model selection flags shared by train and params.
#[derive(Args, Debug, Default)]
pub struct ModelArgs {
    /// slice2p5d, conv3d or acs. [default: slice2p5d]
    #[arg(long, value_parser = parse_name::<Variant>)]
    pub variant: Option<Variant>,
    /// tiny_cnn or resnet18_shape. [default: tiny_cnn]
    #[arg(long, value_parser = parse_name::<BackboneName>)]
    pub backbone: Option<BackboneName>,
    /// tiny_cnn stage widths, comma separated. [default: 8,16,32]
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    /// attention_pool, average, max, lstm or transformer. [default: attention_pool]
    #[arg(long, value_parser = parse_name::<Reduction>)]
    pub reduction: Option<Reduction>,
    /// Attention heads. [default: 8]
    #[arg(long)]
    pub heads: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset manifest (required here or in the config).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory (required here or in the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Training epochs. [default: 50]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// NAdam learning rate. [default: 0.0002]
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    /// Batch size. [default: 64]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial epochs with a frozen backbone. [default: 2]
    #[arg(long)]
    pub freeze_epochs: Option<usize>,
    /// Seeds, comma separated, one run each. [default: 0,1,2,3,4]
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Model checkpoint (.spm).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// train, val or test. [default: test]
    #[arg(long, value_parser = parse_name::<Split>)]
    pub split: Option<Split>,
    /// Batch size. [default: 64]
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ParamsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Classifier outputs. [default: 2]
    #[arg(long)]
    pub classes: Option<usize>,
    /// Input channels. [default: 1]
    #[arg(long)]
    pub in_channels: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    /// Model checkpoint (.spm).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output path prefix; files get suffixes such as `.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Volume id to explain. [default: first volume of --split]
    #[arg(long)]
    pub id: Option<String>,
    /// Split to pick the default volume from. [default: test]
    #[arg(long, value_parser = parse_name::<Split>)]
    pub split: Option<Split>,
    /// Write a HiResCam attribution volume (conv3d and acs models).
    #[arg(long)]
    pub hirescam: bool,
    /// HiResCam layer. [default: last backbone layer]
    #[arg(long)]
    pub layer: Option<String>,
    /// HiResCam target class. [default: predicted class]
    #[arg(long)]
    pub target_class: Option<usize>,
    /// Clamp HiResCam attributions at zero.
    #[arg(long)]
    pub clamp: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Params(a) => commands::params(a),
        Command::Explain(a) => commands::explain(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
