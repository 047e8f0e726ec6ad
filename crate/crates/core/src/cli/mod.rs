//! Command-line front end.

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::run;

/// Process exit statuses.
pub mod exit {
    pub const OK: u8 = 0;
    pub const VALIDATION: u8 = 1;
    pub const RUNTIME: u8 = 2;
    pub const THRESHOLD: u8 = 3;
}

#[derive(Parser, Debug)]
#[command(name = "crosslink", version, about = "Double-branch segmentation engine: data, training, evaluation, checks")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Seed for every random choice; a fresh one is generated and printed when omitted.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print the resolved configuration and exit without writing anything.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Allow overwriting existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    GenData {
        /// Generator settings (key = value); defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network; writes best.ckpt, last.ckpt, runlog.jsonl and timing.jsonl.
    Train {
        /// Training settings (key = value); desk-scale defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a last.ckpt written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on one split of a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = ',')]
        delimiter: char,
    },
    /// Segment one PGM image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth mask; when given, the DSC of the prediction is printed.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
    },
    /// Finite-difference gradient checks at 64-bit precision.
    Gradcheck {
        #[arg(long, default_value = "op")]
        scope: String,
        /// Debug hook: scale the backward pass of the named op to corrupt its gradient.
        #[arg(long)]
        fault: Option<String>,
        /// Network used by the `net` scope.
        #[arg(long, default_value = "crosslink")]
        variant: String,
        #[arg(long, default_value_t = 32)]
        base_width: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = crosslink::gradcheck::NET_SAMPLES)]
        samples: usize,
    },
    /// Train one run per loss-weight row and tabulate test metrics.
    AblateLambda {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = ',')]
        delimiter: char,
    },
    /// Train one run per architecture variant and tabulate test metrics and sizes.
    AblateArch {
        /// Comma-separated variant names, or `all`.
        #[arg(long)]
        variants: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = ',')]
        delimiter: char,
    },
    /// Summarise a run log: per-case table and area-stratified DSC.
    Report {
        #[arg(long)]
        runlog: PathBuf,
        /// Bin edges in percent of image area.
        #[arg(long, value_delimiter = ',', default_value = "0,0.6,2,100")]
        bins: Vec<f64>,
        #[arg(long, default_value_t = ',')]
        delimiter: char,
    },
    /// Print per-block parameter counts of every variant.
    Params {
        #[arg(long, default_value_t = crosslink::net::spec::DEFAULT_BASE_WIDTH)]
        base_width: usize,
    },
}
