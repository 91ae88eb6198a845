//! `vrnet`: generate data, train, prune, evaluate and plot.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! runtime failures.

mod commands;
mod plot;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vrnet_core::network::Variant;
use vrnet_core::Exec;

#[derive(Parser, Debug)]
#[command(name = "vrnet", version, about = "Near-field XL-MIMO channel estimation experiments")]
pub struct Cli {
    /// Default root for outputs whose path is not given.
    #[arg(long, global = true, env = "VRNET_OUT", default_value = "runs")]
    pub out_root: PathBuf,

    /// Run every batch on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate train/val/test channel sets and their observations.
    Gen(GenArgs),
    /// Train an estimator and write a checkpoint.
    Train(TrainArgs),
    /// Prune a trained checkpoint and fine-tune the survivors.
    Prune(PruneArgs),
    /// Sweep SNR or pilot count and write a results CSV.
    Eval(EvalArgs),
    /// Render a results CSV as SVG.
    Plot(PlotArgs),
    /// Print the parameter census of a checkpoint.
    Params(ParamsArgs),
    /// Dump the per-layer iterates for one test sample.
    Trace(TraceArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Config file, or a preset name (`desk`, `large`).
    #[arg(long, default_value = "desk")]
    pub config: String,
    /// Output directory [default: <root>/data].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantArg {
    Full,
    Ablation,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::Ablation => Variant::Ablation,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory [default: <root>/data].
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Config file or preset [default: the one stored with the data].
    #[arg(long)]
    pub config: Option<String>,
    #[arg(long, value_enum, default_value = "full")]
    pub variant: VariantArg,
    /// Override the number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Checkpoint directory [default: <root>/ckpt or <root>/ckpt-ablation].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from the checkpoint already in `--out`.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many epochs of this invocation; `--resume` continues.
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PruneArgs {
    /// Trained checkpoint [default: <root>/ckpt].
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    /// Fine-tuning epochs.
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    /// Initial fine-tuning rate [default: a quarter of the training rate].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Output checkpoint [default: <root>/ckpt-pruned].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepArg {
    Snr,
    Pilots,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoints to evaluate; repeatable [default: <root>/ckpt and
    /// <root>/ckpt-ablation].
    #[arg(long = "model")]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<String>,
    #[arg(long, value_enum, default_value = "snr")]
    pub sweep: SweepArg,
    /// Comma-separated SNR points in dB (SNR sweep).
    #[arg(long, value_delimiter = ',')]
    pub snr_list: Option<Vec<f64>>,
    /// Comma-separated pilot counts (pilot sweep).
    #[arg(long, value_delimiter = ',')]
    pub pilot_list: Option<Vec<usize>>,
    /// Fixed SNR of the pilot sweep.
    #[arg(long)]
    pub snr: Option<f64>,
    /// Pilot count of the SNR sweep.
    #[arg(long)]
    pub pilots: Option<usize>,
    /// Leave out the genie least-squares reference.
    #[arg(long)]
    pub no_genie: bool,
    /// Results CSV [default: <root>/results-<sweep>.csv].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Results CSV [default: <root>/results-snr.csv].
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// SVG file [default: the results path with an `.svg` extension].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ParamsArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Emit CSV instead of a table.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Args, Debug)]
pub struct TraceArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<String>,
    /// Test sample index.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Observation SNR [default: the config's pilot SNR].
    #[arg(long)]
    pub snr: Option<f64>,
    /// Output CSV [default: <root>/trace-<index>.csv].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<vrnet_core::Error> for Failure {
    fn from(e: vrnet_core::Error) -> Self {
        match e {
            vrnet_core::Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    let res = match &cli.cmd {
        Command::Gen(a) => commands::gen(&cli.out_root, a, exec),
        Command::Train(a) => commands::train(&cli.out_root, a, exec),
        Command::Prune(a) => commands::prune(&cli.out_root, a, exec),
        Command::Eval(a) => commands::eval(&cli.out_root, a, exec),
        Command::Plot(a) => commands::plot(&cli.out_root, a),
        Command::Params(a) => commands::params(&cli.out_root, a),
        Command::Trace(a) => commands::trace(&cli.out_root, a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
