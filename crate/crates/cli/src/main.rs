//! `crashcast`: generate synthetic scenarios, train the risk model and
//! evaluate it.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.

mod commands;
mod io;
mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use settings::{layered, EvalSettings, GenSettings, SplitChoice, TrainSettings};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "crashcast", version, about = "Synthetic accident-anticipation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a JSON-lines scenario dataset.
    GenData(GenArgs),
    /// Train the risk model on a dataset.
    Train(TrainArgs),
    /// Score a checkpoint: report JSON plus per-frame risk curves.
    Eval(EvalArgs),
}

#[derive(Args)]
struct Common {
    /// JSON file with settings; keys are flag names with underscores.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads for data-parallel stages.
    #[arg(long)]
    jobs: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    positive_ratio: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint path; logs and config are written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from an existing checkpoint at `--out`.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Report JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Risk-curve CSV path; defaults to `<out>.curves.csv`.
    #[arg(long)]
    curves: Option<PathBuf>,
    /// Decision level for per-video trigger frames.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_enum)]
    split: Option<SplitChoice>,
    #[command(flatten)]
    common: Common,
}

macro_rules! overlay {
    ($s:ident, $a:expr; $($f:ident),*) => {
        $(if let Some(v) = $a.$f.clone() { $s.$f = v.into(); })*
    };
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(a) => {
            let mut s = layered(GenSettings::default(), a.common.config.as_deref())?;
            overlay!(s, a; network, count, positive_ratio, seed, out);
            overlay!(s, a.common; jobs);
            s.force |= a.common.force;
            commands::gen_data(&s)
        }
        Command::Train(a) => {
            let mut s = layered(TrainSettings::default(), a.common.config.as_deref())?;
            overlay!(s, a; data, epochs, seed, out, batch_size, learning_rate);
            overlay!(s, a.common; jobs);
            s.force |= a.common.force;
            s.resume |= a.resume;
            commands::train(&s)
        }
        Command::Eval(a) => {
            let mut s = layered(EvalSettings::default(), a.common.config.as_deref())?;
            overlay!(s, a; checkpoint, data, out, curves, threshold, split);
            overlay!(s, a.common; jobs);
            s.force |= a.common.force;
            commands::eval(&s)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("crashcast: {e}");
            ExitCode::from(e.code())
        }
    }
}
