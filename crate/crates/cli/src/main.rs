//! `flowdistill`: config-driven pipeline for training MAF teachers,
//! distilling IAF students, and evaluating both on synthetic calorimeter
//! responses.
//!
//! Exit codes: 0 success, 1 I/O or internal error, 2 configuration error,
//! 3 missing prerequisite artifact, 4 non-finite loss abort, 5 malformed
//! data file, 6 benchmark below the asserted speedup floor.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flowdistill_core::flow::Variant;
use flowdistill_core::Error;

use commands::Stage;
use config::FileConfig;

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Config(String),
    MissingArtifact(PathBuf),
    BenchBelowFloor { speedup: f64, floor: f64 },
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::MissingArtifact(p) => {
                write!(f, "missing prerequisite artifact: {}", p.display())
            }
            CliError::BenchBelowFloor { speedup, floor } => {
                write!(f, "benchmark speedup {speedup:.1}x below asserted floor {floor:.1}x")
            }
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(Error::Config(_)) | CliError::Config(_) => 2,
            CliError::MissingArtifact(_) => 3,
            CliError::Core(Error::NanAbort { .. }) => 4,
            CliError::Core(Error::Format { .. }) => 5,
            CliError::BenchBelowFloor { .. } => 6,
            CliError::Core(_) => 1,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "flowdistill",
    about = "Normalizing-flow teacher-student pipeline for calorimeter response surrogates"
)]
struct Cli {
    /// Pipeline configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config variant (bs, bs+div, bs+ch, bs+ch+div).
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and write the three splits.
    GenData,
    /// Train the MAF teacher on the train split.
    TrainTeacher,
    /// Distill an IAF student from the trained teacher.
    Distill,
    /// Generate responses from a trained model into a dataset file.
    Sample {
        /// Checkpoint to sample from (default: student if present, else teacher).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Number of responses to generate.
        #[arg(long, default_value_t = 1000)]
        count: usize,
    },
    /// Run the metric battery against the test split.
    Eval {
        /// Checkpoint to evaluate (default: student if present, else teacher).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Compare the reference set against itself (metrics must be zero).
        #[arg(long)]
        self_check: bool,
        /// Dump per-channel values as CSV for external plotting.
        #[arg(long)]
        dump_channels: Option<PathBuf>,
    },
    /// Time MAF vs IAF sampling.
    Bench {
        /// Exit nonzero if the speedup is below the configured floor.
        #[arg(long)]
        assert: bool,
    },
}

fn init_thread_pool() {
    let threads = std::env::var("FLOWDISTILL_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0);
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let mut config = FileConfig::load(config_path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(variant) = &cli.variant {
        Variant::parse(variant)?;
        config.loss.variant = variant.clone();
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    config.validate()?;

    let stage = Stage::new(&config)?;
    let variant = Variant::parse(&config.loss.variant)?;
    match cli.command {
        Command::GenData => stage.gen_data(),
        Command::TrainTeacher => stage.train_teacher(),
        Command::Distill => stage.distill(variant),
        Command::Sample { model, count } => stage.sample(model.as_deref(), variant, count),
        Command::Eval {
            model,
            self_check,
            dump_channels,
        } => stage.eval(model.as_deref(), variant, self_check, dump_channels.as_deref()),
        Command::Bench { assert } => stage.bench(assert),
    }
}

fn main() -> ExitCode {
    init_thread_pool();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
