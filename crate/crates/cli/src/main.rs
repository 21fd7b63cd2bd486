mod angles;
mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use riconv_core::calib::CalibratorKind;
use riconv_core::data::FixtureKind;
use riconv_core::nn::Architecture;
use riconv_core::{Error, Precision};

/// Rotation-invariant convolutions: train, sweep, verify, bench.
#[derive(Debug, Parser)]
#[command(name = "riconv", version)]
struct Cli {
    /// Caps the worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a network and write its checkpoint, epoch log and manifest.
    Train(TrainArgs),
    /// Accuracy of a checkpoint on rotated copies of the test set.
    Sweep(SweepArgs),
    /// Run the oracle suite; exits 1 if any check fails.
    Verify(VerifyArgs),
    /// Time the plain convolution against every RIConv.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON training config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    calibrator: Option<CalibratorKind>,
    #[arg(long)]
    arch: Option<Architecture>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    lr_interval: Option<usize>,
    #[arg(long)]
    train_size: Option<usize>,
    /// Rotate every training image by a fresh uniform angle each epoch.
    #[arg(long)]
    augment_rotate: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_precision)]
    precision: Option<Precision>,
    /// Directory holding the MNIST IDX files (plain or gzip).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Train on a synthetic fixture instead of MNIST.
    #[arg(long)]
    fixture: Option<FixtureKind>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write 0 in the `seconds` column so repeated runs give identical logs.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Inclusive `start:stop:step` in degrees.
    #[arg(long, default_value = "0:350:10")]
    angles: String,
    /// Use only the first N test images.
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long, default_value = "data/mnist")]
    data_dir: PathBuf,
    /// Sweep a synthetic fixture instead of the MNIST test set.
    #[arg(long)]
    fixture: Option<FixtureKind>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "runs/sweep.csv")]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Only checks carrying one of these tags (group names or calibrator ids).
    #[arg(long, value_delimiter = ',')]
    only: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    pairs: usize,
    #[arg(long, default_value_t = 100)]
    patches: usize,
    /// Corrupt one Sobel weight (the equivariance checks of `sb` must fail).
    #[arg(long, hide = true)]
    mutate_sobel: bool,
    #[arg(long, default_value = "runs/verify")]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 64)]
    h: usize,
    #[arg(long, default_value_t = 64)]
    w: usize,
    #[arg(long, default_value_t = 16)]
    c_in: usize,
    #[arg(long, default_value_t = 16)]
    c_out: usize,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "runs/bench.csv")]
    out: PathBuf,
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    match s {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        _ => Err(format!("unknown precision `{s}`; expected f32 or f64")),
    }
}

/// What went wrong, mapped onto the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Some check or the run itself failed (exit 1).
    Check(String),
    /// Bad arguments or configuration (exit 2).
    Usage(String),
    /// A file could not be read or written (exit 3).
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Format { .. } | Error::Csv(_) => Failure::Io(e.to_string()),
            Error::InvalidConfig(_)
            | Error::UnknownCalibrator(_)
            | Error::UnknownFixture(_)
            | Error::UnsupportedKernel(_)
            | Error::DuplicateAngle(_)
            | Error::Json(_) => Failure::Usage(e.to_string()),
            other => Failure::Check(other.to_string()),
        }
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Io(_) => 3,
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Verify(a) => commands::verify(a),
        Command::Bench(a) => commands::bench(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Check(m) | Failure::Usage(m) | Failure::Io(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
