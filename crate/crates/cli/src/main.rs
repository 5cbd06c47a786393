//! `lifmixer`: gradient checks, budget counts, training, evaluation,
//! kernel timing and feature export.

mod bench;
mod check;
mod count;
mod export;
mod run;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lifmixer::{DType, Error};

/// Exit status contract.
pub const EXIT_FAIL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "lifmixer",
    version,
    about = "Full-precision group LIF token mixing: checks, counts, training"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// key=value config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "LIFMIXER_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_parser = parse_dtype)]
    pub dtype: Option<DType>,
    /// Extra config override, repeatable: --set key=value.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

fn parse_dtype(s: &str) -> Result<DType, String> {
    DType::parse(s).ok_or_else(|| format!("unknown dtype {s:?} (expected f32 or f64)"))
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Finite-difference checks of every backward pass (always in f64).
    Gradcheck(check::GradcheckArgs),
    /// Parameter and FLOP counts against the reference budgets.
    Count(count::CountArgs),
    /// Train on synthetic data or CIFAR-10.
    Train(train::TrainArgs),
    /// Top-1 accuracy of a checkpoint.
    Eval(train::EvalArgs),
    /// Time a kernel across group sizes.
    Bench(bench::BenchArgs),
    /// Dump an intermediate activation as a LIFT tensor.
    ExportFeatures(export::ExportArgs),
}

/// Failure carrying its exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub msg: String,
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            msg: msg.into(),
        }
    }

    pub fn check(msg: impl Into<String>) -> Self {
        Failure {
            code: EXIT_FAIL,
            msg: msg.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } | Error::Parse { .. } => EXIT_IO,
            Error::InvalidArgument(_) | Error::ShapeMismatch { .. } => EXIT_USAGE,
            Error::NonFinite { .. }
            | Error::MarginNotFound { .. }
            | Error::NonFiniteLoss { .. } => EXIT_FAIL,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

pub type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let res = match &cli.cmd {
        Command::Gradcheck(a) => check::run(&cli.global, a),
        Command::Count(a) => count::run(&cli.global, a),
        Command::Train(a) => train::run_train(&cli.global, a),
        Command::Eval(a) => train::run_eval(&cli.global, a),
        Command::Bench(a) => bench::run(&cli.global, a),
        Command::ExportFeatures(a) => export::run(&cli.global, a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
