//! `lnet`: generate the synthetic dataset, train the networks, detect lines
//! and score detections.

mod bench;
mod detect;
mod eval;
mod gen;
mod run;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lnet_core::Execution;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

pub const DATA_DIR_ENV: &str = "LNET_DATA_DIR";

#[derive(Parser, Debug)]
#[command(name = "lnet", version, about = "Line detection with a fast Hough transform layer")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Master seed (dataset generation, initialization, shuffling).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 gives bit-reproducible runs, 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Print a machine-readable JSON summary on stdout.
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    Gen(gen::GenArgs),
    /// Write an untrained (identity-initialized) checkpoint.
    Init(train::InitArgs),
    /// Train a network on a dataset's train split.
    Train(train::TrainArgs),
    /// Detect lines in a dataset split or a single image.
    Detect(detect::DetectArgs),
    /// Score detections against the ground truth.
    Eval(eval::EvalArgs),
    /// Time the Hough transform and print the analytic FLOP counts.
    Bench(bench::BenchArgs),
}

pub struct Context {
    pub global: GlobalArgs,
    pub exec: Execution,
}

impl Context {
    pub fn seed(&self) -> u64 {
        self.global.seed.unwrap_or(0)
    }

    /// Prints `value` as JSON with `--json`, otherwise the human text.
    pub fn report(&self, value: &serde_json::Value, human: impl FnOnce() -> String) {
        if self.global.json {
            println!("{}", serde_json::to_string_pretty(value).expect("JSON value serializes"));
        } else {
            println!("{}", human());
        }
    }
}

pub fn default_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = match lnet_core::configure_threads(cli.global.threads) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let ctx = Context {
        global: cli.global,
        exec,
    };
    let result = match cli.command {
        Command::Gen(a) => gen::run(&ctx, a),
        Command::Init(a) => train::run_init(&ctx, a),
        Command::Train(a) => train::run(&ctx, a),
        Command::Detect(a) => detect::run(&ctx, a),
        Command::Eval(a) => eval::run(&ctx, a),
        Command::Bench(a) => bench::run(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
