//! `drst`: run the toy style-transfer pipeline one stage at a time.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime failure.

mod config;
mod report;
mod run;
mod stages;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use drst::error::Error;
use drst::rewards::StrategyKind;

use crate::config::RunConfig;
use crate::run::RunDir;
use crate::stages::Ctx;

#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Runtime(String),
    /// `report` found no inputs; not an error.
    NothingToReport(String),
}

impl Failure {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Failure::Runtime(format!("{}: {e}", path.display()))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Invalid(_) | Error::TooLong { .. } => Failure::Validation(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "drst", version, about = "Dense token-level rewards for RL text style transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults apply to omitted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; also selects the run directory.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory holding the run directories.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Redo a completed stage or replace a run's configuration.
    #[arg(long, global = true)]
    force: bool,
    /// dense | rollout | dense-attention | naive-sparse. For transfer and
    /// evaluate, selects the RL-trained policy instead of the pretrained one.
    #[arg(long, global = true)]
    strategy: Option<StrategyKind>,
    /// Write per-token reward traces of every RL episode.
    #[arg(long, global = true)]
    debug_rewards: bool,
    /// Records file (one `{"text", "style"}` object per line) to transfer
    /// instead of the test split.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate the toy corpus, vocabulary and gold transfers.
    GenData,
    /// Train the reward and evaluation classifiers.
    PretrainClassifier,
    /// Pick the style-attribution head by leave-one-out.
    SelectHead,
    /// Train the reward and evaluation language models.
    PretrainLm,
    /// Build the pseudo-parallel pre-training pairs.
    SynthParallel,
    /// MLE-pretrain the policy on the pseudo-parallel pairs.
    PretrainPolicy,
    /// REINFORCE fine-tuning with the configured reward strategy.
    TrainRl,
    /// Greedy transfer of the test split or `--input`.
    Transfer,
    /// Style accuracy, BLEU against gold and perplexity on the test split.
    Evaluate,
    /// CSV tables and SVG charts over all runs with this config name.
    Report,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = RunConfig::load(cli.config.as_deref())?.with_seed(cli.seed);
    config.validate()?;
    let run = RunDir::new(&cli.out, &config);
    run.prepare(&config, cli.force)?;
    let ctx = Ctx {
        config,
        run,
        out: cli.out,
        force: cli.force,
        strategy: cli.strategy,
        debug_rewards: cli.debug_rewards,
        input: cli.input,
    };
    match cli.command {
        Command::GenData => stages::gen_data(&ctx),
        Command::PretrainClassifier => stages::pretrain_classifier(&ctx),
        Command::SelectHead => stages::select_head(&ctx),
        Command::PretrainLm => stages::pretrain_lm(&ctx),
        Command::SynthParallel => stages::synth_parallel(&ctx),
        Command::PretrainPolicy => stages::pretrain_policy(&ctx),
        Command::TrainRl => stages::train_rl(&ctx),
        Command::Transfer => stages::transfer(&ctx),
        Command::Evaluate => stages::evaluate(&ctx),
        Command::Report => stages::report(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::NothingToReport(msg)) => {
            println!("nothing to report: {msg}");
            ExitCode::SUCCESS
        }
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
