//! `adn`: train, evaluate, profile and ablate adaptive depth networks.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_config_file, RunConfig};

#[derive(Parser)]
#[command(name = "adn", version, about = "Adaptive depth networks with skippable sub-paths")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train with two-pass self-distillation.
    Train(RunArgs),
    /// Evaluate one sub-network (--skip) or all of them (--all).
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint file, or the run directory holding it.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Skip string such as TFFF (T = skip the stage's skippable blocks).
        #[arg(long, conflicts_with = "all")]
        skip: Option<String>,
        #[arg(long)]
        all: bool,
    },
    /// Residual-magnitude ratio of every executed block.
    Profile {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sub-network to profile; defaults to the super-net.
        #[arg(long)]
        skip: Option<String>,
    },
    /// Train a grid of variants and compare super-net and base-net accuracy.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// table3 (distillation × skip-aware norms), table4 (teacher/student
        /// sampling) or all.
        #[arg(long, default_value = "all")]
        grid: String,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

/// Flags shared by the data-driven commands. Each overrides the config file.
#[derive(Args, Default)]
struct RunArgs {
    /// `key = value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    distill_strategy: Option<String>,
    #[arg(long)]
    feature_kl: bool,
    #[arg(long)]
    kl_temperature: Option<f32>,
    #[arg(long)]
    ratio: Option<String>,
}

impl RunArgs {
    fn resolve(&self) -> adn_core::Result<RunConfig> {
        RunConfig::from_pairs(&self.pairs()?)
    }

    /// Config-file pairs followed by flag pairs.
    fn pairs(&self) -> adn_core::Result<Vec<(String, String)>> {
        let mut pairs = match &self.config {
            Some(path) => parse_config_file(path)?,
            None => Vec::new(),
        };
        let mut flag = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                pairs.push((k.to_string(), v));
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        flag("model", self.model.clone());
        flag("dataset", self.dataset.clone());
        flag("data_dir", path(&self.data_dir));
        flag("out_dir", path(&self.out_dir));
        flag("epochs", self.epochs.map(|v| v.to_string()));
        flag("batch_size", self.batch_size.map(|v| v.to_string()));
        flag("lr", self.lr.map(|v| v.to_string()));
        flag("seed", self.seed.map(|v| v.to_string()));
        flag("distill_strategy", self.distill_strategy.clone());
        flag("feature_kl", self.feature_kl.then(|| "true".into()));
        flag("kl_temperature", self.kl_temperature.map(|v| v.to_string()));
        flag("ratio", self.ratio.clone());
        Ok(pairs)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(run) => run.resolve().map_err(Into::into).and_then(|c| commands::train(&c)),
        Command::Eval {
            run,
            checkpoint,
            skip,
            all,
        } => run
            .pairs()
            .map_err(Into::into)
            .and_then(|p| commands::eval(&p, &checkpoint, skip.as_deref(), all)),
        Command::Profile {
            run,
            checkpoint,
            skip,
        } => run
            .pairs()
            .map_err(Into::into)
            .and_then(|p| commands::profile(&p, &checkpoint, skip.as_deref())),
        Command::Ablate { run, grid } => {
            run.resolve().map_err(Into::into).and_then(|c| commands::ablate(&c, &grid))
        }
        Command::Gradcheck { inject_fault } => commands::gradcheck(inject_fault.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                eprintln!("run `adn --help` for usage");
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
