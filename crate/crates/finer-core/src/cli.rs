//! Command-line front end. Every command takes `--config`, optional
//! `--seed`/`--out` overrides, and holds a lock on the output directory
//! while it runs. `FINER_LOG` controls log verbosity. Exit codes: 0 ok,
//! 2 config error, 3 data error, 4 runtime error.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::ensemble::Scenario;
use crate::error::Result;
use crate::pipeline::{self, DirLock, ModelTag, Paths};

#[derive(Debug, Parser)]
#[command(
    name = "finer",
    about = "Explainable risk detection benchmark: dataset, training, IC-level explanation ensembles, fidelity evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sample-level parallelism (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic dataset with planted ground truth.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the baseline classifier.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Update the classifier with explanation-guided multi-task learning.
    Finetune {
        #[command(flatten)]
        common: Common,
    },
    /// Write per-sample explanation records for a scenario.
    Explain {
        #[command(flatten)]
        common: Common,
        /// Which model to explain.
        #[arg(long, default_value = "finetuned")]
        model: String,
        /// Scenario (black-box, low-cost, unlimited); all configured
        /// scenarios when omitted.
        #[arg(long)]
        scenario: Option<String>,
        /// Workload override (components per explanation).
        #[arg(long)]
        k: Option<usize>,
    },
    /// Compute fidelity tables, curves, and localization AUC from records.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "finetuned")]
        model: String,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Paired comparisons: with/without updating, naive vs weighted
    /// ensembling, IC abstraction, perturbation cost.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Assemble the summary report from the emitted artifacts.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        k: Option<usize>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenData { common }
            | Command::Train { common }
            | Command::Finetune { common }
            | Command::Explain { common, .. }
            | Command::Eval { common, .. }
            | Command::Ablate { common, .. }
            | Command::Report { common, .. } => common,
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn scenarios_for(cfg: &ExperimentConfig, flag: &Option<String>) -> Result<Vec<Scenario>> {
    match flag {
        Some(s) => Ok(vec![Scenario::parse(s)?]),
        None => cfg.scenarios(),
    }
}

fn dispatch(command: &Command) -> Result<()> {
    let common = command.common();
    if common.jobs > 0 {
        // Ignore failure when a pool is already configured (tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(common.jobs)
            .build_global();
    }
    let cfg = load_config(common)?;
    let paths = Paths::new(&cfg.out_dir);
    let _lock = DirLock::acquire(&paths)?;
    match command {
        Command::GenData { .. } => pipeline::run_gen_data(&cfg),
        Command::Train { .. } => pipeline::run_train(&cfg),
        Command::Finetune { .. } => pipeline::run_finetune(&cfg),
        Command::Explain { model, scenario, k, .. } => {
            let tag = ModelTag::parse(model)?;
            let k = k.unwrap_or(cfg.explain.k);
            for scenario in scenarios_for(&cfg, scenario)? {
                pipeline::run_explain(&cfg, tag, scenario, k)?;
            }
            Ok(())
        }
        Command::Eval { model, scenario, k, .. } => {
            let tag = ModelTag::parse(model)?;
            let k = k.unwrap_or(cfg.explain.k);
            for scenario in scenarios_for(&cfg, scenario)? {
                pipeline::run_eval(&cfg, tag, scenario, k)?;
            }
            Ok(())
        }
        Command::Ablate { k, .. } => pipeline::run_ablate(&cfg, k.unwrap_or(cfg.explain.k)),
        Command::Report { k, .. } => pipeline::run_report(&cfg, k.unwrap_or(cfg.explain.k)),
    }
}

/// Entry point used by the `finer` binary. Returns the process exit code
/// and prints one machine-readable line to stderr on failure.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::new().filter("FINER_LOG"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!(
                "error kind={} code={} msg={:?}",
                err.kind(),
                err.exit_code(),
                err.to_string()
            );
            err.exit_code()
        }
    }
}
