//! `gnlaw`: simulate systems, train graph networks on them, and read the
//! learned interaction laws back out.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or
//! configuration errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Experiment, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "gnlaw", version, about = "Graph-network force-law discovery pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; every stage derives its own seed from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a trajectory dataset (dataset.jsonl).
    Simulate {
        #[arg(long, value_enum)]
        experiment: Option<Experiment>,
        #[arg(long)]
        sims: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        bodies: Option<usize>,
    },
    /// Train a graph network (checkpoint.json, loss.csv).
    Train {
        #[arg(long, value_name = "PATH")]
        dataset: PathBuf,
        /// Message length L^e′.
        #[arg(long)]
        message_dim: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        hidden_layers: Option<usize>,
        /// Optimizer steps.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        eval_interval: Option<usize>,
        /// Continue from an existing checkpoint instead of a fresh init.
        #[arg(long, value_name = "PATH")]
        init: Option<PathBuf>,
    },
    /// Record messages and fit them against true forces
    /// (messages.csv, linear_fit.csv).
    Analyze {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH")]
        dataset: PathBuf,
        #[arg(long)]
        max_rows: Option<usize>,
    },
    /// Symbolic regression on one message component
    /// (front_msg<i>.csv, selected_msg<i>.txt).
    Symreg {
        #[arg(long, value_name = "PATH")]
        messages: PathBuf,
        #[arg(long)]
        component: usize,
        #[arg(long)]
        population: Option<usize>,
        #[arg(long)]
        generations: Option<usize>,
        #[arg(long)]
        max_rows: Option<usize>,
    },
    /// Evaluate checkpoints across body counts (sweep.csv).
    Generalize {
        /// Checkpoint files, one sweep row each.
        #[arg(long = "checkpoint", value_name = "PATH", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long, value_enum)]
        experiment: Option<Experiment>,
        /// Comma-separated body counts, one sweep column each.
        #[arg(long, value_delimiter = ',')]
        bodies: Option<Vec<usize>>,
        #[arg(long)]
        sims: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
    },
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<gnlaw_core::Error> for Failure {
    fn from(e: gnlaw_core::Error) -> Self {
        match e {
            gnlaw_core::Error::Config(msg) => Failure::Usage(msg),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, cli.common.seed);
    if cli.common.out.is_some() {
        cfg.out = cli.common.out;
    }
    match cli.command {
        Command::Simulate {
            experiment,
            sims,
            steps,
            bodies,
        } => {
            if experiment.is_some() {
                cfg.experiment = experiment;
            }
            set(&mut cfg.simulate.sims, sims);
            set(&mut cfg.simulate.steps, steps);
            if bodies.is_some() {
                cfg.simulate.bodies = bodies;
            }
            commands::simulate(&cfg)
        }
        Command::Train {
            dataset,
            message_dim,
            hidden,
            hidden_layers,
            steps,
            batch_size,
            learning_rate,
            eval_interval,
            init,
        } => {
            if message_dim.is_some() {
                cfg.model.message_dim = message_dim;
            }
            if hidden.is_some() {
                cfg.model.hidden = hidden;
            }
            if hidden_layers.is_some() {
                cfg.model.hidden_layers = hidden_layers;
            }
            set(&mut cfg.train.steps, steps);
            set(&mut cfg.train.batch_size, batch_size);
            set(&mut cfg.train.learning_rate, learning_rate);
            set(&mut cfg.train.eval_interval, eval_interval);
            commands::train(&cfg, &dataset, init.as_deref())
        }
        Command::Analyze {
            checkpoint,
            dataset,
            max_rows,
        } => {
            set(&mut cfg.analyze.max_rows, max_rows);
            commands::analyze(&cfg, &checkpoint, &dataset)
        }
        Command::Symreg {
            messages,
            component,
            population,
            generations,
            max_rows,
        } => {
            set(&mut cfg.symreg.gp.population, population);
            set(&mut cfg.symreg.gp.generations, generations);
            set(&mut cfg.symreg.max_rows, max_rows);
            commands::symreg(&cfg, &messages, component)
        }
        Command::Generalize {
            checkpoints,
            experiment,
            bodies,
            sims,
            steps,
        } => {
            if experiment.is_some() {
                cfg.experiment = experiment;
            }
            set(&mut cfg.generalize.body_counts, bodies);
            set(&mut cfg.generalize.sims, sims);
            set(&mut cfg.generalize.steps, steps);
            commands::generalize(&cfg, &checkpoints)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
