//! `classunlearn`: train, unlearn and evaluate class deletion from the command line.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use classunlearn::pipeline::UnlearnMethod;
use classunlearn::synth::{self, SynthConfig};

use crate::commands::Ctx;
use crate::config::{ExperimentConfig, Overrides, CONFIG_ENV};

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Validation(m) | Self::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<classunlearn::Error> for CliError {
    fn from(e: classunlearn::Error) -> Self {
        use classunlearn::Error as E;
        match e {
            E::InvalidArgument(_) | E::Parse { .. } | E::EmptyFile(_) | E::Stratify { .. } | E::EmptyVocabulary => {
                Self::Validation(e.to_string())
            }
            _ => Self::Runtime(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "classunlearn", version, about = "Class-level unlearning for TF-IDF softmax classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by the experiment subcommands. Flags override the config file.
#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML config file; falls back to $CLASSUNLEARN_CONFIG
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset file (JSONL or CSV with `text` and `label`)
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output root
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated class names or ids to delete
    #[arg(long, alias = "class", value_delimiter = ',')]
    classes: Option<Vec<String>>,
    /// Comma-separated methods: hessian, golden, random_relabel
    #[arg(long, alias = "method", value_delimiter = ',')]
    methods: Option<Vec<UnlearnMethod>>,
    /// Shadow models per attacker
    #[arg(long)]
    shadows: Option<usize>,
    /// Inverse regularization strength
    #[arg(long = "C", alias = "c")]
    c: Option<f64>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, CliError> {
        let path = self.config.clone().or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
        let mut cfg = ExperimentConfig::load(path.as_deref())?;
        cfg.apply(&Overrides {
            dataset: self.dataset.clone(),
            output: self.out.clone(),
            seeds: self.seeds.clone(),
            classes: self.classes.clone(),
            methods: self.methods.clone(),
            shadows: self.shadows,
            c: self.c,
        });
        Ok(cfg)
    }

    fn ctx(&self) -> Result<Ctx, CliError> {
        Ctx::open(self.config()?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit vocabulary and model for every seed
    Train(Common),
    /// Delete the configured classes with the configured methods
    Unlearn(Common),
    /// Delete the configured classes by retraining without them
    Retrain(Common),
    /// Accuracy, agreement and margin KS for every unlearned cell
    Evaluate(Common),
    /// Shadow-model membership attack before and after unlearning
    Mia(Common),
    /// Release-noise sweep over the configured C, tau and sigma grids
    Sweep(Common),
    /// Median wall time of hessian vs golden on the trained features
    Bench(Common),
    /// Aggregate cell metrics into report.csv, summary.csv and mia.csv
    Report(Common),
    /// Write a synthetic topic corpus as JSONL
    Synth(SynthArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output JSONL path
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    docs_per_class: Option<usize>,
    #[arg(long)]
    topic_words: Option<usize>,
    #[arg(long)]
    background_words: Option<usize>,
    #[arg(long)]
    own_topic: Option<f64>,
    #[arg(long)]
    secondary_topic: Option<f64>,
}

fn synth_cmd(a: &SynthArgs) -> Result<(), CliError> {
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        classes: a.classes.unwrap_or(d.classes),
        docs_per_class: a.docs_per_class.unwrap_or(d.docs_per_class),
        topic_words: a.topic_words.unwrap_or(d.topic_words),
        background_words: a.background_words.unwrap_or(d.background_words),
        own_topic: a.own_topic.unwrap_or(d.own_topic),
        secondary_topic: a.secondary_topic.unwrap_or(d.secondary_topic),
        ..d
    };
    let corpus = synth::generate(&cfg, a.seed)?;
    corpus.write_jsonl(&a.out)?;
    println!("wrote {} documents in {} classes to {}", corpus.len(), corpus.num_classes(), a.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(c) => commands::train(&c.ctx()?),
        Command::Unlearn(c) => {
            let ctx = c.ctx()?;
            let methods = ctx.cfg.experiment.methods.clone();
            commands::unlearn(&ctx, &methods)
        }
        Command::Retrain(c) => {
            if c.methods.iter().flatten().any(|&m| m == UnlearnMethod::Hessian) {
                return Err(CliError::Validation("retrain: --methods takes golden or random_relabel".into()));
            }
            let methods = c.methods.clone().unwrap_or_else(|| vec![UnlearnMethod::Golden]);
            commands::unlearn(&c.ctx()?, &methods)
        }
        Command::Evaluate(c) => commands::evaluate(&c.ctx()?),
        Command::Mia(c) => commands::mia(&c.ctx()?),
        Command::Sweep(c) => commands::sweep(&c.ctx()?),
        Command::Bench(c) => commands::bench(&c.ctx()?),
        Command::Report(c) => commands::report(&c.ctx()?),
        Command::Synth(a) => synth_cmd(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Validation(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e @ CliError::Runtime(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
