use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use simmotion::harness::config::{presets, ExperimentConfig, OUTPUT_ROOT_ENV};
use simmotion::harness::{pipeline, report, rotate_demo};
use simmotion::{Error, Execution, Result};

/// Similarity-matching motion experiments.
#[derive(Parser)]
#[command(name = "simmotion", version)]
struct Cli {
    /// Run every stage single-threaded.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in config by name (see configs/).
    #[arg(long)]
    preset: Option<String>,
    /// Override one key by dot path, e.g. learner.K=2. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write stimulus sequences.
    Gen(ConfigArgs),
    /// Train the learner and write checkpoints.
    Train(ConfigArgs),
    /// Fit PCA and K-means oracles on the training features.
    Baseline(ConfigArgs),
    /// Sweep a motion detector over drifting gratings.
    Detect(ConfigArgs),
    /// Check the global detector identity on random streams.
    Equiv(ConfigArgs),
    /// Apply a learned rotation operator repeatedly to a bar.
    RotateDemo {
        /// Checkpoint directory from a 2D rotation run.
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8)]
        steps: usize,
        /// Radians per iteration; the default is the training rotation step.
        #[arg(long, default_value_t = 0.05)]
        theta: f64,
        #[arg(long, default_value_t = 0)]
        operator: usize,
        #[arg(long, default_value_t = 0.7)]
        bar_width: f64,
        /// Defaults to rotate_demo under the output root.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Metrics and filter images for checkpoints.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Defaults to report under the output root.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Compare inputs produced by different configs.
        #[arg(long)]
        force: bool,
    },
}

fn load_config(a: &ConfigArgs) -> Result<ExperimentConfig> {
    let base = match (&a.config, &a.preset) {
        (Some(p), _) => ExperimentConfig::load(p)?,
        (None, Some(name)) => presets::all()
            .into_iter()
            .find(|c| &c.name == name)
            .ok_or_else(|| Error::invalid(format!("unknown preset {name}")))?,
        (None, None) => return Err(Error::invalid("pass --config or --preset")),
    };
    let cfg = base.with_overrides(&a.set)?;
    cfg.validate()?;
    info!("config {} hash {}", cfg.name, cfg.hash());
    Ok(cfg)
}

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match cli.command {
        Command::Gen(a) => {
            for p in pipeline::cli_gen(&load_config(&a)?, exec)? {
                println!("{}", p.display());
            }
        }
        Command::Train(a) => {
            for p in pipeline::cli_train(&load_config(&a)?, exec)? {
                println!("{}", p.display());
            }
        }
        Command::Baseline(a) => {
            for p in pipeline::cli_baseline(&load_config(&a)?, exec)? {
                println!("{}", p.display());
            }
        }
        Command::Detect(a) => println!("{}", pipeline::cli_detect(&load_config(&a)?, exec)?.display()),
        Command::Equiv(a) => println!("{}", pipeline::cli_equiv(&load_config(&a)?, exec)?.display()),
        Command::RotateDemo {
            checkpoint,
            steps,
            theta,
            operator,
            bar_width,
            out,
        } => {
            let out = out.unwrap_or_else(|| output_root().join("rotate_demo"));
            println!("{}", rotate_demo::cli_rotate_demo(&checkpoint, operator, steps, theta, bar_width, &out)?.display());
        }
        Command::Report { inputs, out, force } => {
            let out = out.unwrap_or_else(|| output_root().join("report"));
            report::cli_report(&inputs, &out, force)?;
            println!("{}", out.join("metrics.json").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
