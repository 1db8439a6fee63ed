//! `slidemark` — joint Bayesian modeling of spatial event counts and sizes.
//!
//! Subcommands: `simulate`, `fit`, `crossval`, `predict`, `hazard`. All read
//! a sectioned key-value config file; outputs land in `--out` with the
//! resolved configuration embedded in every artifact.

mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "slidemark", version, about = "Joint spatial modeling of event counts and sizes")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the seed from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Caps worker threads for parallel folds.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Chain archive for predict/hazard (defaults to <out>/chain.json).
    #[arg(long, global = true)]
    chain: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (and truth file) from a parameter spec.
    Simulate,
    /// Fit the model by MCMC; writes a posterior summary and chain archive.
    Fit,
    /// Within-sample or out-of-sample scoring (slope-unit or thinning folds).
    Crossval,
    /// Posterior predictive count and size grids at slope-unit level.
    Predict,
    /// Susceptibility and hazard maps plus aggregate hazard quantiles.
    Hazard,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Fit => "fit",
            Command::Crossval => "crossval",
            Command::Predict => "predict",
            Command::Hazard => "hazard",
        }
    }
}

fn run(cli: &Cli) -> slidemark::Result<()> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| slidemark::Error::Config("--config PATH is required".into()))?;
    let config = RunConfig::from_file(config_path)?;
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global()
            .map_err(|e| slidemark::Error::Config(format!("thread pool: {e}")))?;
    }
    let chain_path = cli.chain.clone().unwrap_or_else(|| cli.out.join("chain.json"));
    match cli.command {
        Command::Simulate => commands::cmd_simulate(&config, &cli.out, cli.seed),
        Command::Fit => commands::cmd_fit(&config, &cli.out, cli.seed),
        Command::Crossval => commands::cmd_crossval(&config, &cli.out, cli.seed),
        Command::Predict => commands::cmd_predict(&config, &cli.out, &chain_path),
        Command::Hazard => commands::cmd_hazard(&config, &cli.out, &chain_path),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            // Machine-readable error record alongside the artifacts.
            let record = serde_json::json!({
                "command": cli.command.name(),
                "error": err.to_string(),
            });
            let _ = std::fs::create_dir_all(&cli.out);
            let _ = std::fs::write(
                cli.out.join("error.json"),
                serde_json::to_string_pretty(&record).unwrap_or_default(),
            );
            ExitCode::FAILURE
        }
    }
}
