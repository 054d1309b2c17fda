//! `feat`: sample endpoint ensembles, train a transport, simulate
//! controlled paths and estimate free-energy differences.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "feat", version, about = "Free-energy differences from learned transport and path works")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw MALA samples of both systems.
    Sample(Common),
    /// Train velocity and score networks on the samples.
    Train(Common),
    /// Simulate forward and backward paths and record their works.
    Work(Common),
    /// Apply every estimator to the recorded works.
    Estimate(Common),
    /// Reweight umbrella histograms of the collective variable.
    Reweight(Common),
    /// Check analytic and automatic gradients against finite differences.
    Gradcheck(Common),
    /// Full pipeline with the closed-form transport between Gaussians.
    Oracle(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (INI).
    #[arg(long)]
    config: PathBuf,
    /// Override a configuration value; repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Artifact directory; defaults to `[run] out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let common = match &cli.command {
        Command::Sample(c)
        | Command::Train(c)
        | Command::Work(c)
        | Command::Estimate(c)
        | Command::Reweight(c)
        | Command::Gradcheck(c)
        | Command::Oracle(c) => c,
    };
    let cfg = Config::load(&common.config, &common.set)?;
    let out = cfg.out_dir(common.out.as_deref())?;
    match cli.command {
        Command::Sample(_) => commands::sample(&cfg, &out)?,
        Command::Train(_) => commands::train(&cfg, &out)?,
        Command::Work(_) => commands::work(&cfg, &out)?,
        Command::Estimate(_) => drop(commands::estimate(&cfg, &out)?),
        Command::Reweight(_) => commands::reweight(&cfg, &out)?,
        Command::Gradcheck(_) => return commands::gradcheck(&cfg, &out),
        Command::Oracle(_) => drop(commands::oracle(&cfg, &out)?),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error[gradcheck]: gradient check failed");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_status() as u8)
        }
    }
}
