//! `mmsd`: fixtures, data preparation, training, evaluation and restoration.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 missing
//! environment (such as the encoder executable), 4 runtime or I/O failure.

mod commands;
mod config;
mod logging;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mmsd_core::Result;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "mmsd", version, about = "Soft decoding of compressed talking-head video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Invocation {
    /// TOML file with the same keys as the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    run: RunConfig,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and its manifest.
    Fixtures(Invocation),
    /// Downsample, compress and extract MFCCs for every clip and quality factor.
    PrepareData(Invocation),
    /// Train from scratch or resume from a checkpoint.
    Train(Invocation),
    /// Score bicubic and (with a checkpoint) the network on face regions.
    Eval(Invocation),
    /// Restore a decoded video given its audio and emotion state.
    Restore(Invocation),
}

fn run(cli: Cli) -> Result<()> {
    let (inv, f): (Invocation, fn(&RunConfig) -> Result<()>) = match cli.command {
        Command::Fixtures(i) => (i, commands::fixtures),
        Command::PrepareData(i) => (i, commands::prepare_data),
        Command::Train(i) => (i, commands::train),
        Command::Eval(i) => (i, commands::eval),
        Command::Restore(i) => (i, commands::restore),
    };
    let file = match &inv.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    f(&inv.run.over(file))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    logging::init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            log::error!("{}", serde_json::json!({"event": "failed", "exit_code": code, "error": e.to_string()}));
            ExitCode::from(code as u8)
        }
    }
}
