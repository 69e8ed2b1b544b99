use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use zombie_cli::config::parse_config;
use zombie_cli::runner::{run_batch, RunOptions};

/// Deterministic cache-hierarchy simulator for flush-based side channels
/// and their zombie-line mitigation: batch experiment runner.
#[derive(Parser)]
#[command(name = "zombie", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute every scenario in a config file and write CSV/SVG reports.
    Run {
        /// Scenario config file (sectioned `key = value` text).
        config: PathBuf,
        /// Scenarios to execute concurrently.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Full-size shared cache and iteration counts instead of the fast
        /// desk-scale defaults.
        #[arg(long)]
        paper_scale: bool,
        /// Replace every scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for report files.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            parallel,
            paper_scale,
            seed,
            out,
        } => {
            let text = match fs::read_to_string(&config) {
                Ok(text) => text,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", config.display());
                    return ExitCode::FAILURE;
                }
            };
            let scenarios = match parse_config(&text) {
                Ok(scenarios) => scenarios,
                Err(e) => {
                    eprintln!("error: {}: {e}", config.display());
                    return ExitCode::FAILURE;
                }
            };
            let outcome = run_batch(
                &scenarios,
                &RunOptions {
                    parallel,
                    paper_scale,
                    seed,
                    out_dir: out,
                },
            );
            print!("{}", outcome.summary);
            if outcome.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
