#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod manifest;

#[derive(Debug, Parser)]
#[command(name = "awd", version, about = "Adaptive wavelet distillation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML config; the bundled default is used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, created if needed.
    #[arg(long, global = true, default_value = "awd-out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Generate the synthetic dataset and groundtruth record.
    Gen,
    /// Train the teacher network on the generated data.
    TrainTeacher,
    /// Sweep (lambda, gamma) and write learned filters.
    Distill,
    /// Compare learned and reference filters; dump curves and attributions.
    Eval,
    /// Train and test the peak-count classifiers on synthetic maps.
    Peakcount,
    /// Time the transform and teacher stages.
    Bench,
    /// Print the bundled default config.
    DefaultConfig,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::DefaultConfig = cli.command {
        print!("{}", config::BUNDLED);
        return ExitCode::SUCCESS;
    }
    match commands::run(cli.command.name(), cli.config.as_deref(), &cli.out, cli.seed) {
        Ok(manifest) => {
            println!("{}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::TrainTeacher => "train-teacher",
            Command::Distill => "distill",
            Command::Eval => "eval",
            Command::Peakcount => "peakcount",
            Command::Bench => "bench",
            Command::DefaultConfig => "default-config",
        }
    }
}
