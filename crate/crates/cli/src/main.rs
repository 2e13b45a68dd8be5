use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

/// Invalid invocation or configuration; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "brlr", version, about = "Boosted relational logistic regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a model by functional-gradient boosting
    Learn(commands::LearnArgs),
    /// Write the probability of each example under a model
    Predict(commands::PredictArgs),
    /// Score a model on labeled examples
    Evaluate(commands::EvaluateArgs),
    /// Cross-validate B-RLR or the AGG-LR baseline
    Cv(commands::CvArgs),
    /// Write a synthetic Smokes-Cancer-Friends dataset
    Generate(commands::GenerateArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(brlr_core::Error::Config(_)) = cause.downcast_ref::<brlr_core::Error>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Learn(a) => commands::learn(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Cv(a) => commands::cv(a),
        Command::Generate(a) => commands::generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
