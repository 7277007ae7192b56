//! The `cloudvol` command line: dataset generation, pre-training,
//! fine-tuning, evaluation, prediction and rendering.

pub mod commands;
pub mod config;
pub mod error;
pub mod render;

use config::{Cli, Command, RunConfig};
pub use error::{CliError, Result};

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => RunConfig::load_file(path)?,
        None => RunConfig::default(),
    };
    let merge = |run: RunConfig| -> Result<RunConfig> {
        let run = run.merged(file.clone());
        run.validate()?;
        Ok(run)
    };
    match cli.command {
        Command::Generate(run) => {
            commands::generate(&merge(run)?)?;
        }
        Command::Pretrain(run) => {
            let dir = commands::pretrain(&merge(run)?)?;
            log::info!("pre-training checkpoint in {}", dir.display());
        }
        Command::Finetune(run) => {
            let dir = commands::finetune(&merge(run)?)?;
            log::info!("checkpoint in {}", dir.display());
        }
        Command::Evaluate(run) => {
            let report = commands::evaluate(&merge(run)?)?;
            log::info!("{} columns of {} samples evaluated", report.columns, report.samples);
        }
        Command::Predict { run, input } => {
            let out = commands::predict(&merge(run)?, &input)?;
            log::info!("volume written to {}", out.display());
        }
        Command::Render { run, samples } => {
            let files = commands::render_samples(&merge(run)?, &samples)?;
            log::info!("{} images written", files.len());
        }
    }
    Ok(())
}
