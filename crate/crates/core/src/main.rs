use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use indalign::config::{Overrides, ReportFormat, RunConfig};
use indalign::pipeline::{Pipeline, PipelineError};

/// Extract feedback indicators with an LLM, align them with rubric
/// ratings, and train white-box rating models.
///
/// Exit codes: 0 ok, 1 other failure, 2 invalid input or config,
/// 3 gateway unreachable, 4 shape mismatch, 5 nothing to model.
#[derive(Parser)]
#[command(name = "indalign", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(long, global = true, default_value = "indalign.toml")]
    config: PathBuf,

    /// Use the stub gateway with this `prompt hash -> response` JSON file.
    #[arg(long, global = true)]
    stub: Option<PathBuf>,

    /// Gateway by registered name (`http`, `stub`).
    #[arg(long, global = true)]
    gateway: Option<String>,

    /// Learner by registered name (`tree`, `forest`).
    #[arg(long, global = true)]
    learner: Option<String>,

    /// Report format; replaces the configured list.
    #[arg(long, global = true, value_enum)]
    format: Option<ReportFormat>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the corpus and catalog and print their sizes.
    Ingest,
    /// Query every submission x indicator cell.
    Extract,
    /// Correlate indicators with ratings and write the report.
    Align,
    /// Fit one model per criterion on the retained indicators.
    Train,
    /// Score new submissions with the trained models.
    Predict {
        /// Submissions to score (defaults to `paths.predict_input`).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Re-render the alignment report from the saved table.
    Report,
}

fn run(cli: Cli) -> Result<String, PipelineError> {
    let mut config = RunConfig::load(&cli.config)?;
    config.apply(&Overrides {
        stub_fixtures: cli.stub,
        gateway: cli.gateway,
        learner: cli.learner,
        format: cli.format,
    });
    let pipeline = Pipeline::new(config);
    Ok(match cli.command {
        Command::Ingest => pipeline.ingest()?.render(),
        Command::Extract => pipeline.extract()?.render(),
        Command::Align => pipeline.align()?,
        Command::Train => pipeline.train()?.render(),
        Command::Predict { input } => pipeline.predict(input.as_deref())?.render(),
        Command::Report => pipeline.report()?,
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
