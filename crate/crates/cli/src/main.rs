mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use config::{Method, Overrides, RunConfig};

/// Dependency-graph guided tabular data synthesis.
#[derive(Debug, Parser)]
#[command(name = "dagsynth", version)]
struct Cli {
    /// TOML run configuration
    #[arg(long, global = true, default_value = "dagsynth.toml")]
    config: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    method: Option<Method>,
    /// rows to sample
    #[arg(long, global = true)]
    n: Option<usize>,
    /// output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ask the configured chat-completion service for dependency annotations
    Annotate,
    /// Parse annotations, break cycles, and write the sampling order
    Graph,
    /// Fit the configured sampler
    Fit,
    /// Draw synthetic rows
    Sample,
    /// Score synthetic rows against the real data
    Eval,
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            let line = json!({
                "level": record.level().as_str().to_lowercase(),
                "target": record.target(),
                "message": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        })
        .init();
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.seed,
        method: cli.method,
        n: cli.n,
        out: cli.out,
    };
    let result = RunConfig::load(&cli.config, &overrides).and_then(|cfg| match cli.command {
        Command::Annotate => commands::annotate(&cfg),
        Command::Graph => commands::graph(&cfg),
        Command::Fit => commands::fit(&cfg),
        Command::Sample => commands::sample(&cfg),
        Command::Eval => commands::evaluate(&cfg),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = json!({"level": "error", "code": e.code(), "message": e.to_string()});
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
