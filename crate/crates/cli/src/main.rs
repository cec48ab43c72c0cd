//! The `agentkernel` command.
//!
//! Exit codes: `0` success, `1` failure with the reason on stderr, `2`
//! invalid usage. Settings come from flags, then `AK_*` environment
//! variables, then `agentkernel.toml`.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use agentkernel::config::CONFIG_FILE;
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "agentkernel", version, about = "Run, serve, replay and evaluate software agents")]
struct Cli {
    /// Project configuration file. A missing file means defaults.
    #[arg(long, global = true, default_value = CONFIG_FILE, env = "AK_CONFIG")]
    config: PathBuf,

    #[command(subcommand)]
    command: Command,
}

/// Model-response options shared by the session commands.
#[derive(Debug, Clone, Default, Args)]
pub struct LlmFlags {
    /// Where responses come from [env: AK_LLM_MODE]
    #[arg(long, value_parser = ["live", "record", "replay", "scripted"])]
    pub mode: Option<String>,
    /// Model name for live calls and pricing [env: AK_LLM_MODEL]
    #[arg(long)]
    pub model: Option<String>,
    /// Recording file read in replay mode and written in record mode [env: AK_RECORDING_PATH]
    #[arg(long)]
    pub recording: Option<PathBuf>,
    /// TOML file with `responses = [...]` for scripted mode [env: AK_SCRIPT_PATH]
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// OpenAI-compatible endpoint for live and record modes [env: AK_LLM_ENDPOINT]
    #[arg(long)]
    pub endpoint: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one session to completion
    Run(commands::RunArgs),
    /// Serve the session API and live event feed for front ends
    Serve(commands::ServeArgs),
    /// Serve the action-execution API over a workspace (runs inside the sandbox)
    ServeRuntime(commands::ServeRuntimeArgs),
    /// Check a stored trajectory against the event-stream invariants and print it
    Replay(commands::ReplayArgs),
    /// Run a task suite and write a report
    Eval(commands::EvalArgs),
    /// Regenerate the recordings of a task suite
    Record(commands::RecordArgs),
    /// Runtime image tags and build decisions
    Images {
        #[command(subcommand)]
        command: commands::ImagesCommand,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("AK_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();

    let result = match cli.command {
        Command::Run(args) => commands::run(&cli.config, args),
        Command::Serve(args) => commands::serve(&cli.config, args),
        Command::ServeRuntime(args) => commands::serve_runtime(&cli.config, args),
        Command::Replay(args) => commands::replay(args),
        Command::Eval(args) => commands::eval(&cli.config, args),
        Command::Record(args) => commands::record(&cli.config, args),
        Command::Images { command } => commands::images(command),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
