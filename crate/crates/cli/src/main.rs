mod args;
mod artifacts;
mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, FromArgMatches};
use tsb_core::pipeline::{RunConfig, CONFIG_SCHEMA_VERSION};

use crate::args::Cli;
use crate::artifacts::RunContext;
use crate::error::{CliError, Result};

fn version() -> String {
    format!("{} (config schema {})", env!("CARGO_PKG_VERSION"), CONFIG_SCHEMA_VERSION)
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    let Some(path) = path else { return Ok(RunConfig::default()) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Invalid(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Invalid(format!("config {}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<()> {
    let common = cli.command.common();
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Invalid("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Invalid(format!("--threads: {e}")))?;
    }
    let mut cfg = load_config(common.config.as_ref())?;
    commands::apply_overrides(&cli.command, &mut cfg)?;
    let cfg = cfg.resolved();
    let dir = common
        .out_dir
        .clone()
        .or_else(|| cfg.paths.run_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("run"));
    let ctx = RunContext::new(cli.command.name(), cfg, dir)?;
    commands::execute(&cli.command, &ctx)
}

fn main() -> ExitCode {
    let version: &'static str = Box::leak(version().into_boxed_str());
    let matches = match Cli::command().version(version).try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
