//! `slowfast`: command-line driver for the slow-fast McKean-Vlasov experiments.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use commands::{CliError, Command};
use config::RawConfig;

/// Exit codes: 0 success, 2 usage, 3 invalid configuration, 4 I/O failure,
/// 5 simulation failure. Failures print one JSON record on stderr.
#[derive(Debug, Parser)]
#[command(name = "slowfast", version, about)]
struct Cli {
    /// Pipeline to run.
    #[arg(value_enum)]
    command: Command,

    /// Sectioned key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Noise seed; overrides run.seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Model identifier; overrides model.name.
    #[arg(long)]
    model: Option<String>,

    /// Output directory; overrides run.out_dir and $SLOWFAST_OUT_DIR.
    #[arg(long)]
    out_dir: Option<PathBuf>,

    /// Worker threads. Output does not depend on this value.
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    workers: Option<u16>,

    /// Override one setting, as section.key=value. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

fn merged_config(cli: &Cli) -> Result<RawConfig, CliError> {
    let mut raw = match &cli.config {
        None => RawConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
            RawConfig::parse(&text).map_err(|e| CliError::Config(vec![e]))?
        }
    };
    let mut problems = Vec::new();
    for spec in &cli.overrides {
        if let Err(e) = raw.apply_override(spec) {
            problems.push(e);
        }
    }
    if !problems.is_empty() {
        return Err(CliError::Usage(problems.join("; ")));
    }
    if let Some(seed) = cli.seed {
        raw.set("run", "seed", &seed.to_string());
    }
    if let Some(model) = &cli.model {
        raw.set("model", "name", model);
    }
    Ok(raw)
}

fn execute(cli: Cli) -> Result<commands::Outcome, CliError> {
    let raw = merged_config(&cli)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = cli.workers {
        pool = pool.num_threads(k as usize);
    }
    let pool = pool.build().map_err(|e| CliError::Simulation(format!("cannot start worker pool: {e}")))?;
    pool.install(|| commands::run(cli.command, &raw, cli.out_dir.clone()))
}

fn report(err: &CliError) -> ExitCode {
    let record = serde_json::json!({
        "error": err.kind(),
        "exit_code": err.exit_code(),
        "messages": err.messages(),
    });
    eprintln!("{record}");
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => return report(&CliError::Usage(e.to_string().trim().to_string())),
    };
    match execute(cli) {
        Ok(outcome) => {
            for (k, v) in &outcome.summary {
                println!("{k:<28} {v}");
            }
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => report(&e),
    }
}
