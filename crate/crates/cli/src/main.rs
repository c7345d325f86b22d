use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use privreg::experiment::{exit_code, run_experiment, Command, ExperimentConfig, EXIT_CODES};
use privreg::Error;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    /// sfat2, fat2 and a shattering certificate (or scale-alpha dimensions of a real class)
    Dims,
    /// Irreducibility at a given depth, exact level and a reducing witness tree
    Irred,
    /// SOA hypothesis of an irreducible class
    Soa,
    /// Build and validate a reducing tree from a given root pair
    ReduceTreeCert,
    /// Run the tree learner on a labeled dataset
    ReduceTree,
    /// Filtered classes and representatives for a ladder schedule
    Filter,
    /// Representatives reached from a target hypothesis
    Soafilter,
    /// Full private learner on a real class and dataset
    Reglearn,
    /// Empirical privacy audit of a mechanism on neighboring inputs
    Audit,
    /// Compare dimension computations against brute force
    OracleCheck,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Dims => Command::Dims,
            Cmd::Irred => Command::Irred,
            Cmd::Soa => Command::Soa,
            Cmd::ReduceTreeCert => Command::ReduceTreeCert,
            Cmd::ReduceTree => Command::ReduceTree,
            Cmd::Filter => Command::Filter,
            Cmd::Soafilter => Command::Soafilter,
            Cmd::Reglearn => Command::Reglearn,
            Cmd::Audit => Command::Audit,
            Cmd::OracleCheck => Command::OracleCheck,
        }
    }
}

/// Run one experiment described by a JSON config and write a JSON report.
///
/// Set RUST_LOG to control log verbosity.
#[derive(Parser, Debug)]
#[command(name = "privreg", version, after_help = EXIT_CODES)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; replaces the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Report destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Set a config key, e.g. `params.l=2`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VAL")]
    overrides: Vec<String>,
}

fn run(cli: &Cli) -> Result<i32, Error> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = ExperimentConfig::load_for(&cli.config, cli.command.into(), &overrides)?;
    let report = run_experiment(&cfg)?;
    let mut text = serde_json::to_string_pretty(&report).expect("reports serialize");
    text.push('\n');
    match &cli.out {
        Some(path) => fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?,
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| Error::Io(e.to_string()))?,
    }
    if let Some(f) = &report.body.failure {
        eprintln!("privreg: {}", f.message);
    }
    Ok(report.exit_code())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = run(&cli).unwrap_or_else(|e| {
        eprintln!("privreg: {e}");
        exit_code(&e)
    });
    ExitCode::from(code as u8)
}
