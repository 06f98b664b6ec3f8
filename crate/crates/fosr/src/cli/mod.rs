//! Command-line surface.
//!
//! ```text
//! fosr <simulate|fit|select|replicate|summarize>
//!      [--config FILE] [--set KEY=VALUE ...]
//!      [--seed N] [--out DIR] [--workers N] [--design I|II] [--keep-draws]
//! ```
//!
//! Precedence: built-in defaults < config file < `--set` overrides <
//! dedicated flags. Exit codes: 0 success, 2 validation/data/IO error,
//! 3 numerical failure, 4 partial replicate failure.

pub mod commands;
pub mod config;
pub mod outputs;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{replicate_study, CliError, RepOutcome, StudyOutcome};
pub use config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(
    name = "fosr",
    version,
    about = "Function-on-scalar regression with Bayesian group-lasso marker selection"
)]
struct Cli {
    #[command(subcommand)]
    command: CommandKind,
    /// INI-style configuration file (flat `key = value` lines).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a single configuration key (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for replicate studies.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Simulation design.
    #[arg(long, global = true, value_parser = ["I", "II"])]
    design: Option<String>,
    /// Stream kept draws to draws.csv during `fit`.
    #[arg(long, global = true)]
    keep_draws: bool,
}

#[derive(Subcommand)]
enum CommandKind {
    /// Generate synthetic panels (one directory per replicate).
    Simulate,
    /// Run pilot fit, FPCA, and the Gibbs sampler on a panel.
    Fit,
    /// Rank predictor groups from a fit and apply the BIC cutoff.
    Select,
    /// Run a full simulate-fit-select study and aggregate power metrics.
    Replicate,
    /// Pretty-print metrics.csv or summary.json from an output directory.
    Summarize,
}

/// Builds the effective configuration for a parsed invocation.
fn effective_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for assignment in &cli.set {
        cfg.apply_override(assignment)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    if let Some(design) = &cli.design {
        cfg.sim_design = design.clone();
    }
    if cli.keep_draws {
        cfg.keep_draws = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = effective_config(cli)?;
    match cli.command {
        CommandKind::Simulate => commands::cmd_simulate(&cfg),
        CommandKind::Fit => commands::cmd_fit(&cfg),
        CommandKind::Select => commands::cmd_select(&cfg),
        CommandKind::Replicate => commands::cmd_replicate(&cfg),
        CommandKind::Summarize => commands::cmd_summarize(&cfg),
    }
}

/// Parses `std::env::args`, runs the command, and returns the exit code.
pub fn run_from_args() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = err.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_set_overrides_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.ini");
        std::fs::write(&path, "seed = 1\nn_burn = 10\n").unwrap();
        let cli = Cli::try_parse_from([
            "fosr",
            "fit",
            "--config",
            path.to_str().unwrap(),
            "--set",
            "seed=2",
            "--set",
            "n_keep=30",
            "--seed",
            "3",
        ])
        .unwrap();
        let cfg = effective_config(&cli).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.n_burn, 10);
        assert_eq!(cfg.n_keep, 30);
    }

    #[test]
    fn design_flag_is_restricted_and_maps_to_sim_design() {
        assert!(Cli::try_parse_from(["fosr", "simulate", "--design", "III"]).is_err());
        let cli = Cli::try_parse_from(["fosr", "simulate", "--design", "I"]).unwrap();
        let cfg = effective_config(&cli).unwrap();
        assert_eq!(cfg.sim_design, "I");
    }

    #[test]
    fn keep_draws_flag_turns_on() {
        let cli = Cli::try_parse_from(["fosr", "fit", "--keep-draws"]).unwrap();
        let cfg = effective_config(&cli).unwrap();
        assert!(cfg.keep_draws);
    }
}
