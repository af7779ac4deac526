//! crlab: solver, planner, and simulator front end. A subcommand picks the
//! mode, a JSON config (or preset) supplies the blocks, and every run leaves
//! plot-ready long-format CSVs plus an index in the output directory.

mod config;
mod experiment;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{apply_preset, load_config, CliError, ExperimentConfig, Mode};
use experiment::run_experiment;

#[derive(Parser)]
#[command(name = "crlab", version, about = "Spectrum access experiments: solve, plan, simulate, sweep")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment config; omitted fields fall back to the preset.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Named preset filling any blocks the config leaves out.
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,
    /// Replace the config's seed list with this single seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory for CSV artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<String>,
    /// Parallel sweep width; CRLAB_THREADS takes precedence when set.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Suppress progress lines.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Optimal stopping policy for a sensed channel ensemble.
    SolveOverlay,
    /// Joint power and interference constrained stopping policy.
    SolveUnderlay,
    /// Shared-spectrum stopping policy for a user population.
    SolveMultisu,
    /// Per-state success requirements for a deadline frame.
    PlanFrame,
    /// Slot-level fleet simulation under a scheduling policy.
    Simulate,
    /// Run the config's sweep axis point by point.
    Sweep,
}

impl Command {
    fn mode(self) -> Mode {
        match self {
            Command::SolveOverlay => Mode::SolveOverlay,
            Command::SolveUnderlay => Mode::SolveUnderlay,
            Command::SolveMultisu => Mode::SolveMultisu,
            Command::PlanFrame => Mode::PlanFrame,
            Command::Simulate => Mode::Simulate,
            Command::Sweep => Mode::Sweep,
        }
    }
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(name) = &cli.preset {
        apply_preset(&mut cfg, name)?;
    }
    let mode = cli.command.mode();
    match cfg.mode {
        Some(m) if m != mode => {
            return Err(CliError::Invalid(vec![format!(
                "config sets mode {} but the {} subcommand was invoked",
                m.name(),
                mode.name()
            )]));
        }
        _ => cfg.mode = Some(mode),
    }
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn jobs(cli: &Cli) -> usize {
    if let Ok(raw) = std::env::var("CRLAB_THREADS") {
        if let Ok(n) = raw.trim().parse::<usize>() {
            return n.max(1);
        }
        eprintln!("warning: ignoring unparseable CRLAB_THREADS={raw:?}");
    }
    cli.jobs.unwrap_or(1).max(1)
}

/// Best-effort machine-readable record for failures that happen before the
/// sweep index exists.
fn write_error_record(dir: &str, err: &CliError) {
    let record = serde_json::json!({ "error": err.to_string() });
    if std::fs::create_dir_all(dir).is_ok() {
        let _ = std::fs::write(
            PathBuf::from(dir).join("error.json"),
            serde_json::to_vec_pretty(&record).expect("error record serializes"),
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match resolve(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(out) = &cli.out {
                write_error_record(out, &e);
            }
            return ExitCode::from(2);
        }
    };
    match run_experiment(&cfg, jobs(&cli), cli.quiet) {
        Ok(summary) => {
            if !cli.quiet {
                println!(
                    "{} point(s) written to {}{}",
                    summary.points,
                    cfg.output_dir,
                    if summary.failures > 0 {
                        format!(", {} FAILED", summary.failures)
                    } else {
                        String::new()
                    }
                );
            }
            if summary.failures > 0 {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            write_error_record(&cfg.output_dir, &e);
            ExitCode::from(2)
        }
    }
}
