//! Experiment runner behind the `progcpr` binary.

mod config;
mod presets;
mod runner;
mod table;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::data::{synthesize_dataset, write_csv, DataError, SyntheticSpec};

pub use config::{
    method_preset, validate, DatasetConfig, DatasetSource, ExperimentConfig, SplitConfig, DEFAULT_OUT_DIR,
    DEFAULT_SEEDS, METHOD_PRESETS, OUT_DIR_ENV,
};
pub use presets::Preset;
pub use runner::{
    default_ratios, emit_ratio_sweep, load_dataset, run_experiment, sweep_csv, ExperimentOutcome, PairFailure,
    SplitWarning, SweepOutcome, SweepRow, SWEEP_CSV_HEADER,
};
pub use table::{format_cell, read_reports, Cell, ResultsTable};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// 1 for configuration problems, 2 for everything that fails at run time.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "progcpr", version, about = "Progressive conditional-probability encoding experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; falls back to the config, then $PROGCPR_OUT_DIR.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated seeds replacing the config's list.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every (dataset, method, seed) pair and write reports and tables.
    Run(RunArgs),
    /// Repeat the experiment over labeled-data ratios.
    SweepRatio {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated ratios in (0, 1).
        #[arg(long, value_delimiter = ',', default_values_t = default_ratios())]
        ratios: Vec<f64>,
    },
    /// Check a config without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a synthetic dataset as CSV.
    Synth {
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        preset: Option<Preset>,
        /// TOML file holding a synthetic spec.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Generator seed, replacing the preset's or the file's.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Finite-difference check of every training loss.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rebuild the results table from a directory of JSON reports.
    Render {
        /// The `reports` directory written by `run`.
        #[arg(long)]
        reports: PathBuf,
    },
}

fn load_with_overrides(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = &args.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(j) = args.jobs {
        cfg.jobs = j;
    }
    let out = cfg.resolve_out_dir(args.out.as_deref());
    Ok((cfg, out))
}

fn finish(failures: &[PairFailure]) -> Result<(), CliError> {
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("{} pair(s) failed", failures.len())))
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let (cfg, out) = load_with_overrides(&args)?;
            let outcome = run_experiment(&cfg, &out)?;
            print!("{}", outcome.table.to_markdown());
            println!("reports written to {}", out.display());
            finish(&outcome.failures)
        }
        Command::SweepRatio { run, ratios } => {
            let (cfg, out) = load_with_overrides(&run)?;
            let outcome = emit_ratio_sweep(&cfg, &ratios, &out)?;
            print!("{}", sweep_csv(&outcome.rows));
            for w in &outcome.split_warnings {
                println!(
                    "warning: ratio {} seed {}: stratified split infeasible, plain random sampling used",
                    w.labeled_fraction, w.seed
                );
            }
            finish(&outcome.failures)
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let problems = validate(&cfg);
            if problems.is_empty() {
                println!(
                    "ok: {} dataset(s) x {} method(s) x {} seed(s)",
                    cfg.datasets.len(),
                    cfg.methods.len(),
                    cfg.seeds.len()
                );
                Ok(())
            } else {
                for p in &problems {
                    println!("error: {p}");
                }
                Err(CliError::Config(format!("{} problem(s)", problems.len())))
            }
        }
        Command::Synth { preset, config, out, seed } => {
            let mut spec = match (preset, config) {
                (Some(p), _) => p.spec(),
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
                    toml::from_str::<SyntheticSpec>(&text).map_err(|e| CliError::Config(e.to_string()))?
                }
                (None, None) => return Err(CliError::Config("synth needs --preset or --config".into())),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
            let ds = synthesize_dataset(&spec)?;
            write_csv(&ds, &out)?;
            println!("{} rows written to {}", ds.n_rows(), out.display());
            Ok(())
        }
        Command::Gradcheck { seed } => {
            let cases = crate::nn::standard_suite(seed).map_err(|e| CliError::Runtime(e.to_string()))?;
            let mut failed = 0;
            for c in &cases {
                let verdict = if c.passed() { "ok" } else { "FAIL" };
                failed += usize::from(!c.passed());
                println!(
                    "{verdict:4} {:<14} max_rel_err {:.3e} (tolerance {:.0e}, {} params)",
                    c.name, c.report.max_rel_err, c.tolerance, c.report.params_checked
                );
            }
            if failed == 0 {
                Ok(())
            } else {
                Err(CliError::Runtime(format!("{failed} gradient check(s) failed")))
            }
        }
        Command::Render { reports } => {
            let table = ResultsTable::from_report_dir(&reports)?;
            print!("{}", table.to_markdown());
            Ok(())
        }
    }
}

/// Entry point for the binary.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
