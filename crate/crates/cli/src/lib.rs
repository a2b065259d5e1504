//! Command-line driver: simulate data, train, forecast with risk routing,
//! evaluate, and check gradients.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod dataset;
pub mod output;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use ugf_core::attention::Variant;
use ugf_core::wiae::TrainMode;

use crate::config::{Overrides, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONTRACT: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ugf", version, about = "Uncertainty-gated probabilistic forecasting")]
pub struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Checkpoint path (default: <out>/checkpoint.json).
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// likelihood, adversarial or combined.
    #[arg(long, global = true, value_parser = parse_mode)]
    pub mode: Option<TrainMode>,
    /// additive_log, multiplicative or vanilla.
    #[arg(long, global = true, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic series and its ground-truth sidecar.
    Simulate,
    /// Fit the model and calibrate the risk threshold.
    Train {
        /// Continue from the checkpoint instead of starting fresh.
        #[arg(long)]
        resume: bool,
    },
    /// Forecast the configured split, or one window read from a CSV file.
    Forecast {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Score a forecast file against the truth series.
    Evaluate {
        /// Forecast file (default: <out>/forecast.json).
        #[arg(long)]
        forecast: Option<PathBuf>,
        /// Truth CSV; the configured data source when omitted.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Regime-label CSV for the shock-interval report.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients of the objective.
    Gradcheck {
        #[arg(long, hide = true)]
        corrupt_param: Option<String>,
    },
}

fn parse_mode(s: &str) -> std::result::Result<TrainMode, String> {
    s.parse().map_err(|e: ugf_core::Error| e.to_string())
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: ugf_core::Error| e.to_string())
}

/// Exit status for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.chain().find_map(|e| e.downcast_ref::<ugf_core::Error>()) {
        Some(e) if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_CONTRACT,
    }
}

/// Runs one parsed command and returns its exit status.
pub fn run(cli: Cli) -> Result<i32> {
    let overrides = Overrides { seed: cli.seed, out: cli.out.clone(), mode: cli.mode, variant: cli.variant };
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let checkpoint = cli.checkpoint.clone().unwrap_or_else(|| commands::default_checkpoint(&cfg));
    log::info!("config hash {} seed {}", cfg.hash(), cfg.seed);
    match cli.command {
        Command::Simulate => {
            let out = commands::simulate(&cfg)?;
            println!("wrote {} rows to {}", out.length, cfg.out_dir.join(&out.series_file).display());
        }
        Command::Train { resume } => {
            let out = commands::train(&cfg, &checkpoint, resume)?;
            let r = &out.report;
            println!(
                "trained {} epochs (best epoch {:?}, best val {:?}); tau {:.6}; checkpoint {}",
                r.epochs.len(),
                r.best_epoch,
                r.best_val_total,
                out.tau,
                checkpoint.display()
            );
        }
        Command::Forecast { input } => {
            let out = commands::forecast(&cfg, &checkpoint, input.as_deref())?;
            println!("forecast {} windows to {}", out.windows.len(), cfg.out_dir.join(commands::FORECAST_FILE).display());
        }
        Command::Evaluate { forecast, truth, labels } => {
            let path = forecast.unwrap_or_else(|| cfg.out_dir.join(commands::FORECAST_FILE));
            let out = commands::evaluate(&cfg, &path, truth.as_deref(), labels.as_deref())?;
            println!("{}", out.header.join(", "));
            println!("{}", out.table_row);
            if let Some(s) = &out.report.shock {
                println!("shock: {}", ugf_core::metrics::format_table1_row(s));
            }
        }
        Command::Gradcheck { corrupt_param } => {
            let report = commands::gradcheck(&cfg, corrupt_param.as_deref())?;
            println!("{:<16} {:>14}  status", "parameter", "max rel error");
            for p in &report.params {
                println!("{:<16} {:>14.3e}  {}", p.id, p.max_rel_error, if p.passed { "ok" } else { "FAIL" });
            }
            println!("{}", if report.passed { "gradient check passed" } else { "gradient check FAILED" });
            if !report.passed {
                return Ok(EXIT_NUMERICAL);
            }
        }
    }
    Ok(EXIT_OK)
}
