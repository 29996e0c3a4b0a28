//! `fuller`: simulation, certificate verification and convergence studies for
//! the Fuller switching inclusion.
//!
//! Exit codes: 0 success, 1 failed verification or convergence, 2 invalid input.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{ChatterArgs, ConvergeArgs, Corruption, SimulateArgs, VerifyArgs};
use crate::config::{Overrides, Radius, RunConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "fuller", version, about = "Fuller inclusion toolkit")]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Exact feedback trajectory from a non-origin start.
    Simulate(SimulateCmd),
    /// Truncated chattering solution leaving the origin.
    Chatter(ChatterCmd),
    /// Calibrate and verify the certificate, the partition and the engine.
    Verify(VerifyCmd),
    /// Convergence study of 1/k-solutions and offset families from the origin.
    Converge(ConvergeCmd),
}

#[derive(Debug, Args)]
struct CertificateFlags {
    /// Largest parabola parameter magnitude.
    #[arg(long)]
    a_bar: Option<f64>,
    /// Certificate radius, or `auto` to calibrate.
    #[arg(long)]
    r: Option<Radius>,
    /// Grid resolution of the sampled checks.
    #[arg(long)]
    grid_n: Option<usize>,
}

#[derive(Debug, Args)]
struct SimulateCmd {
    #[arg(long, allow_negative_numbers = true)]
    x0: f64,
    #[arg(long, allow_negative_numbers = true)]
    y0: f64,
    #[arg(long, allow_negative_numbers = true)]
    t_max: Option<f64>,
    /// Radius of the ball the trajectory stops at.
    #[arg(long, allow_negative_numbers = true)]
    r: Option<f64>,
    /// Sampling step of the CSV rows.
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    #[arg(long)]
    a_bar: Option<f64>,
}

#[derive(Debug, Args)]
struct ChatterCmd {
    /// Ordinate magnitude at the last switch.
    #[arg(long, allow_negative_numbers = true)]
    scale: f64,
    #[arg(long, default_value_t = 20)]
    arcs: usize,
    #[arg(long, allow_negative_numbers = true)]
    r: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    #[arg(long)]
    a_bar: Option<f64>,
}

#[derive(Debug, Args)]
struct VerifyCmd {
    #[command(flatten)]
    cert: CertificateFlags,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "T")]
    horizon: Option<f64>,
    /// Deliberately break the field or the certificate.
    #[arg(long, value_enum)]
    corrupt: Option<Corruption>,
    /// Depth of the validated cover.
    #[arg(long, default_value_t = 8)]
    cover_depth: usize,
    /// Radius of the validated cover.
    #[arg(long, default_value_t = 0.5)]
    cover_r: f64,
    /// Sampling resolution of the partition checks.
    #[arg(long, default_value_t = 30)]
    partition_grid: usize,
}

#[derive(Debug, Args)]
struct ConvergeCmd {
    #[command(flatten)]
    cert: CertificateFlags,
    #[arg(long, default_value_t = 6)]
    k_max: usize,
    /// Start offsets from the origin, as fractions of the certificate radius.
    #[arg(long, value_delimiter = ',', default_values_t = [1e-2, 1e-3, 1e-4, 1e-5])]
    offsets: Vec<f64>,
    #[arg(long = "T")]
    horizon: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = cli.config.as_deref();
    let mut o = Overrides { out_dir: cli.out.clone(), ..Default::default() };
    match cli.command {
        Command::Simulate(c) => {
            o.a_bar = c.a_bar;
            let cfg = RunConfig::resolve(file, o)?;
            let args = SimulateArgs { x0: c.x0, y0: c.y0, t_max: c.t_max, r: c.r, step: c.step };
            if let Some(t) = args.t_max {
                if !(t >= 0.0) {
                    return Err(CliError::Invalid(format!("t-max must be non-negative, got {t}")));
                }
            }
            commands::simulate(&args, &cfg)
        }
        Command::Chatter(c) => {
            o.a_bar = c.a_bar;
            let cfg = RunConfig::resolve(file, o)?;
            commands::chatter(&ChatterArgs { scale: c.scale, arcs: c.arcs, r: c.r, step: c.step }, &cfg)
        }
        Command::Verify(c) => {
            o.a_bar = c.cert.a_bar;
            o.r = c.cert.r;
            o.grid_n = c.cert.grid_n;
            o.seed = c.seed;
            o.t = c.horizon;
            let cfg = RunConfig::resolve(file, o)?;
            let args = VerifyArgs {
                corrupt: c.corrupt,
                cover_depth: c.cover_depth,
                cover_r: c.cover_r,
                partition_grid: c.partition_grid,
            };
            commands::verify(&args, &cfg)
        }
        Command::Converge(c) => {
            o.a_bar = c.cert.a_bar;
            o.r = c.cert.r;
            o.grid_n = c.cert.grid_n;
            o.t = c.horizon;
            let cfg = RunConfig::resolve(file, o)?;
            commands::converge(&ConvergeArgs { k_max: c.k_max, offsets: c.offsets, step: c.step }, &cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
