use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

mod commands;
mod manifest;
mod output;
mod svg;

use commands::{Ctx, SimulateArgs};
use manifest::{Format, Manifest};

/// Service-time lab for ARQ, HARQ and network-coded links.
#[derive(Debug, Parser)]
#[command(name = "svclab", version)]
struct Cli {
    /// TOML run manifest.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides SVCLAB_OUT and the manifest).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for simulations and studies.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Report formats. CSV is always written; `svg` adds plots.
    #[arg(long, global = true, value_enum, value_delimiter = ',')]
    format: Vec<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form expected service times to analytic.csv.
    Analytic,
    /// One simulation run to records.csv and summary.csv.
    Simulate(SimulateArgs),
    /// MCS policy curves over an SNR range to curves.csv.
    Sweep,
    /// 99th-percentile service times over the erasure grid to sla.csv.
    Sla,
    /// Synthetic BLER table to bler_table.csv.
    GenBler,
    /// All comparison figures (fig4..fig8) as CSV, plus SVG on request.
    Figures {
        /// Restrict to these figures, e.g. `--only fig5,fig8`.
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let manifest = Manifest::load(cli.config.as_deref())?;
    let out = manifest.out_dir(cli.out.as_deref());
    let svg = manifest.wants_svg(&cli.format);
    let ctx = Ctx { manifest, out, svg };
    match &cli.command {
        Command::Analytic => commands::analytic(&ctx),
        Command::Simulate(args) => commands::simulate(&ctx, args, cli.seed),
        Command::Sweep => commands::sweep(&ctx),
        Command::Sla => commands::sla(&ctx, cli.seed),
        Command::GenBler => commands::gen_bler(&ctx),
        Command::Figures { only } => commands::figures(&ctx, only, cli.seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
