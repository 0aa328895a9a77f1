//! `critlab`: run loss-landscape experiments from a JSON config.
//!
//! Exit codes: 0 when every check passed, 1 when a check failed or a
//! falsification event fired, 2 for configuration and usage errors.

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use critlab_cli::commands::{self, CommandKind, RunOptions};
use critlab_cli::config::load_config;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "critlab",
    version,
    about = "Critical-locus laboratory for small dense networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration (required).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Rayon worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Stream per-step flow data to stderr as CSV.
    #[arg(long, global = true)]
    trace: bool,

    /// Keep null-space basis vectors in the report (they are stripped by
    /// default to keep reports small).
    #[arg(long, global = true)]
    emit_basis: bool,

    /// Run the documented negative controls and require them to fail.
    #[arg(long, global = true)]
    falsify: bool,

    /// Print the dims sweep as a flat CSV table instead of a JSON report.
    #[arg(long, global = true)]
    csv: bool,

    /// Also write the JSON report to this path.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check that every star family is pointwise critical (with the
    /// sum-bias negative control).
    VerifyStar,
    /// Check the two-index core Hessian spectrum: 2n with multiplicity
    /// m_l, zero elsewhere, nothing negative.
    VerifyCore,
    /// Eigen-decompose the loss Hessian at a chosen point.
    Spectrum,
    /// Analyze final-layer slices: ranks, minimizers, descent lines,
    /// level-set witnesses.
    Fiber,
    /// Integrate gradient flow on a catalog function or the network loss.
    Flow,
    /// Tabulate locus dimensions over a range of hidden widths.
    Dims,
}

impl Command {
    fn kind(&self) -> CommandKind {
        match self {
            Command::VerifyStar => CommandKind::VerifyStar,
            Command::VerifyCore => CommandKind::VerifyCore,
            Command::Spectrum => CommandKind::Spectrum,
            Command::Fiber => CommandKind::Fiber,
            Command::Flow => CommandKind::Flow,
            Command::Dims => CommandKind::Dims,
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run_cli(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            2
        }
    };
    std::process::exit(code);
}

fn run_cli(cli: Cli) -> anyhow::Result<i32> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!("--jobs must be positive");
        }
        // Ignore the error if a pool already exists (tests call in-process).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }

    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| anyhow!("--config <path> is required"))?;
    let config = load_config(config_path)?;
    let base_dir = config_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));

    let kind = cli.command.kind();
    if cli.csv && kind != CommandKind::Dims {
        bail!("--csv only applies to the dims sweep");
    }
    let opts = RunOptions {
        trace: cli.trace,
        emit_basis: cli.emit_basis,
        falsify: cli.falsify,
    };

    let report = commands::run(kind, &config, &base_dir, &opts)?;
    let rendered = report.render();
    if cli.csv {
        print!("{}", commands::dims_csv(&report.results)?);
    } else {
        println!("{rendered}");
    }
    if let Some(out) = &cli.out {
        fs::write(out, &rendered)
            .with_context(|| format!("writing report to {}", out.display()))?;
    }
    Ok(report.exit_code())
}
