use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hkflow::runner;

#[derive(Parser)]
#[command(
    name = "hkflow",
    about = "Second-order metric flow laboratory on flat complex tori",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Output directory (default: hkflow_out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker-count hint; results are deterministic regardless
    /// (HKFLOW_THREADS is the environment fallback).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

/// Reads `out_dir` from a config file without full validation, so the
/// output default can come from the config itself.
fn config_out_dir(path: &std::path::Path) -> Option<PathBuf> {
    let text = std::fs::read_to_string(path).ok()?;
    let value: serde_json::Value = serde_json::from_str(&text).ok()?;
    value.get("out_dir")?.as_str().map(PathBuf::from)
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate a configured run and persist snapshots and series.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a stored snapshot (bit-exact continuation).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Check the evolution identities along a trajectory.
    /// `--config` accepts a config file or a run directory with snapshots.
    Verify {
        #[arg(long)]
        config: PathBuf,
    },
    /// Time-step and resolution refinement study.
    Converge {
        #[arg(long)]
        config: PathBuf,
    },
    /// Static geometry report of the initial metric.
    Curvature {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config_path = match &cli.cmd {
        Cmd::Run { config, .. }
        | Cmd::Verify { config }
        | Cmd::Converge { config }
        | Cmd::Curvature { config } => config.clone(),
    };
    let out = cli.out.unwrap_or_else(|| {
        config_out_dir(&config_path).unwrap_or_else(|| PathBuf::from("hkflow_out"))
    });
    let threads = runner::resolve_threads(cli.threads);

    let outcome = match &cli.cmd {
        Cmd::Run { config, resume } => {
            runner::cmd_run(config, &out, resume.as_deref(), threads).map(|_| true)
        }
        Cmd::Verify { config } => runner::cmd_verify(config, &out, threads),
        Cmd::Converge { config } => runner::cmd_converge(config, &out).map(|_| true),
        Cmd::Curvature { config } => runner::cmd_curvature(config, &out).map(|_| true),
    };

    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("hkflow: identity checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("hkflow: {e}");
            ExitCode::from(e.exit_status() as u8)
        }
    }
}
