use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use involute_core::{cmd_invert, cmd_run, cmd_verify, Overrides};

#[derive(Parser)]
#[command(name = "involute", version, about = "Jump flows of involutive vector fields: simulate, invert, verify")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Gates plus trajectories and alpha/beta paths for every lambda query.
    Run(Common),
    /// Contraction constants and psi for every x query.
    Invert(Common),
    /// All residual identities with refinement studies.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for per-query parallelism (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Multiplies every pass threshold.
    #[arg(long = "tol-scale")]
    tol_scale: Option<f64>,
}

type Entry = fn(&Path, &Path, &Overrides) -> i32;

fn main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    let (run, args): (Entry, Common) = match cli.command {
        Command::Run(a) => (cmd_run, a),
        Command::Invert(a) => (cmd_invert, a),
        Command::Verify(a) => (cmd_verify, a),
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("building the worker pool")?;
    let overrides = Overrides { seed: args.seed, tol_scale: args.tol_scale };
    let code = pool.install(|| run(&args.config, &args.out, &overrides));
    let report = args.out.join("report.json");
    match code {
        0 => eprintln!("ok: {}", report.display()),
        c => eprintln!("exit {c}: see {}", report.display()),
    }
    Ok(ExitCode::from(code as u8))
}
