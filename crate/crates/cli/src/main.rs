//! `krot` command-line front-end: build fixtures, run solvers and sweeps
//! from JSON configs, and emit plot-ready reports.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::bail;
use clap::{Args, Parser, Subcommand};

use config::Experiment;
use run::RunContext;

#[derive(Parser)]
#[command(name = "krot", version, about = "Knothe-Rosenblatt limits of weighted-cost optimal transport")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's `output`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker pool size for sweep cells; 1 keeps timing fields reproducible.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Suppress per-cell summary lines and warnings.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Single hard or soft solve at one (epsilon, lambda).
    Solve(CommonArgs),
    /// Knothe-Rosenblatt plan and maps for the fixture.
    Kr(CommonArgs),
    /// Exact solves along a decreasing epsilon list.
    SweepHard(CommonArgs),
    /// Soft solves over an (epsilon, lambda) grid.
    SweepSoft(CommonArgs),
    /// Four-corner commutative diagram of the limits.
    Diagram(CommonArgs),
    /// KL decay against the 2M/lambda bound along a lambda list.
    KlDecay(CommonArgs),
    /// Displacement interpolation with action, optimality and triangularity
    /// diagnostics.
    Dynamic(CommonArgs),
    /// Hard sweeps on mollified marginals.
    Stability(CommonArgs),
}

impl Command {
    fn split(&self) -> (Experiment, &CommonArgs) {
        match self {
            Command::Solve(a) => (Experiment::Solve, a),
            Command::Kr(a) => (Experiment::Kr, a),
            Command::SweepHard(a) => (Experiment::SweepHard, a),
            Command::SweepSoft(a) => (Experiment::SweepSoft, a),
            Command::Diagram(a) => (Experiment::Diagram, a),
            Command::KlDecay(a) => (Experiment::KlDecay, a),
            Command::Dynamic(a) => (Experiment::Dynamic, a),
            Command::Stability(a) => (Experiment::Stability, a),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, args) = cli.command.split();
    match execute(experiment, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(experiment: Experiment, args: &CommonArgs) -> anyhow::Result<()> {
    let config = config::parse_config(&args.config)?;
    if config.experiment != experiment {
        bail!(
            "experiment mismatch: subcommand `{}` vs config.experiment `{}`",
            experiment.name(),
            config.experiment.name()
        );
    }
    let out_dir = match (&args.out, &config.output) {
        (Some(dir), _) => dir.clone(),
        (None, Some(dir)) => PathBuf::from(dir),
        (None, None) => bail!("no output directory: pass --out or set `output` in the config"),
    };
    if args.threads == 0 {
        bail!("--threads must be at least 1");
    }
    let ctx = RunContext { config, out_dir, quiet: args.quiet };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(args.threads).build()?;
    let outcome = pool.install(|| run::run(&ctx));
    if let Err(e) = &outcome {
        // Flush a failure report so the output directory stays interpretable.
        let _ = run::write_failure_report(&ctx, e);
    }
    outcome
}
