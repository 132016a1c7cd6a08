use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use frontlab::harness::{run, Experiment, ExperimentConfig};
use frontlab::Error;

/// Batch experiments for nonlocal Allen-Cahn fronts.
#[derive(Parser, Debug)]
#[command(name = "frontlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Traveling wave profile, speed and mobility.
    Wave(RunArgs),
    /// Mobility and diffusion-matrix table over directions.
    Coefficients(RunArgs),
    /// Convergence of the oscillating average as eps decreases.
    AbarConvergence(RunArgs),
    /// Phase-field, level-set and exact radius of a shrinking disk.
    ShrinkingCircle(RunArgs),
    /// Level-set shrinkage with an anisotropic coefficient table.
    AnisotropicFront(RunArgs),
    /// Closure integrals against the direct K integral.
    AppendixCheck(RunArgs),
    /// Fractional curvature of circles.
    KappaCheck(RunArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Experiment file (sectioned key = value).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps and parallel kernels.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    verbose: bool,
}

impl Command {
    fn split(self) -> (Experiment, RunArgs) {
        match self {
            Command::Wave(a) => (Experiment::Wave, a),
            Command::Coefficients(a) => (Experiment::Coefficients, a),
            Command::AbarConvergence(a) => (Experiment::AbarConvergence, a),
            Command::ShrinkingCircle(a) => (Experiment::ShrinkingCircle, a),
            Command::AnisotropicFront(a) => (Experiment::AnisotropicFront, a),
            Command::AppendixCheck(a) => (Experiment::AppendixCheck, a),
            Command::KappaCheck(a) => (Experiment::KappaCheck, a),
        }
    }
}

fn main() -> ExitCode {
    let (experiment, args) = Cli::parse().command.split();
    if let Some(k) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build_global() {
            eprintln!("error: cannot size the thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    match ExperimentConfig::parse(&text) {
        Ok(cfg) if cfg.experiment != experiment => {
            eprintln!("error: {} describes `{}`, not `{experiment}`", args.config.display(), cfg.experiment);
            return ExitCode::from(2);
        }
        Ok(_) => {}
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    }
    let verbose = args.verbose;
    let mut log = |msg: &str| {
        if verbose {
            eprintln!("[frontlab] {msg}");
        }
    };
    match run(&text, args.out.as_deref(), &mut log) {
        Ok((manifest, _)) => {
            for (k, v) in &manifest.summary {
                println!("{k} = {v}");
            }
            for w in &manifest.warnings {
                eprintln!("warning: {w}");
            }
            ExitCode::SUCCESS
        }
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
