// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use bounded_idapbc::bench::BenchmarkName;
use clap::{Args, Parser, Subcommand};
use idapbc_cli::{run, AppError, Command, RunSpec};

#[derive(Parser)]
#[command(
    name = "idapbc",
    version,
    about = "Matching checks, a-priori bounds and monitored simulation for IDA-PBC designs"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Check the matching equations and the equilibrium; writes matching.json.
    Verify(Opts),
    /// Estimate constants and bounds; writes constants.json and bounds.json.
    Bound(Opts),
    /// Run with bound monitors; writes trajectory.csv and summary.json.
    Simulate(Opts),
    /// All of the above.
    Benchmark(Opts),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// ball-beam, vtol-nonsmooth or vtol-two-phase.
    #[arg(long)]
    benchmark: Option<BenchmarkName>,
    /// TOML run specification.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct Opts {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "t-end")]
    t_end: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sample count for the constant estimates.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    mu: Option<f64>,
    /// Seed of the constant validation draw.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the effective specification as TOML.
    #[arg(long = "write-config")]
    write_config: Option<PathBuf>,
}

fn build_spec(command: Command, o: &Opts) -> Result<RunSpec, AppError> {
    let mut spec = match (&o.source.config, o.source.benchmark) {
        (Some(path), _) => RunSpec::load(path, Some(command))?,
        (None, Some(name)) => RunSpec::new(command, name),
        (None, None) => unreachable!("clap enforces the source group"),
    };
    if let Some(v) = o.dt {
        spec.simulation.dt = v;
    }
    if let Some(v) = o.t_end {
        spec.simulation.t_end = Some(v);
    }
    if let Some(v) = &o.out {
        spec.output.dir = v.clone();
    }
    if let Some(v) = o.samples {
        spec.bounds.samples = v;
    }
    if let Some(v) = o.mu {
        spec.bounds.mu = v;
    }
    if let Some(v) = o.seed {
        spec.bounds.seed = v;
    }
    spec.validate()?;
    if let Some(path) = &o.write_config {
        std::fs::write(path, spec.to_toml()?).map_err(|e| AppError::io(path, e))?;
    }
    Ok(spec)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, opts) = match &cli.command {
        Sub::Verify(o) => (Command::Verify, o),
        Sub::Bound(o) => (Command::Bound, o),
        Sub::Simulate(o) => (Command::Simulate, o),
        Sub::Benchmark(o) => (Command::Benchmark, o),
    };
    let result = build_spec(command, opts).and_then(|spec| run(&spec));
    match result {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            if outcome.matching_passed == Some(false) {
                eprintln!("matching check failed");
            }
            if outcome.soundness_violations > 0 {
                eprintln!("{} soundness violations", outcome.soundness_violations);
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
