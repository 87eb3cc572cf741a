//! `silt-lab`: runs one configured experiment and writes its report.
//!
//! Exit status: 0 when every gate passes, 1 when a gate fails, 2 on a
//! configuration, resource or I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use silt_core::harness::{self, ExperimentConfig, ExperimentKind, OUTPUT_ENV};
use silt_core::Error;

#[derive(Parser)]
#[command(name = "silt-lab", version, about = "Seeded experiments on nested walks and their self-intersections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact identity suites.
    Verify(RunArgs),
    /// Convergence-rate studies.
    Convergence(RunArgs),
    /// Monte Carlo estimation of alpha or gamma.
    Estimate(RunArgs),
    /// Closed-form self-checks and expectation Monte Carlo.
    Expect(RunArgs),
    /// SILT mass, occupation and Erdős–Taylor checks.
    Occupation(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the environment and the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    parallel: Option<usize>,
}

impl Command {
    fn split(self) -> (&'static [ExperimentKind], RunArgs) {
        use ExperimentKind::*;
        match self {
            Command::Verify(a) => (&[VerifyIdentities], a),
            Command::Convergence(a) => (&[Convergence], a),
            Command::Estimate(a) => (&[EstimateAlpha, EstimateGamma], a),
            Command::Expect(a) => (&[Expectations], a),
            Command::Occupation(a) => (&[Occupation], a),
        }
    }
}

fn execute(command: Command) -> Result<bool, Error> {
    let (kinds, args) = command.split();
    let mut config = ExperimentConfig::load(&args.config)?;
    if !kinds.contains(&config.kind) {
        return Err(Error::ConfigInvalid(format!("subcommand does not run kind {:?}", config.kind)));
    }
    let dir = harness::output_dir(args.out, std::env::var_os(OUTPUT_ENV), &config);
    config.output.dir = dir.clone();
    if let Some(s) = args.seed {
        config.base_seed = s;
    }
    if let Some(n) = args.replicas {
        config.replicas = n;
    }
    if let Some(p) = args.parallel {
        config.parallelism = p;
    }
    let report = harness::run(&config)?;
    for suite in &report.suites {
        let status = if suite.passed { "PASS" } else { "FAIL" };
        println!("{status} {}", suite.suite);
        for m in suite.metrics.iter().filter(|m| m.passed == Some(false)) {
            println!("  {} = {:e} (reference {:?}, se {:?})", m.metric, m.value, m.reference, m.se);
        }
    }
    for path in harness::emit(&report, &dir)? {
        println!("wrote {}", path.display());
    }
    Ok(report.passed)
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("silt-lab: {e}");
            ExitCode::from(2)
        }
    }
}
