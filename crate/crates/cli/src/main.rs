use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use volterra_lab::experiments::{cmd_reproduce, run, Command, ExperimentConfig, Overrides, RunReport};
use volterra_lab::mc::with_threads;
use volterra_lab::Error;

/// Simulation and verification of SDEs with additive Gaussian Volterra noise.
#[derive(Parser)]
#[command(name = "vlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Fit the tail-variance and increment exponents of the kernel.
    CheckConditions(Common),
    /// Sample noise paths and store them.
    Simulate(Common),
    /// Solve the equation by the Euler scheme and store the paths.
    Solve(Common),
    /// Monte Carlo study of the two smoothing quantities.
    PeAeSweep(Common),
    /// Estimate the density of the solution and its regularity exponent.
    DensityVerify(Common),
    /// Rerun a config file or the config embedded in a report.
    Reproduce(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config, or for `reproduce` also a report.json.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn execute(command: Option<Command>, args: &Common) -> volterra_lab::Result<RunReport> {
    let overrides = Overrides { seed: args.seed, output_dir: args.out.clone() };
    with_threads(args.threads, || match command {
        Some(command) => {
            let mut cfg = ExperimentConfig::load(&args.config)?;
            cfg.apply(&overrides);
            run(command, &cfg)
        }
        None => cmd_reproduce(&args.config, &overrides),
    })?
}

fn summarize(report: &RunReport) {
    println!("{} finished; output in {}", report.command.name(), report.config.output_dir.display());
    if let Some(c) = &report.conditions {
        println!(
            "  A = {:.4} (expected {:.4}), H = {:.4} (expected {:.4})",
            c.a.estimate, c.a.expected, c.h.estimate, c.h.expected
        );
    }
    for s in report.smoothing.iter().flatten() {
        if let Some(f) = &s.pe_slope_in_h {
            println!("  m = {}: Pe slope in h {:.3} (expected {:.3})", s.m, f.slope, s.expected_pe_slope);
        }
        if let Some(f) = &s.ae_slope_in_eps {
            println!("  m = {}: Ae slope in eps {:.3} (bound {:.3})", s.m, f.slope, s.expected_ae_slope);
        }
    }
    if let Some(d) = &report.density {
        println!("  {}", d.verdict.explanation);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match &cli.command {
        Sub::CheckConditions(a) => (Some(Command::CheckConditions), a),
        Sub::Simulate(a) => (Some(Command::Simulate), a),
        Sub::Solve(a) => (Some(Command::Solve), a),
        Sub::PeAeSweep(a) => (Some(Command::PeAeSweep), a),
        Sub::DensityVerify(a) => (Some(Command::DensityVerify), a),
        Sub::Reproduce(a) => (None, a),
    };
    match execute(command, args) {
        Ok(report) => {
            summarize(&report);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_validation() {
        2
    } else {
        3
    }
}
