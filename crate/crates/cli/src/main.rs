//! `gtf`: runs one experiment, writes `<name>.csv` and `<name>.json` to the
//! output directory and exits 0 when every check passes, 1 when a check
//! fails and 2 on configuration errors.

mod config;
mod experiments;
mod report;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ExperimentConfig, Format, Options};
use experiments::RunError;
use report::Report;

#[derive(Parser)]
#[command(name = "gtf", version, about = "Generalized tensor field experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Jets of the geodesic flow against their closed forms.
    Geodesic(Options),
    /// Transport-operator jets and a holonomy loop.
    Transport(Options),
    /// Mollifier moments and kernel order.
    Kernel(Options),
    /// Embedding rates, weak convergence and injectivity.
    Embed(Options),
    /// Lie-derivative commutators and the second-order formula.
    Commute(Options),
}

fn write(cfg: &ExperimentConfig, rep: &Report) -> std::io::Result<()> {
    std::fs::create_dir_all(&cfg.out)?;
    if matches!(cfg.format, Format::Csv | Format::Both) {
        report::write_csv(&cfg.out.join(format!("{}.csv", cfg.name)), &rep.rows)?;
    }
    if matches!(cfg.format, Format::Json | Format::Both) {
        report::write_json(&cfg.out.join(format!("{}.json", cfg.name)), rep)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, opts, run): (&str, &Options, fn(&ExperimentConfig) -> Result<Report, RunError>) = match &cli.command {
        Command::Geodesic(o) => ("geodesic", o, experiments::geodesic),
        Command::Transport(o) => ("transport", o, experiments::transport),
        Command::Kernel(o) => ("kernel", o, experiments::kernel),
        Command::Embed(o) => ("embed", o, experiments::embed),
        Command::Commute(o) => ("commute", o, experiments::commute),
    };
    let cfg = match ExperimentConfig::resolve(name, opts) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("gtf: config error: {e}");
            return ExitCode::from(2);
        }
    };
    let rep = match run(&cfg) {
        Ok(r) => r,
        Err(RunError::Config(e)) => {
            eprintln!("gtf: config error: {e}");
            return ExitCode::from(2);
        }
        Err(RunError::Compute(e)) => {
            eprintln!("gtf: FAIL {name}: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = write(&cfg, &rep) {
        eprintln!("gtf: cannot write to {}: {e}", cfg.out.display());
        return ExitCode::from(2);
    }
    for c in &rep.checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let mut code = ExitCode::SUCCESS;
    for c in rep.failures() {
        eprintln!("gtf: FAIL {}: {}", c.name, c.detail);
        code = ExitCode::from(1);
    }
    code
}
