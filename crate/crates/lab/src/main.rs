use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scatterlab::config::SweepAxis;
use scatterlab::report::{format_float, RunReport};
use scatterlab::runner::{run, RunOptions};
use scatterlab::sweep::sweep_path;
use scatterlab::LabError;

/// Truncated-Fock-space scattering laboratory.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every check of a configuration.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run the check suite for each value of one axis.
    Sweep {
        config: PathBuf,
        /// dt, n_max, K, approx_level or amplitude.
        #[arg(long)]
        axis: Option<String>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Re-validate the tolerances recorded in a report.
    Check { report: PathBuf },
}

fn print_report(report: &RunReport) {
    for c in &report.checks {
        let value = c.value.map(format_float).unwrap_or_else(|| "-".into());
        let tol = c.tolerance.map(format_float).unwrap_or_else(|| "-".into());
        let status = if c.pass { "PASS" } else { "FAIL" };
        match &c.message {
            Some(m) => println!("{status} {} value={value} tolerance={tol} ({m})", c.name),
            None => println!("{status} {} value={value} tolerance={tol}", c.name),
        }
    }
}

fn status(report: &RunReport) -> ExitCode {
    if report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn execute(cli: Cli) -> Result<ExitCode, LabError> {
    match cli.command {
        Command::Run { config, out, workers } => {
            let report = run(&config, &RunOptions { out, workers })?;
            print_report(&report);
            Ok(status(&report))
        }
        Command::Sweep {
            config,
            axis,
            values,
            out,
            workers,
        } => {
            let axis = axis.map(|a| a.parse::<SweepAxis>()).transpose()?;
            let report = sweep_path(&config, axis, values, &RunOptions { out, workers })?;
            print_report(&report);
            Ok(status(&report))
        }
        Command::Check { report } => {
            let bytes = std::fs::read(&report).map_err(|e| LabError::Config(format!("{}: {e}", report.display())))?;
            let parsed = RunReport::from_json(&bytes)?;
            let inconsistent = parsed.inconsistent_records();
            for c in &inconsistent {
                println!("INCONSISTENT {}: stored pass flag disagrees with value and tolerance", c.name);
            }
            print_report(&parsed);
            let all_pass = parsed.checks.iter().all(|c| c.evaluate());
            Ok(if inconsistent.is_empty() && all_pass && parsed.pass == all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
