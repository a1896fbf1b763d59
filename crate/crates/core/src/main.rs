use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use qexodus::cli::{load_config, run, write_outputs};

#[derive(Parser)]
#[command(
    name = "qexodus",
    version,
    about = "Conditioned Markov processes with moving absorbing boundaries"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write report.json plus CSV series.
    Run {
        /// Experiment config (strict JSON, schema 1).
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Worker threads for path simulation (default: all cores).
        /// Results are independent of this setting.
        #[arg(long)]
        threads: Option<usize>,
        /// Print progress and check outcomes to stderr.
        #[arg(long)]
        verbose: bool,
    },
    /// Parse and validate a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            out,
            threads,
            verbose,
        } => {
            if let Some(n) = threads {
                if let Err(e) = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                {
                    eprintln!("error: cannot configure {n} threads: {e}");
                    return ExitCode::from(2);
                }
            }
            let cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let start = Instant::now();
            let report = match run(&cfg) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let elapsed = start.elapsed().as_secs_f64();
            if let Err(e) = write_outputs(&report, &out, elapsed) {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
            if verbose {
                for c in &report.checks {
                    eprintln!(
                        "check {}: {} ({})",
                        c.name,
                        if c.pass { "pass" } else { "FAIL" },
                        c.detail
                    );
                }
                eprintln!("report written to {} in {elapsed:.2}s", out.display());
            }
            if report.pass {
                ExitCode::SUCCESS
            } else {
                eprintln!("one or more checks failed; see report.json");
                ExitCode::from(1)
            }
        }
        Command::Validate { config } => match load_config(&config) {
            Ok(_) => {
                println!("ok");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
    }
}
