use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use dsgtm_core::harness::{
    bounds_report, load_config, run_experiment, sweep, validate_experiment, write_sweep_csv, Experiment,
};

/// Simulate and analyze momentum gradient tracking over time-varying
/// directed graphs.
#[derive(Parser)]
#[command(name = "dsgtm", version, about)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `experiment.master_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the configured one, then
        /// `$DSGTM_OUTPUT_ROOT/<name>`, then `runs/<name>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the admissible stepsize and momentum table.
    Bounds {
        #[arg(long)]
        config: PathBuf,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Check graphs, weights and flows of the configuration without optimizing.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a grid of homogeneous (alpha, beta) values and report rho(M) and
    /// the final optimality gap as CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        alpha_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        beta_grid: Vec<f64>,
        /// CSV destination; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run { config, seed, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.experiment.master_seed = seed;
            }
            let output = run_experiment(&cfg, out.as_deref())?;
            let last = output.aggregate.mean.last().copied().unwrap_or([f64::NAN; 7]);
            println!("{} seed(s), {} iterations", output.records.len(), cfg.experiment.horizon);
            println!("final opt_gap {:e}, consensus {:e}, loss {:e}, accuracy {}", last[0], last[1], last[4], last[5]);
            println!("results in {}", output.dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Bounds { config, csv } => {
            let cfg = load_config(&config)?;
            let exp = Experiment::prepare(&cfg)?;
            let report = bounds_report(&exp)?;
            println!("{report}");
            if let Some(path) = csv {
                let mut out = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
                report.write_csv(&mut out)?;
                out.flush()?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            let report = validate_experiment(&cfg)?;
            println!("{report}");
            Ok(if report.all_passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Sweep { config, alpha_grid, beta_grid, out } => {
            let cfg = load_config(&config)?;
            let exp = Experiment::prepare(&cfg)?;
            let rows = sweep(&exp, &alpha_grid, &beta_grid)?;
            match out {
                Some(path) => {
                    let mut file =
                        BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
                    write_sweep_csv(&rows, &mut file)?;
                    file.flush()?;
                }
                None => write_sweep_csv(&rows, &mut io::stdout().lock())?,
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
