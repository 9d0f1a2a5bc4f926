use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedqhd::harness::{run_experiment, run_sweep, HarnessError, RunConfig, SweepKind};

#[derive(Parser)]
#[command(name = "fedqhd", version, about = "Federated Q-learning over random-feature encoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a federation and write rounds.jsonl and summary.csv.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds; overrides `seeds` in the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Run a sweep and write sweep_<kind>.csv.
    Sweep {
        #[arg(long, value_parser = ["dimension", "anchor", "scalability"])]
        kind: String,
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
}

fn load(path: &PathBuf, out: Option<PathBuf>, seeds: Option<Vec<u64>>) -> Result<RunConfig, HarnessError> {
    let mut config = RunConfig::load(path)?;
    if let Some(out) = out {
        config.output_dir = out;
    }
    if let Some(seeds) = seeds {
        config.seeds = seeds;
    }
    config.validate()?;
    Ok(config)
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { config, out, seeds } => {
            let config = load(&config, out, seeds)?;
            let summary = run_experiment(&config, &config.output_dir)?;
            for (seed, v) in &summary.per_seed {
                println!("seed {seed}: final-100 mean return {v:.2}");
            }
            println!("overall: {:.2}", summary.overall);
            println!("wrote {}", config.output_dir.display());
        }
        Command::Sweep { kind, config, out, seeds } => {
            let kind: SweepKind = kind.parse()?;
            let config = load(&config, out, seeds)?;
            let output = run_sweep(kind, &config, &config.output_dir)?;
            for row in output.mean_rows() {
                println!("{}", row.to_csv_line());
            }
            if let Some(fit) = output.fit_row() {
                println!(
                    "fit {}: slope {:.4} intercept {:.4} r2 {:.4}",
                    fit.config_id,
                    fit.slope.unwrap_or(f64::NAN),
                    fit.intercept.unwrap_or(f64::NAN),
                    fit.r2.unwrap_or(f64::NAN)
                );
            }
            println!("wrote {}", output.path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
