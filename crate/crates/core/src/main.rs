use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use recforget::harness::{self, ExperimentConfig, SweepDim};

#[derive(Parser)]
#[command(name = "recforget", version, about = "Recommendation unlearning benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Every configured model, method and strategy at the configured ratio.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeat the experiment over shard counts or unlearning ratios.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = ["shards", "ratio"])]
        dim: String,
        /// Values to sweep; defaults to the config's sweep lists.
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> recforget::Result<()> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let output = harness::run_experiment(&cfg)?;
            harness::emit_results(&output, &dir)?;
            log::info!("wrote {} rows to {}", output.rows.len(), dir.display());
        }
        Command::Sweep {
            config,
            dim,
            values,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dim: SweepDim = dim.parse()?;
            let values = if values.is_empty() {
                match dim {
                    SweepDim::Shards => cfg.sweep.shards.iter().map(|&s| s as f64).collect(),
                    SweepDim::Ratio => cfg.sweep.ratios.clone(),
                }
            } else {
                values
            };
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let output = harness::sweep(&cfg, dim, &values)?;
            harness::emit_results(&output, &dir)?;
            log::info!("wrote {} rows to {}", output.rows.len(), dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
