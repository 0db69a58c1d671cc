//! `capcoord`: data generation, capacity paths, training and backtests from one binary.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] capcoord::Error),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) | CliError::Core(capcoord::Error::Config(_)) => "config",
            CliError::Core(e) if e.is_numeric() => "numeric",
            CliError::Core(_) => "data",
        }
    }

    fn exit_code(&self) -> u8 {
        match self.kind() {
            "usage" | "config" => 2,
            "numeric" => 4,
            _ => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "capcoord", version, about = "Capacity-coordinated inventory control")]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Eval,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic product population.
    GenerateData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        #[arg(long, default_value = "data.csv")]
        out: PathBuf,
    },
    /// Sample capacity paths from the Haar prior.
    SamplePaths(SamplePathsArgs),
    /// Train the buying policy against teacher-forced dual costs.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        paths: PathBuf,
        #[arg(long, default_value = "policy.toml")]
        out: PathBuf,
        /// Per-iteration training metrics.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Train the neural coordinator against a trained policy.
    TrainCoordinator {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value = "coordinator.toml")]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Evaluate a policy and coordinator on capacity paths.
    Backtest {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        policy: PathBuf,
        /// A coordinator checkpoint, `mpc` or `none`.
        #[arg(long)]
        coordinator: String,
        #[arg(long)]
        paths: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "report.csv")]
        out: PathBuf,
    },
    /// Merge backtest reports into a summary table.
    Report {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "table.csv")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct SamplePathsArgs {
    /// Defaults for the flags below come from its `[paths]` table and `seed`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub order: Option<u32>,
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub base_level: Option<f64>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Anchor paths to the mean weekly demand volume of this population.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "paths.csv")]
    pub out: PathBuf,
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::GenerateData { config, split, out } => {
            let split = match split {
                SplitArg::Train => capcoord::synth::Split::Train,
                SplitArg::Eval => capcoord::synth::Split::Eval,
            };
            run::generate_data(&config, split, &out)
        }
        Command::SamplePaths(args) => run::sample_paths(&args),
        Command::Train { config, data, paths, out, metrics } => {
            run::train(&config, &data, &paths, &out, metrics.as_deref())
        }
        Command::TrainCoordinator { config, data, policy, out, metrics } => {
            run::train_coordinator(&config, &data, &policy, &out, metrics.as_deref())
        }
        Command::Backtest { config, policy, coordinator, paths, data, out } => {
            run::backtest(config.as_deref(), &policy, &coordinator, &paths, &data, &out)
        }
        Command::Report { inputs, out } => run::report(&inputs, &out),
    }
}

fn main() -> ExitCode {
    let result = match Cli::try_parse() {
        Ok(cli) => dispatch(cli),
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or_default();
            Err(CliError::Usage(first.trim_start_matches("error: ").to_string()))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {}", e.kind(), msg.trim());
            ExitCode::from(e.exit_code())
        }
    }
}
