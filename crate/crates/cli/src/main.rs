use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rollrc_cli::experiment::{any_failed, certify_trace_file};
use rollrc_cli::{run_experiment, sweep, CliError, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "rollrc", version, about = "Online risk-control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Overrides {
    /// Base seed; trial i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of trials.
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every trial of a config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run a config once per grid value of one parameter and rank the values.
    Sweep {
        config: PathBuf,
        /// gamma, target, learning_rate, beta_score, beta_loss, beta_low or beta_high.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Recompute the certificates of an exported trace.
    Certify { config: PathBuf, trace: PathBuf },
}

fn load(path: &PathBuf, o: &Overrides) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(seed) = o.seed {
        cfg.seed = seed;
        cfg.seeds = None;
    }
    if let Some(trials) = o.trials {
        cfg.trials = trials;
        if cfg.seeds.as_ref().is_some_and(|s| s.len() != trials) {
            cfg.seeds = None;
        }
    }
    if let Some(out) = &o.out {
        cfg.output = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit(failed: bool) -> ExitCode {
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, overrides } => load(&config, &overrides).and_then(|cfg| {
            let summary = run_experiment(&cfg, &cfg.output)?;
            println!("{}", serde_json::to_string_pretty(&summary.aggregate)?);
            Ok(summary.any_failed())
        }),
        Command::Sweep {
            config,
            param,
            grid,
            overrides,
        } => load(&config, &overrides).and_then(|cfg| {
            let result = sweep(&cfg, &param, &grid, &cfg.output)?;
            print!("{}", result.table());
            Ok(result.any_failed())
        }),
        Command::Certify { config, trace } => ExperimentConfig::from_path(&config).and_then(|cfg| {
            let certs = certify_trace_file(&cfg, &trace)?;
            for c in &certs {
                println!("{c}");
            }
            Ok(any_failed(&certs))
        }),
    };
    match result {
        Ok(failed) => exit(failed),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
