//! Command-line driver: dataset preparation, recommender pretraining, joint
//! training, evaluation, ablations and gamma sweeps.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use bridgerec::config::RunConfig;
use bridgerec::eval::Variant;
use clap::{ArgAction, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "bridgerec",
    version,
    about = "Co-train a language model and a domain recommender"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(short, long, global = true, default_value = "bridgerec.toml")]
    config: PathBuf,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides `output.dir`.
    #[arg(long, global = true, env = "BRIDGEREC_OUT")]
    out: Option<PathBuf>,

    /// Worker threads for evaluation fan-out.
    #[arg(long, global = true, env = "BRIDGEREC_THREADS")]
    threads: Option<usize>,

    /// Overrides any configuration key, e.g. `--set training.gamma=0.01`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load, filter and persist the dataset with its statistics.
    Prepare,
    /// Pretrain the recommender and save its embedding snapshot.
    TrainDrs,
    /// Joint training from the pretrained snapshot.
    TrainJoint {
        #[arg(long, default_value = "full")]
        variant: Variant,
        /// Defaults to `training.gamma`.
        #[arg(long)]
        gamma: Option<f64>,
        /// Continue from the last saved epoch of this run.
        #[arg(long)]
        resume: bool,
    },
    /// Test metrics of a trained run and of the pretrained recommender.
    Eval {
        #[arg(long, default_value = "full")]
        variant: Variant,
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Every requested variant over the configured seeds.
    Ablate {
        /// Defaults to `eval.variants`.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<Variant>,
    },
    /// Full runs over a gamma grid and the configured seeds.
    Sweep {
        /// Defaults to `eval.gammas`.
        #[arg(long, value_delimiter = ',')]
        gammas: Vec<f64>,
    },
    /// Collect statistics and summaries into a markdown report; sweeps from
    /// other output directories are drawn as extra dataset series.
    Report {
        #[arg(long = "include", value_name = "DIR")]
        include: Vec<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = RunConfig::load_with(&cli.config, &cli.overrides)
        .with_context(|| format!("loading configuration {}", cli.config.display()))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let config = load_config(&cli)?;
    match cli.command {
        Command::Prepare => commands::prepare(&config),
        Command::TrainDrs => commands::train_drs(&config),
        Command::TrainJoint {
            variant,
            gamma,
            resume,
        } => commands::train_joint(&config, variant, gamma, resume),
        Command::Eval { variant, gamma } => commands::eval(&config, variant, gamma),
        Command::Ablate { variants } => commands::ablate(&config, &variants),
        Command::Sweep { gammas } => commands::sweep(&config, &gammas),
        Command::Report { include } => commands::report(&config, &include),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
