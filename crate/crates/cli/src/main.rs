use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lula_cli::{cmd_demo_toy, cmd_eval, cmd_laplace, cmd_lula, cmd_train, CliError, ExperimentConfig};

/// Laplace-approximated networks with LULA uncertainty units.
#[derive(Debug, Parser)]
#[command(name = "lula-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the MAP network.
    Train {
        #[command(flatten)]
        common: Common,
        /// Model file to write.
        #[arg(long, default_value = "model.txt")]
        out: PathBuf,
    },
    /// Fit the Laplace posterior and report the prior precision.
    Laplace {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "model.txt")]
        model: PathBuf,
        /// Summary file to write.
        #[arg(long, default_value = "laplace.txt")]
        out: PathBuf,
    },
    /// Add and train LULA units.
    Lula {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "model.txt")]
        model: PathBuf,
        /// Augmented model file to write.
        #[arg(long, default_value = "lula.txt")]
        out: PathBuf,
    },
    /// Repeated predictive evaluation on test and outlier sets.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "model.txt")]
        model: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// MAP, Laplace and LULA grids on the toy problems.
    DemoToy {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long, default_value = "demo")]
        out: PathBuf,
    },
    /// Print the configuration reference with every default.
    Defaults,
}

fn load_config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.override_seed(seed);
    }
    Ok(cfg)
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("LULA_LAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("LULA_LAB_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot set up {n} threads: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let written = |p: &Path| println!("wrote {}", p.display());
    match cli.command {
        Command::Defaults => print!("{}", ExperimentConfig::reference()),
        Command::Train { common, out } => {
            cmd_train(&load_config(&common)?, &out)?;
            written(&out);
        }
        Command::Laplace { common, model, out } => {
            cmd_laplace(&load_config(&common)?, &model, &out)?;
            written(&out);
        }
        Command::Lula { common, model, out } => {
            cmd_lula(&load_config(&common)?, &model, &out)?;
            written(&out);
        }
        Command::Eval { common, model, out } => {
            cmd_eval(&load_config(&common)?, &model, &out)?;
            written(&out);
        }
        Command::DemoToy { common, out } => {
            cmd_demo_toy(&load_config(&common)?, &out)?;
            written(&out);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lula-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
