use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use envara_cli::config::{parse_config, ExperimentConfig, ExperimentKind};
use envara_cli::experiments::execute;
use envara_cli::HarnessError;

#[derive(Parser)]
#[command(
    name = "envara",
    version,
    about = "Reaction-diffusion splitting solver experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment named by the `kind` key of the config file.
    Run(Common),
    /// Time-step convergence of the reaction stepper on a linear ODE.
    OdeConvergence(Common),
    /// Cauchy convergence of the full splitting scheme.
    Cauchy(Common),
    /// Free-energy traces and snapshots.
    EnergyTrace(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file. Defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory. Overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads. Defaults to the number of CPUs.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    verbose: bool,
}

fn load(common: &Common, kind: Option<ExperimentKind>) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match (&common.config, kind) {
        (Some(path), _) => parse_config(path)?,
        (None, Some(kind)) => ExperimentConfig::with_defaults(kind),
        (None, None) => {
            return Err(HarnessError::InvalidConfig {
                key: "--config".into(),
                expected: "a config file path for `run`".into(),
            })
        }
    };
    if let Some(kind) = kind {
        cfg.kind = kind;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, kind) = match &cli.command {
        Command::Run(c) => (c, None),
        Command::OdeConvergence(c) => (c, Some(ExperimentKind::OdeConvergence)),
        Command::Cauchy(c) => (c, Some(ExperimentKind::CauchyConvergence)),
        Command::EnergyTrace(c) => (c, Some(ExperimentKind::EnergyTrace)),
    };
    let level = if common.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            error!("cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = load(common, kind).and_then(|cfg| execute(&cfg, &cfg.output_dir));
    match result {
        Ok(paths) => {
            for p in paths {
                info!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
