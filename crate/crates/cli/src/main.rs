use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use blowuplab::config::{ExperimentConfig, Suite};
use blowuplab::execute;
use blowuplab::plot::{emit_plot_spec, PlotKind};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "blowuplab", version, about = "Verification suites for stable blow-up of u_t = u_xx + |u|^{p-1}u + h(u)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML); defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; BLOWUPLAB_OUT takes precedence.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = default_jobs())]
    jobs: usize,
    /// Seed for probe jitter; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Subcommand)]
enum Command {
    /// Profile ODE, potential and source-term decay (criteria 3-5).
    Profiles(Common),
    /// Hermite orthogonality and the Mehler semigroup (criteria 1-2).
    Spectral(Common),
    /// The linearized flow and its envelope bounds (criterion 6).
    Kernel(Common),
    /// Cross-solver consistency (criterion 9).
    Dynamics(Common),
    /// Two-parameter shooting (criterion 7).
    Shoot(Common),
    /// Physical-variable blow-up (criterion 8).
    Physical(Common),
    /// Every suite.
    All(Common),
    /// The suite named by `experiment.suite` in the config (every suite if absent).
    Run(Common),
    /// Writes a plot specification for an artifact CSV.
    Plot {
        csv: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKind,
    },
}

enum Failure {
    Config(String),
    Runtime(anyhow::Error),
    Criteria(String),
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (suite, common) = match cli.command {
        Command::Plot { csv, kind } => {
            let out = emit_plot_spec(&csv, kind).map_err(|e| Failure::Runtime(e.into()))?;
            println!("{}", out.display());
            return Ok(());
        }
        Command::Profiles(c) => (Some(Suite::Profiles), c),
        Command::Spectral(c) => (Some(Suite::Spectral), c),
        Command::Kernel(c) => (Some(Suite::Kernel), c),
        Command::Dynamics(c) => (Some(Suite::Dynamics), c),
        Command::Shoot(c) => (Some(Suite::Shoot), c),
        Command::Physical(c) => (Some(Suite::Physical), c),
        Command::All(c) => (Some(Suite::All), c),
        Command::Run(c) => (None, c),
    };
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| Failure::Config(e.to_string()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let suite = suite.or(cfg.experiment.suite).unwrap_or(Suite::All);
    if common.jobs == 0 {
        return Err(Failure::Config("--jobs must be at least 1".into()));
    }
    let out = std::env::var_os("BLOWUPLAB_OUT")
        .map(PathBuf::from)
        .or(common.out)
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("blowuplab-out"));
    let (manifest, path) = execute(suite, &cfg, &out, common.jobs)
        .with_context(|| format!("suite {}", suite.name()))
        .map_err(Failure::Runtime)?;
    for c in &manifest.criteria {
        print!("{c}");
    }
    println!("manifest: {}", path.display());
    if manifest.pass {
        Ok(())
    } else {
        let failed: Vec<String> = manifest.criteria.iter().filter(|c| !c.pass).map(|c| c.id.to_string()).collect();
        Err(Failure::Criteria(format!("suite {}: criteria {} failed", suite.name(), failed.join(", "))))
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Criteria(m)) => {
            eprintln!("{m}");
            ExitCode::from(1)
        }
    }
}
