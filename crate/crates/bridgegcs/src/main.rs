//! Command-line front end for the storage-planning pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bridgegcs::config::{self, RunConfig};
use bridgegcs::error::Result;
use bridgegcs::eval::{AblationKind, SweepParam};
use bridgegcs::pipeline;

#[derive(Parser)]
#[command(name = "bridgegcs", version, about = "Desk-scale CO2 storage planning pipeline")]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the run-level seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overwrite existing stage outputs.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate lifecycles and write the dataset.
    GenData,
    /// Train the state and utility interpolation models.
    TrainBridge,
    /// Train the transition surrogate against the frozen state model.
    TrainSurrogate,
    /// Train the planner against the frozen surrogate and both models.
    TrainPlanner,
    /// Roll out the planner, run the random baseline, write SPI reports.
    Evaluate,
    /// Re-train one arm with a factor removed and compare.
    Ablate {
        #[arg(value_enum)]
        kind: AblateArg,
    },
    /// Grid search over one hyperparameter.
    Sweep {
        #[arg(value_enum)]
        param: SweepArg,
    },
    /// Merge evaluation and ablation outputs into the final comparison.
    Report,
    /// Run every stage in order.
    All,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum AblateArg {
    /// Surrogate without the auxiliary latent loss term.
    Eta0,
    /// Planner without the guidance window.
    NoGuidance,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SweepArg {
    Alpha,
    Eta,
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => config::load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    match cli.command {
        Command::GenData => {
            let dir = pipeline::stage_gen_data(&cfg, cli.force)?;
            println!("dataset written to {}", dir.display());
        }
        Command::TrainBridge => {
            let (s, u) = pipeline::stage_train_bridge(&cfg, cli.force)?;
            println!("bridges written to {} and {}", s.display(), u.display());
        }
        Command::TrainSurrogate => {
            let dir = pipeline::stage_train_surrogate(&cfg, cli.force)?;
            println!("surrogate written to {}", dir.display());
        }
        Command::TrainPlanner => {
            let dir = pipeline::stage_train_planner(&cfg, cli.force)?;
            println!("planner written to {}", dir.display());
        }
        Command::Evaluate => {
            let dir = pipeline::stage_evaluate(&cfg, cli.force)?;
            println!("evaluation written to {}", dir.display());
        }
        Command::Ablate { kind } => {
            let kind = match kind {
                AblateArg::Eta0 => AblationKind::SurrogateEta0,
                AblateArg::NoGuidance => AblationKind::PlannerNoGuidance,
            };
            let dir = pipeline::stage_ablate(&cfg, kind, cli.force)?;
            println!("ablation written to {}", dir.display());
        }
        Command::Sweep { param } => {
            let param = match param {
                SweepArg::Alpha => SweepParam::Alpha,
                SweepArg::Eta => SweepParam::Eta,
            };
            let dir = pipeline::stage_sweep(&cfg, param, cli.force)?;
            println!("sweep written to {}", dir.display());
        }
        Command::Report => {
            let dir = pipeline::stage_report(&cfg, cli.force)?;
            println!("report written to {}", dir.display());
        }
        Command::All => {
            let dir = pipeline::run_all(&cfg, cli.force)?;
            println!("pipeline complete; report at {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("BRIDGEGCS_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
