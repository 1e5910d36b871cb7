//! `euclid`: generate synthetic experiments, train ICNN ensembles on them and
//! evaluate the learned material models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

/// Configuration or usage problem, reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "euclid", version, about = "Unsupervised hyperelastic model discovery with input-convex networks")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the training experiment and write a measurement dataset.
    Generate(GenerateArgs),
    /// Train an ensemble of networks on a dataset.
    Train(TrainArgs),
    /// Compare trained members with the true model along homogeneous paths.
    Evaluate(EvalArgs),
    /// Redeploy the best member on the validation specimen.
    Deploy(EvalArgs),
    /// Paths, invariant clouds and redeployment in one report.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    model: Option<String>,
    /// Displacement noise standard deviation.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Node count of the simulation mesh.
    #[arg(long)]
    fine_nodes: Option<usize>,
    /// Node count of the measurement mesh.
    #[arg(long)]
    coarse_nodes: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    ensemble: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    accept_margin: Option<f64>,
    /// Number of fiber families to discover; defaults to that of the
    /// generating model.
    #[arg(long)]
    fibers: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Ensemble directory written by `train`.
    #[arg(long)]
    models: Option<PathBuf>,
    /// Ground-truth benchmark model.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    gamma_max: Option<f64>,
    /// Node count of the validation mesh.
    #[arg(long)]
    validation_nodes: Option<usize>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Dataset whose invariants are added to the cloud.
    #[arg(long)]
    data: Option<PathBuf>,
}

fn apply_eval(cfg: &mut RunConfig, a: &EvalArgs) {
    if let Some(v) = &a.models {
        cfg.paths.models_dir = v.clone();
    }
    if let Some(v) = &a.model {
        cfg.model = v.clone();
    }
    if let Some(v) = &a.out {
        cfg.paths.out_dir = v.clone();
    }
    if let Some(v) = a.gamma_max {
        cfg.evaluation.gamma_max = v;
    }
    if let Some(v) = a.validation_nodes {
        cfg.specimen.validation_nodes = v;
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate(a) => {
            if let Some(v) = a.model {
                cfg.model = v;
            }
            if let Some(v) = a.noise {
                cfg.noise.sigma_u = v;
            }
            if let Some(v) = a.seed {
                cfg.noise.seed = v;
            }
            if let Some(v) = a.out {
                cfg.paths.data_dir = v;
            }
            if let Some(v) = a.fine_nodes {
                cfg.specimen.fine_nodes = v;
            }
            if let Some(v) = a.coarse_nodes {
                cfg.specimen.coarse_nodes = v;
            }
            cfg.validate()?;
            commands::generate(&cfg)
        }
        Command::Train(a) => {
            if let Some(v) = a.data {
                cfg.paths.data_dir = v;
            }
            if let Some(v) = a.out {
                cfg.paths.models_dir = v;
            }
            if let Some(v) = a.ensemble {
                cfg.train.ensemble_size = v;
            }
            if let Some(v) = a.epochs {
                cfg.train.epochs = v;
            }
            if let Some(v) = a.seed {
                cfg.train.seed = v;
            }
            if let Some(v) = a.accept_margin {
                cfg.train.acceptance_margin = v;
            }
            cfg.validate()?;
            commands::train(&cfg, a.fibers)
        }
        Command::Evaluate(a) => {
            apply_eval(&mut cfg, &a);
            cfg.validate()?;
            commands::evaluate(&cfg)
        }
        Command::Deploy(a) => {
            apply_eval(&mut cfg, &a);
            cfg.validate()?;
            commands::deploy(&cfg)
        }
        Command::Report(a) => {
            apply_eval(&mut cfg, &a.eval);
            if let Some(v) = a.data {
                cfg.paths.data_dir = v;
            }
            cfg.validate()?;
            commands::report(&cfg)
        }
    }
}

/// 2 for usage and configuration errors, 3 for pipeline failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    use euclid_core::Error as E;
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<E>() {
        Some(E::UnknownModel(_) | E::UnknownPath(_) | E::Config(_)) => 2,
        _ => 3,
    }
}

fn configure_threads() -> Result<(), UsageError> {
    let Ok(value) = std::env::var("EUCLID_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| UsageError(format!("EUCLID_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| UsageError(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = configure_threads().map_err(anyhow::Error::from).and_then(|_| run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
