//! Command-line pipeline: simulate, train, predict, evaluate and the
//! gradient gate, driven by one JSON config.

pub mod config;
pub mod stages;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::{parse_const, resolve, ExperimentConfig, Profile};
use sgfnn_core::SystemKind;
use stages::Run;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Environment variable that overrides the config's output directory.
pub const OUT_DIR_ENV: &str = "SHS_OUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: sgfnn_core::Error,
    },
    #[error("gradcheck: analytic gradients disagree with finite differences")]
    GateFailed,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::GateFailed => EXIT_NUMERIC,
            CliError::Stage { source, .. } => {
                if source.is_numeric() {
                    EXIT_NUMERIC
                } else if source.is_io() || matches!(source, sgfnn_core::Error::Format(_) | sgfnn_core::Error::Json(_) | sgfnn_core::Error::Csv(_)) {
                    EXIT_IO
                } else {
                    EXIT_CONFIG
                }
            }
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sgfnn", version, about = "Learn stochastic Hamiltonian systems from trajectory data")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON config; its values override the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// linear-oscillator | kubo | non-separable | synchrotron
    #[arg(long, global = true)]
    system: Option<SystemKind>,

    /// desk | paper
    #[arg(long, global = true)]
    profile: Option<Profile>,

    /// Override a system constant, e.g. `--const sigma=0.2`.
    #[arg(long = "const", value_name = "NAME=VALUE", value_parser = parse_const, global = true)]
    consts: Vec<(String, f64)>,

    /// Seed for data, training and prediction; the reference ensemble and
    /// held-out latent data use `seed + 1` and `seed + 2`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output directory; takes precedence over SHS_OUT_DIR and the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Generate the training dataset.
    Simulate,
    /// Train on the dataset and write a checkpoint and loss history.
    Train,
    /// Roll out an ensemble from the checkpoint.
    Predict,
    /// Compare the ensemble with a reference simulation.
    Evaluate,
    /// Finite-difference check of the analytic gradients.
    Gradcheck,
    /// gradcheck, simulate, train, predict, evaluate.
    Pipeline,
    /// Print the resolved config as JSON.
    ShowConfig,
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let file = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Stage {
                stage: "config",
                source: e.into(),
            })?;
            Some(serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let mut cfg = resolve(file, cli.system, cli.profile).map_err(CliError::Config)?;
    if !cli.consts.is_empty() {
        cfg.system = cfg
            .system
            .with_overrides(cli.consts.iter().map(|(k, v)| (k.as_str(), *v)))
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    if let Some(s) = cli.seed {
        cfg.data.seed = s;
        cfg.train.seed = s;
        cfg.predict.seed = s;
        cfg.eval.truth_seed = s.wrapping_add(1);
        cfg.eval.latent_seed = s.wrapping_add(2);
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    } else if let Some(out) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        cfg.output_dir = out.into();
    }
    cfg.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

fn dispatch(command: Command, cfg: &ExperimentConfig) -> Result<(), CliError> {
    if let Command::ShowConfig = command {
        let text = sgfnn_core::io::to_json_string(cfg).map_err(|e| CliError::Config(e.to_string()))?;
        print!("{text}");
        return Ok(());
    }
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError::Stage {
        stage: "output",
        source: e.into(),
    })?;
    let run = Run::new(cfg, &cfg.output_dir)?;
    let saved = run.path("config.json");
    sgfnn_core::io::write_json(&saved, cfg).map_err(|source| CliError::Stage { stage: "output", source })?;
    match command {
        Command::Simulate => stages::simulate(&run).map(drop),
        Command::Train => stages::train_stage(&run),
        Command::Predict => stages::predict(&run).map(drop),
        Command::Evaluate => stages::evaluate(&run).map(drop),
        Command::Gradcheck => stages::gradcheck(&run).map(drop),
        Command::Pipeline => {
            stages::gradcheck(&run)?;
            stages::simulate(&run)?;
            stages::train_stage(&run)?;
            stages::predict(&run)?;
            stages::evaluate(&run).map(drop)
        }
        Command::ShowConfig => unreachable!(),
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = build_config(&cli).and_then(|cfg| match cli.workers {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command, &cfg)),
            Err(e) => Err(CliError::Config(format!("--workers: {e}"))),
        },
        None => dispatch(cli.command, &cfg),
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("sgfnn: {e}");
            e.exit_code()
        }
    }
}
