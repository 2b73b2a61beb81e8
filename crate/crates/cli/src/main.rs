//! `rdmnet`: train Siamese RDM regressors, run the LR range test, predict
//! and score RDMs.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric
//! divergence. Failures print one `error kind=... code=... message=...`
//! line on stderr. Every run starts with a `# rdmnet ...` header on stderr
//! naming the version, command, config digest and seed.

mod commands;
mod config;
mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{Overrides, RunConfig};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "rdmnet", version, about = "Siamese RDM regression and RSA evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory; overrides `paths.out_dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct DataArgs {
    /// Image directory; overrides `paths.images_dir`.
    #[arg(long, value_name = "DIR")]
    images: Option<PathBuf>,
    /// Target RDM CSV, once per subject; overrides `paths.target_rdms`.
    #[arg(long = "target", value_name = "CSV")]
    targets: Vec<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Two-stage training; writes weights and a history CSV.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        epochs_frozen: Option<usize>,
        #[arg(long)]
        epochs_unfrozen: Option<usize>,
    },
    /// LR range test; writes the smoothed loss curve and prints the
    /// suggested rate.
    LrFind {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Predicted RDM for an image directory.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        weights: PathBuf,
        #[arg(long, value_name = "DIR")]
        images: Option<PathBuf>,
        /// Output CSV; defaults to `pred_rdm.csv` in the output directory.
        #[arg(long, value_name = "CSV")]
        output: Option<PathBuf>,
    },
    /// Scores a predicted RDM against subject RDMs and prints a CSV report.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "CSV")]
        pred: PathBuf,
        #[arg(long = "target", value_name = "CSV")]
        targets: Vec<PathBuf>,
        #[arg(long, default_value = "target")]
        name: String,
    },
    /// Least-squares combination of layer RDMs fitted to a target.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long = "layer", value_name = "CSV")]
        layers: Vec<PathBuf>,
        #[arg(long, value_name = "CSV")]
        target: PathBuf,
    },
    /// Writes the seeded synthetic recovery fixture and a config for it.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 24)]
        n_train: usize,
        #[arg(long, default_value_t = 12)]
        n_heldout: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train { .. } => "train",
            Command::LrFind { .. } => "lr-find",
            Command::Predict { .. } => "predict",
            Command::Evaluate { .. } => "evaluate",
            Command::Baseline { .. } => "baseline",
            Command::Synth { .. } => "synth",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Train { common, .. }
            | Command::LrFind { common, .. }
            | Command::Predict { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Baseline { common, .. }
            | Command::Synth { common, .. } => common,
        }
    }

    fn overrides(&self) -> Overrides {
        let common = self.common();
        let mut o = Overrides {
            seed: common.seed,
            out_dir: common.out.clone(),
            ..Default::default()
        };
        match self {
            Command::Train {
                data,
                lr,
                batch_size,
                epochs_frozen,
                epochs_unfrozen,
                ..
            } => {
                o.images_dir = data.images.clone();
                o.target_rdms = data.targets.clone();
                o.lr = *lr;
                o.batch_size = *batch_size;
                o.epochs_frozen = *epochs_frozen;
                o.epochs_unfrozen = *epochs_unfrozen;
            }
            Command::LrFind { data, .. } => {
                o.images_dir = data.images.clone();
                o.target_rdms = data.targets.clone();
            }
            Command::Predict { images, .. } => o.images_dir = images.clone(),
            _ => {}
        }
        o
    }
}

fn run(command: Command) -> Result<(), CliError> {
    let cfg = RunConfig::load(command.common().config.as_deref(), &command.overrides())?;
    eprintln!(
        "# rdmnet version={} command={} config_sha256={} seed={}",
        env!("CARGO_PKG_VERSION"),
        command.name(),
        cfg.digest(),
        cfg.seed()
    );
    match &command {
        Command::Train { .. } => commands::train(&cfg),
        Command::LrFind { .. } => commands::lr_find_cmd(&cfg),
        Command::Predict { weights, output, .. } => commands::predict(&cfg, weights, output.as_deref()),
        Command::Evaluate { pred, targets, name, .. } => commands::evaluate(pred, targets, name),
        Command::Baseline { layers, target, .. } => commands::baseline(&cfg, layers, target),
        Command::Synth {
            n_train, n_heldout, ..
        } => commands::synth(
            cfg.paths.out_dir.as_deref().unwrap_or(Path::new(".")),
            cfg.seed(),
            *n_train,
            *n_heldout,
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Config(e.kind().to_string());
            eprint!("{}", e.render());
            eprintln!("{err}");
            return ExitCode::from(err.exit_code());
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
