//! Run configuration.
//!
//! A TOML file with optional `[model]`, `[train]`, `[lr_find]`, `[auto_lr]`
//! and `[paths]` sections; anything omitted takes its default, and the
//! model defaults to the desk network. Command-line flags override file
//! values. Relative paths are resolved against the directory holding the
//! config file.
//!
//! ```toml
//! [train]
//! seed = 0
//! batch_size = 32
//! epochs_frozen = 15
//! epochs_unfrozen = 200
//!
//! [auto_lr]
//! mode = "cyclical"
//!
//! [paths]
//! images_dir = "images"
//! target_rdms = ["subject1.csv", "subject2.csv"]
//! out_dir = "run"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rdmnet_core::{LrFindConfig, ModelSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// How an LR range test result feeds training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoLrMode {
    /// Use `[train]` as written.
    #[default]
    Off,
    /// Constant rate at the suggestion.
    Constant,
    /// Triangular cycle from the suggestion up to the rate at the loss
    /// minimum.
    Cyclical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoLr {
    pub mode: AutoLrMode,
    /// Epochs per half cycle in `cyclical` mode.
    pub cycle_epochs: usize,
}

impl Default for AutoLr {
    fn default() -> Self {
        Self {
            mode: AutoLrMode::Off,
            cycle_epochs: 4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory of `*.tsr` images, read in file-name order.
    pub images_dir: Option<PathBuf>,
    /// One RDM CSV per subject; they are averaged before training.
    pub target_rdms: Vec<PathBuf>,
    /// Weight file whose `body.*` entries initialize the body.
    pub init_weights: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Record wall-clock seconds in the history CSV. Off by default so
    /// reruns produce identical files.
    pub history_seconds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "ModelSpec::desk")]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub lr_find: LrFindConfig,
    #[serde(default)]
    pub auto_lr: AutoLr,
    #[serde(default)]
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec::desk(),
            train: TrainConfig::default(),
            lr_find: LrFindConfig::default(),
            auto_lr: AutoLr::default(),
            paths: Paths::default(),
        }
    }
}

/// Values given on the command line.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub images_dir: Option<PathBuf>,
    pub target_rdms: Vec<PathBuf>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs_frozen: Option<usize>,
    pub epochs_unfrozen: Option<usize>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads `path` (or starts from defaults), applies `overrides` and
    /// validates the result.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
                let mut cfg = Self::parse(&text)?;
                cfg.resolve_relative_to(p.parent().unwrap_or(Path::new(".")));
                cfg
            }
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        paths.images_dir.iter_mut().for_each(fix);
        paths.target_rdms.iter_mut().for_each(fix);
        paths.init_weights.iter_mut().for_each(fix);
        paths.out_dir.iter_mut().for_each(fix);
    }

    fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.train.seed = seed;
        }
        if let Some(dir) = &o.out_dir {
            self.paths.out_dir = Some(dir.clone());
        }
        if let Some(dir) = &o.images_dir {
            self.paths.images_dir = Some(dir.clone());
        }
        if !o.target_rdms.is_empty() {
            self.paths.target_rdms = o.target_rdms.clone();
        }
        if let Some(lr) = o.lr {
            self.train.lr = lr;
        }
        if let Some(b) = o.batch_size {
            self.train.batch_size = b;
        }
        if let Some(e) = o.epochs_frozen {
            self.train.epochs_frozen = e;
        }
        if let Some(e) = o.epochs_unfrozen {
            self.train.epochs_unfrozen = e;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let config = |e: rdmnet_core::Error| CliError::Config(e.to_string());
        self.model.validate().map_err(config)?;
        self.train.validate().map_err(config)?;
        let lf = &self.lr_find;
        if !(lf.lr_min > 0.0 && lf.lr_min < lf.lr_max && lf.lr_max.is_finite()) || lf.steps < 2 {
            return Err(CliError::Config(format!(
                "lr_find needs 0 < lr_min < lr_max and steps >= 2, got {} {} {}",
                lf.lr_min, lf.lr_max, lf.steps
            )));
        }
        if self.auto_lr.cycle_epochs == 0 {
            return Err(CliError::Config("auto_lr.cycle_epochs must be >= 1".into()));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    /// SHA-256 of the effective configuration in canonical TOML form.
    pub fn digest(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn images_dir(&self) -> Result<&Path, CliError> {
        self.paths
            .images_dir
            .as_deref()
            .ok_or_else(|| CliError::Config("no images directory (paths.images_dir or --images)".into()))
    }

    pub fn target_rdms(&self) -> Result<&[PathBuf], CliError> {
        if self.paths.target_rdms.is_empty() {
            return Err(CliError::Config("no target RDMs (paths.target_rdms or --target)".into()));
        }
        Ok(&self.paths.target_rdms)
    }
}
