use std::fs;
use std::path::{Path, PathBuf};

use rdmnet_core::io::{
    load_image_dir, load_rdm_csv, load_weights, save_image_dir, save_weights, write_history_csv,
    write_lr_curve_csv, write_rdm_csv,
};
use rdmnet_core::synthetic::{generate, SyntheticConfig};
use rdmnet_core::{
    baseline_fit, group_average, lr_find, normalize_rdm, predict_rdm, train_with, Dataset, EvalReport, Init,
    LrFindResult, Model, Rdm, Schedule,
};

use crate::config::{AutoLrMode, RunConfig};
use crate::error::CliError;

pub const WEIGHTS_FILE: &str = "weights.bin";
pub const HISTORY_FILE: &str = "history.csv";
pub const LR_CURVE_FILE: &str = "lr_curve.csv";
pub const PREDICTION_FILE: &str = "pred_rdm.csv";
pub const FITTED_FILE: &str = "fitted_rdm.csv";

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

fn load_rdms(paths: &[PathBuf]) -> Result<Vec<Rdm>, CliError> {
    paths.iter().map(|p| load_rdm_csv(p).map_err(CliError::from)).collect()
}

/// Subject RDMs averaged, then min-max normalized.
fn load_target(cfg: &RunConfig) -> Result<Rdm, CliError> {
    let subjects = load_rdms(cfg.target_rdms()?)?;
    Ok(normalize_rdm(&group_average(&subjects)?)?)
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset<f32>, CliError> {
    let images_dir = cfg.images_dir()?.to_path_buf();
    let target = load_target(cfg)?;
    let images = load_image_dir(images_dir)?;
    Ok(Dataset::new(images, target, true)?)
}

fn build_model(cfg: &RunConfig) -> Result<Model<f32>, CliError> {
    let seed = cfg.seed();
    let init = match &cfg.paths.init_weights {
        Some(path) => Init::Import {
            path: path.clone(),
            seed,
        },
        None => Init::Random { seed },
    };
    let (model, report) = Model::build(cfg.model.clone(), init)?;
    if !report.loaded.is_empty() || !report.missing.is_empty() {
        eprintln!("import loaded={} missing={}", report.loaded.len(), report.missing.len());
        for name in &report.missing {
            eprintln!("import missing={name}");
        }
    }
    Ok(model)
}

/// The range test runs with the body frozen, as the first training stage
/// does.
fn sweep(cfg: &RunConfig, model: &Model<f32>, data: &Dataset<f32>) -> Result<LrFindResult, CliError> {
    let mut scratch = model.clone();
    scratch.freeze_body(true);
    Ok(lr_find(&scratch, data, &cfg.train, &cfg.lr_find)?)
}

fn report_sweep(res: &LrFindResult) {
    println!("suggested_lr={}", res.suggested_lr);
    println!("min_loss_lr={}", res.min_loss_lr);
    println!("steps={} aborted={}", res.lrs.len(), res.aborted);
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let mut model = build_model(cfg)?;
    let out = cfg.out_dir();
    ensure_dir(&out)?;

    let mut train_cfg = cfg.train.clone();
    if cfg.auto_lr.mode != AutoLrMode::Off {
        let res = sweep(cfg, &model, &data)?;
        write_lr_curve_csv(out.join(LR_CURVE_FILE), &res)?;
        report_sweep(&res);
        train_cfg.lr = res.suggested_lr;
        if cfg.auto_lr.mode == AutoLrMode::Cyclical {
            let per_epoch = data.pairs().len().div_ceil(train_cfg.batch_size);
            train_cfg.schedule = res.cyclical_schedule(cfg.auto_lr.cycle_epochs * per_epoch);
        }
    }
    if let Schedule::Triangular {
        base_lr,
        max_lr,
        step_size,
    } = train_cfg.schedule
    {
        eprintln!("schedule=triangular base_lr={base_lr} max_lr={max_lr} step_size={step_size}");
    } else {
        eprintln!("schedule=constant lr={}", train_cfg.lr);
    }

    let history = train_with(&mut model, &data, &train_cfg, |r| {
        eprintln!("epoch={} stage={} lr={} loss={}", r.epoch, r.stage, r.lr, r.mean_loss);
    })?;
    let weights = out.join(WEIGHTS_FILE);
    let hist = out.join(HISTORY_FILE);
    save_weights(&weights, &model.to_f32_params())?;
    write_history_csv(&hist, &history, cfg.paths.history_seconds)?;
    if let Some(last) = history.epochs.last() {
        println!("final_loss={}", last.mean_loss);
    }
    println!("weights={}", weights.display());
    println!("history={}", hist.display());
    Ok(())
}

pub fn lr_find_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let model = build_model(cfg)?;
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    let res = sweep(cfg, &model, &data)?;
    let path = out.join(LR_CURVE_FILE);
    write_lr_curve_csv(&path, &res)?;
    report_sweep(&res);
    println!("curve={}", path.display());
    Ok(())
}

pub fn predict(cfg: &RunConfig, weights: &Path, output: Option<&Path>) -> Result<(), CliError> {
    let images = load_image_dir(cfg.images_dir()?)?;
    let (mut model, _) = Model::<f32>::build(cfg.model.clone(), Init::Random { seed: cfg.seed() })?;
    model.load_params(&load_weights(weights)?, false)?;
    let rdm = predict_rdm(&model, &images)?;
    let path = match output {
        Some(p) => p.to_path_buf(),
        None => {
            let out = cfg.out_dir();
            ensure_dir(&out)?;
            out.join(PREDICTION_FILE)
        }
    };
    write_rdm_csv(&path, &rdm)?;
    println!("prediction={}", path.display());
    Ok(())
}

pub fn evaluate(pred: &Path, targets: &[PathBuf], name: &str) -> Result<(), CliError> {
    if targets.is_empty() {
        return Err(CliError::Config("evaluate needs at least one --target".into()));
    }
    let pred = load_rdm_csv(pred)?;
    let subjects = load_rdms(targets)?;
    let report = EvalReport::evaluate(name, &pred, &subjects)?;
    println!("{}", EvalReport::CSV_HEADER);
    println!("{}", report.to_csv_row());
    Ok(())
}

pub fn baseline(cfg: &RunConfig, layers: &[PathBuf], target: &Path) -> Result<(), CliError> {
    if layers.is_empty() {
        return Err(CliError::Config("baseline needs at least one --layer".into()));
    }
    let layers = load_rdms(layers)?;
    let target = load_rdm_csv(target)?;
    let fit = baseline_fit(&layers, &target)?;
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    let path = out.join(FITTED_FILE);
    write_rdm_csv(&path, &fit.fitted)?;
    println!("intercept={}", fit.intercept);
    for (k, w) in fit.weights.iter().enumerate() {
        println!("weight_{}={w}", k + 1);
    }
    println!("spearman={}", fit.spearman);
    println!("fitted={}", path.display());
    Ok(())
}

/// Writes the seeded recovery fixture plus a ready-to-run config.
pub fn synth(out: &Path, seed: u64, n_train: usize, n_heldout: usize) -> Result<(), CliError> {
    let set = generate(&SyntheticConfig {
        n_train,
        n_heldout,
        seed,
        ..Default::default()
    })?;
    ensure_dir(out)?;
    save_image_dir(out.join("train_images"), &set.train_images)?;
    save_image_dir(out.join("heldout_images"), &set.heldout_images)?;
    write_rdm_csv(out.join("train_rdm.csv"), &set.train_rdm)?;
    write_rdm_csv(out.join("heldout_rdm.csv"), &set.heldout_rdm)?;
    let config = format!(
        "[train]\nseed = {seed}\n\n[auto_lr]\nmode = \"cyclical\"\n\n[paths]\nimages_dir = \"train_images\"\ntarget_rdms = [\"train_rdm.csv\"]\nout_dir = \"run\"\n"
    );
    let path = out.join("config.toml");
    fs::write(&path, config).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    println!("config={}", path.display());
    Ok(())
}
