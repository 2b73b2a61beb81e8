//! Loss, optimizer, learning-rate schedules, the LR range test and the
//! two-stage (frozen body, then everything) training loop.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{batch_iter, Dataset};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{Scalar, Tensor};

/// Mean squared difference over the batch.
pub fn euclidean_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Empty("euclidean_loss batch"));
    }
    if pred.len() != target.len() {
        return Err(Error::shape(
            "euclidean_loss",
            format!("{} predictions vs {} targets", pred.len(), target.len()),
        ));
    }
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

/// Triangular cyclical schedule: linear ramp from `base_lr` to `max_lr` over
/// `step_size` iterations, back down over the next `step_size`, repeating.
pub fn triangular_lr(base_lr: f64, max_lr: f64, step_size: usize, iteration: usize) -> f64 {
    let step_size = step_size.max(1);
    let pos = iteration % (2 * step_size);
    let frac = if pos <= step_size {
        pos as f64 / step_size as f64
    } else {
        (2 * step_size - pos) as f64 / step_size as f64
    };
    base_lr + (max_lr - base_lr) * frac
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    Triangular { base_lr: f64, max_lr: f64, step_size: usize },
}

impl Schedule {
    pub fn lr(&self, base: f64, iteration: usize) -> f64 {
        match *self {
            Schedule::Constant => base,
            Schedule::Triangular {
                base_lr,
                max_lr,
                step_size,
            } => triangular_lr(base_lr, max_lr, step_size, iteration),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs_frozen: usize,
    pub epochs_unfrozen: usize,
    pub schedule: Schedule,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            momentum: 0.9,
            batch_size: 32,
            epochs_frozen: 15,
            epochs_unfrozen: 200,
            schedule: Schedule::Constant,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if let Schedule::Triangular {
            base_lr,
            max_lr,
            step_size,
        } = self.schedule
        {
            if !(base_lr > 0.0 && base_lr <= max_lr && max_lr.is_finite()) || step_size == 0 {
                return Err(Error::InvalidArgument(format!("bad triangular schedule {:?}", self.schedule)));
            }
        }
        Ok(())
    }
}

/// `v ← momentum·v + g; w ← w − lr·v`.
pub fn sgd_update<T: Scalar>(weights: &mut [T], grads: &[T], velocity: &mut [T], lr: T, momentum: T) -> Result<()> {
    if weights.len() != grads.len() || weights.len() != velocity.len() {
        return Err(Error::shape(
            "sgd_update",
            format!("{} weights, {} grads, {} velocity", weights.len(), grads.len(), velocity.len()),
        ));
    }
    for ((w, &g), v) in weights.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *w -= lr * *v;
    }
    Ok(())
}

/// SGD with momentum over a model's parameters.
#[derive(Clone, Debug, Default)]
pub struct Sgd<T: Scalar = f32> {
    pub momentum: f64,
    velocity: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64) -> Self {
        Self {
            momentum,
            velocity: BTreeMap::new(),
        }
    }

    pub fn velocity(&self, name: &str) -> Option<&[T]> {
        self.velocity.get(name).map(Vec::as_slice)
    }

    /// Updates every parameter of a non-frozen layer that carries a
    /// gradient. Frozen parameters and their velocity are left untouched.
    pub fn step(&mut self, model: &mut Model<T>, lr: f64) -> Result<()> {
        let names: Vec<String> = model.params().keys().cloned().collect();
        for name in names {
            let layer = name.rsplit_once('.').map_or(name.as_str(), |(l, _)| l).to_string();
            if model.is_frozen(&layer) {
                continue;
            }
            let param = model.param_mut(&name).expect("listed name");
            let Some(grad) = param.grad.take() else { continue };
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| vec![T::zero(); grad.len()]);
            sgd_update(
                param.data_mut(),
                &grad,
                v,
                T::from_f64_lossy(lr),
                T::from_f64_lossy(self.momentum),
            )?;
            param.grad = Some(grad);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Frozen,
    Unfrozen,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Frozen => "frozen",
            Stage::Unfrozen => "unfrozen",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based, counted across both stages.
    pub epoch: usize,
    pub stage: Stage,
    /// Mean learning rate over the epoch's steps.
    pub lr: f64,
    /// Sample-weighted mean of the batch losses.
    pub mean_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

/// Forward, backward and one optimizer step on a batch of pair indices.
/// Body features are computed once per distinct image in the batch and
/// shared by both branch roles.
fn train_step<T: Scalar>(model: &mut Model<T>, opt: &mut Sgd<T>, data: &Dataset<T>, batch: &[usize], lr: f64) -> Result<f64> {
    let pairs = data.pairs();
    let mut slot = vec![usize::MAX; data.images().len()];
    let mut unique: Vec<&Tensor<T>> = Vec::new();
    let mut idx_a = Vec::with_capacity(batch.len());
    let mut idx_b = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for &p in batch {
        let s = pairs[p];
        for (img, idx) in [(s.i, &mut idx_a), (s.j, &mut idx_b)] {
            if slot[img] == usize::MAX {
                slot[img] = unique.len();
                unique.push(&data.images()[img]);
            }
            idx.push(slot[img]);
        }
        targets.push(T::from_f64_lossy(s.target));
    }

    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, |_| true);
    let x = tape.leaf(Tensor::stack(&unique)?, false);
    let feats = model.body_forward(&mut tape, &bound, x)?;
    let fa = tape.gather_rows(feats, &idx_a)?;
    let fb = tape.gather_rows(feats, &idx_b)?;
    let pred = model.head_forward(&mut tape, &bound, fa, fb)?;
    let loss = tape.mse(pred, &targets)?;
    let loss_value = tape.value(loss).data()[0].as_f64();
    if !loss_value.is_finite() {
        return Err(Error::Divergence { epoch: 0, batch: 0 });
    }
    let mut grads = tape.backward(loss)?;
    model.assign_grads(&bound, &mut grads);
    opt.step(model, lr)?;
    Ok(loss_value)
}

/// Trains `epochs_frozen` epochs with the body frozen, then
/// `epochs_unfrozen` epochs with every layer trainable. The learning-rate
/// schedule advances once per batch across both stages. `on_epoch` sees
/// each record as it completes.
pub fn train_with<T: Scalar>(
    model: &mut Model<T>,
    data: &Dataset<T>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainHistory> {
    cfg.validate()?;
    if data.pairs().is_empty() {
        return Err(Error::Empty("dataset has no pairs"));
    }
    if data.image_shape() != model.spec().input {
        return Err(Error::shape(
            "train",
            format!("images are {:?}, model expects {:?}", data.image_shape(), model.spec().input),
        ));
    }
    let mut opt = Sgd::new(cfg.momentum);
    let mut history = TrainHistory::default();
    let mut iteration = 0usize;
    let stages = [(Stage::Frozen, cfg.epochs_frozen), (Stage::Unfrozen, cfg.epochs_unfrozen)];
    for (stage, epochs) in stages {
        if epochs == 0 {
            continue;
        }
        match stage {
            Stage::Frozen => model.freeze_body(true),
            Stage::Unfrozen => {
                let all = model.spec().param_layer_ids();
                model.set_frozen(&all, false)?;
            }
        }
        for _ in 0..epochs {
            let epoch = history.epochs.len();
            let start = Instant::now();
            let batches = batch_iter(data.pairs().len(), cfg.batch_size, cfg.seed, epoch as u64, cfg.shuffle)?;
            let (mut loss_sum, mut lr_sum) = (0.0, 0.0);
            for (b, batch) in batches.iter().enumerate() {
                let lr = cfg.schedule.lr(cfg.lr, iteration);
                let loss = train_step(model, &mut opt, data, batch, lr).map_err(|e| match e {
                    Error::Divergence { .. } => Error::Divergence { epoch: epoch + 1, batch: b },
                    other => other,
                })?;
                loss_sum += loss * batch.len() as f64;
                lr_sum += lr;
                iteration += 1;
            }
            let record = EpochRecord {
                epoch: epoch + 1,
                stage,
                lr: lr_sum / batches.len() as f64,
                mean_loss: loss_sum / data.pairs().len() as f64,
                seconds: start.elapsed().as_secs_f64(),
            };
            on_epoch(&record);
            history.epochs.push(record);
        }
    }
    model.zero_grads();
    Ok(history)
}

pub fn train<T: Scalar>(model: &mut Model<T>, data: &Dataset<T>, cfg: &TrainConfig) -> Result<TrainHistory> {
    train_with(model, data, cfg, |_| {})
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrFindConfig {
    pub lr_min: f64,
    pub lr_max: f64,
    pub steps: usize,
    /// EMA coefficient for loss smoothing.
    pub beta: f64,
    /// Abort once the smoothed loss exceeds this multiple of the best.
    pub divergence_factor: f64,
    /// Leading points left out of the suggestion while the moving average
    /// still rests on a handful of batches.
    pub skip_start: usize,
}

impl Default for LrFindConfig {
    fn default() -> Self {
        Self {
            lr_min: 1e-6,
            lr_max: 1.0,
            steps: 100,
            beta: 0.98,
            divergence_factor: 4.0,
            skip_start: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LrFindResult {
    pub lrs: Vec<f64>,
    pub smoothed_losses: Vec<f64>,
    pub suggested_lr: f64,
    /// Learning rate at the lowest smoothed loss, the upper edge of the
    /// usable range.
    pub min_loss_lr: f64,
    /// Set when the sweep stopped before `lr_max`.
    pub aborted: bool,
}

impl LrFindResult {
    /// Triangular schedule over the usable range the sweep found: from the
    /// suggested rate up to the rate at the loss minimum.
    pub fn cyclical_schedule(&self, step_size: usize) -> Schedule {
        Schedule::Triangular {
            base_lr: self.suggested_lr,
            max_lr: self.min_loss_lr.max(self.suggested_lr),
            step_size: step_size.max(1),
        }
    }
}

/// `lr_min · (lr_max / lr_min)^(i / (steps − 1))` for `i in 0..steps`.
pub fn geometric_lrs(lr_min: f64, lr_max: f64, steps: usize) -> Vec<f64> {
    let ratio = lr_max / lr_min;
    (0..steps)
        .map(|i| lr_min * ratio.powf(i as f64 / (steps - 1) as f64))
        .collect()
}

/// Slope of `losses` at `i` per grid step: central differences in the
/// interior, one-sided at the ends. The grid is uniform in `log(lr)`.
fn slope(losses: &[f64], i: usize) -> f64 {
    let n = losses.len();
    if i == 0 {
        losses[1] - losses[0]
    } else if i == n - 1 {
        losses[n - 1] - losses[n - 2]
    } else {
        (losses[i + 1] - losses[i - 1]) / 2.0
    }
}

fn steepest_in(losses: &[f64], range: std::ops::RangeInclusive<usize>) -> usize {
    if losses.len() < 2 {
        return 0;
    }
    let start = *range.start();
    range.fold(start, |best, i| if slope(losses, i) < slope(losses, best) { i } else { best })
}

/// Index of the steepest descent of `losses`.
pub fn steepest_descent_index(losses: &[f64]) -> usize {
    steepest_in(losses, 0..=losses.len().saturating_sub(1))
}

fn argmin(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i)
}

/// Steepest descent of the smoothed curve between `skip_start` and the
/// curve's minimum. Anything after the minimum is recovery from a blow-up,
/// not descent. Falls back to the whole curve when the window is empty.
pub fn suggestion_index(smoothed: &[f64], skip_start: usize) -> usize {
    let last = argmin(smoothed);
    if skip_start >= last {
        return steepest_descent_index(smoothed);
    }
    steepest_in(smoothed, skip_start..=last)
}

/// LR range test on a scratch copy of `model`: one optimizer step per
/// learning rate on successive mini-batches, tracking a bias-corrected
/// exponential moving average of the loss.
pub fn lr_find<T: Scalar>(model: &Model<T>, data: &Dataset<T>, train_cfg: &TrainConfig, cfg: &LrFindConfig) -> Result<LrFindResult> {
    if !(cfg.lr_min > 0.0 && cfg.lr_min < cfg.lr_max && cfg.lr_max.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < lr_min < lr_max, got {} and {}",
            cfg.lr_min, cfg.lr_max
        )));
    }
    if cfg.steps < 2 {
        return Err(Error::InvalidArgument("lr_find needs at least 2 steps".into()));
    }
    if !(0.0..1.0).contains(&cfg.beta) {
        return Err(Error::InvalidArgument(format!("beta must be in [0, 1), got {}", cfg.beta)));
    }
    if data.pairs().is_empty() {
        return Err(Error::Empty("dataset has no pairs"));
    }
    let mut scratch = model.clone();
    let mut opt = Sgd::new(train_cfg.momentum);
    let grid = geometric_lrs(cfg.lr_min, cfg.lr_max, cfg.steps);

    let mut lrs = Vec::new();
    let mut smoothed = Vec::new();
    let mut avg = 0.0;
    let mut best = f64::INFINITY;
    let mut aborted = false;
    let mut epoch = 0u64;
    let mut batches = Vec::new().into_iter();
    for (i, &lr) in grid.iter().enumerate() {
        let batch = match batches.next() {
            Some(b) => b,
            None => {
                batches = batch_iter(data.pairs().len(), train_cfg.batch_size, train_cfg.seed, epoch, train_cfg.shuffle)?.into_iter();
                epoch += 1;
                batches.next().expect("non-empty dataset")
            }
        };
        let loss = match train_step(&mut scratch, &mut opt, data, &batch, lr) {
            Ok(l) => l,
            Err(Error::Divergence { .. }) if i > 0 => {
                aborted = true;
                break;
            }
            Err(Error::Divergence { .. }) => return Err(Error::Divergence { epoch: 0, batch: 0 }),
            Err(e) => return Err(e),
        };
        avg = cfg.beta * avg + (1.0 - cfg.beta) * loss;
        let s = avg / (1.0 - cfg.beta.powi(i as i32 + 1));
        if i > 0 && s > cfg.divergence_factor * best {
            aborted = true;
            break;
        }
        best = best.min(s);
        lrs.push(lr);
        smoothed.push(s);
    }
    let suggested_lr = lrs[suggestion_index(&smoothed, cfg.skip_start)];
    let min_loss_lr = lrs[argmin(&smoothed)];
    Ok(LrFindResult {
        lrs,
        smoothed_losses: smoothed,
        suggested_lr,
        min_loss_lr,
        aborted,
    })
}
