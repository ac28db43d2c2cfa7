//! Optimization: Adam with a per-step cosine schedule, cross-entropy losses
//! and a fold training loop with early stopping on validation F1.

use std::f64::consts::PI;
use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augmented_patch, AugmentConfig};
use crate::cropping::{extract_patch, BoundingBox, Patch};
use crate::error::{Error, Result};
use crate::evaluation::{batch_of, predict, selection_f1, sigmoid, Prediction};
use crate::model::{Gradients, Matrix, Model, ModelConfig, NamedTensor, NormKind, Real};
use crate::rng::RngStream;
use crate::task::Task;
use crate::volume::CtVolume;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub task: Task,
    /// Epochs without improvement tolerated before stopping.
    pub early_stop_patience: usize,
    pub seed: u64,
    pub adam: AdamParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 75,
            batch_size: 64,
            lr_start: 1e-3,
            lr_end: 1e-5,
            task: Task::Multiclass4,
            early_stop_patience: 15,
            seed: 0,
            adam: AdamParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lr_start > self.lr_end && self.lr_end > 0.0) {
            return bad("learning rates must satisfy lr_start > lr_end > 0");
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return bad("max_epochs and batch_size must be at least 1");
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps <= 0.0 {
            return bad("Adam betas must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }
}

/// Single cosine decay from `lr_start` at step 0 to `lr_end` at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_start: f64, lr_end: f64) -> f64 {
    let total = total_steps.max(1);
    let step = step.min(total);
    if step == 0 {
        return lr_start;
    }
    if step == total {
        return lr_end;
    }
    lr_end + 0.5 * (lr_start - lr_end) * (1.0 + (PI * step as f64 / total as f64).cos())
}

/// One bias-corrected Adam update of a flat parameter slice at step `t ≥ 1`.
pub fn adam_update<T: Real>(param: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], t: u64, lr: f64, hp: &AdamParams) {
    let c1 = 1.0 - hp.beta1.powi(t as i32);
    let c2 = 1.0 - hp.beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i].f64();
        let mi = hp.beta1 * m[i].f64() + (1.0 - hp.beta1) * g;
        let vi = hp.beta2 * v[i].f64() + (1.0 - hp.beta2) * g * g;
        m[i] = T::of(mi);
        v[i] = T::of(vi);
        let update = lr * (mi / c1) / ((vi / c2).sqrt() + hp.eps);
        param[i] = T::of(param[i].f64() - update);
    }
}

/// Adam moments for every parameter tensor plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
    pub hyper: AdamParams,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(lengths: impl IntoIterator<Item = usize>, hyper: AdamParams) -> Self {
        let lens: Vec<usize> = lengths.into_iter().collect();
        Self {
            m: lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
            hyper,
        }
    }

    pub fn for_model(model: &Model<T>, hyper: AdamParams) -> Self {
        Self::new(model.params.iter().map(|p| p.data.len()), hyper)
    }

    /// Applies one step to `params`. Non-finite gradients leave parameters
    /// and state untouched and return [`Error::NonFiniteGradient`].
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch("optimizer tensor count mismatch".into()));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != p.len() {
                return Err(Error::ShapeMismatch(format!("optimizer tensor {i} length mismatch")));
            }
        }
        if let Some(i) = grads.iter().position(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteGradient(format!("tensor {i}")));
        }
        self.t += 1;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            adam_update(p, g, &mut self.m[i], &mut self.v[i], self.t, lr, &self.hyper);
        }
        Ok(())
    }

    pub fn step_model(&mut self, params: &mut [NamedTensor<T>], grads: &Gradients<T>, lr: f64) -> Result<()> {
        let mut ps: Vec<&mut [T]> = params.iter_mut().map(|p| p.data.as_mut_slice()).collect();
        let gs: Vec<&[T]> = grads.tensors.iter().map(|g| g.as_slice()).collect();
        self.step(&mut ps, &gs, lr).map_err(|e| match e {
            Error::NonFiniteGradient(_) => {
                let i = gs.iter().position(|g| g.iter().any(|v| !v.is_finite())).unwrap_or(0);
                Error::NonFiniteGradient(params[i].name.clone())
            }
            e => e,
        })
    }
}

/// Mean-reduced loss and its gradient with respect to the logits: softmax
/// cross-entropy for multiclass tasks, sigmoid binary cross-entropy for the
/// single-logit task.
pub fn compute_loss<T: Real>(logits: &Matrix<T>, targets: &[usize], task: Task) -> Result<(f64, Matrix<T>)> {
    if logits.cols != task.num_outputs() || logits.rows != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "logits {}x{} vs {} targets for {} outputs",
            logits.rows,
            logits.cols,
            targets.len(),
            task.num_outputs()
        )));
    }
    let k = task.num_classes();
    if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::InvalidClassIndex { index: bad, classes: k });
    }
    let n = logits.rows as f64;
    let mut grad = Matrix::zeros(logits.rows, logits.cols);
    let mut loss = 0.0;
    for (r, &y) in targets.iter().enumerate() {
        let row = logits.row(r);
        let out = &mut grad.data[r * logits.cols..(r + 1) * logits.cols];
        if task.is_binary() {
            let z = row[0].f64();
            let y = y as f64;
            // softplus(z) - y z, written to avoid overflow
            loss += z.max(0.0) - y * z + (-z.abs()).exp().ln_1p();
            out[0] = T::of((sigmoid(z) - y) / n);
        } else {
            let max = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v.f64() - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            loss += total.ln() + max - row[y].f64();
            for (c, e) in exps.iter().enumerate() {
                let onehot = if c == y { 1.0 } else { 0.0 };
                out[c] = T::of((e / total - onehot) / n);
            }
        }
    }
    Ok((loss / n, grad))
}

/// A nodule available for training: the prepared volume it lives in, its
/// box and its class index under the current task.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub volume: Arc<CtVolume>,
    pub bbox: BoundingBox,
    pub target: usize,
    pub patient_id: String,
    pub scan_id: String,
    pub nodule_id: String,
}

impl TrainingSample {
    /// Canonical, un-augmented patch.
    pub fn canonical_patch(&self, crop_size: usize) -> Result<Patch> {
        let p = extract_patch(&self.volume, &self.bbox, crop_size)?.patch;
        Ok(p.with_source(&self.scan_id, &self.nodule_id))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Learning rate of the last step in the epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub val_f1: f64,
    pub best: bool,
    #[serde(default)]
    pub skipped_steps: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn best(&self) -> Option<&EpochLog> {
        self.epochs.iter().rev().find(|e| e.best)
    }
}

pub struct FoldOutcome<T> {
    pub model: Model<T>,
    pub best_epoch: usize,
    pub best_f1: f64,
    pub log: TrainLog,
}

/// Everything the fold loop needs besides the data.
#[derive(Clone, Debug)]
pub struct FoldSetup<'a> {
    pub model: &'a ModelConfig,
    pub train: &'a TrainConfig,
    pub augment: &'a AugmentConfig,
    pub crop_size: usize,
    /// Distinguishes the random streams of different folds.
    pub fold: usize,
}

fn to_predictions(samples: &[TrainingSample], probs: Vec<Vec<f64>>) -> Vec<Prediction> {
    samples
        .iter()
        .zip(probs)
        .map(|(s, p)| Prediction {
            scan_id: s.scan_id.clone(),
            nodule_id: s.nodule_id.clone(),
            patient_id: s.patient_id.clone(),
            fold: 0,
            probabilities: p,
            true_label: s.target,
        })
        .collect()
}

/// Trains one model and returns the parameters of the epoch with the highest
/// validation F1 (single view, argmax or threshold 0.5). Each epoch is one
/// shuffled pass with fresh augmentation; training stops once
/// `early_stop_patience` consecutive epochs fail to improve.
pub fn train_fold<T: Real>(train: &[TrainingSample], val: &[TrainingSample], setup: &FoldSetup) -> Result<FoldOutcome<T>> {
    let cfg = setup.train;
    cfg.validate()?;
    setup.augment.validate()?;
    setup.model.validate()?;
    if setup.model.num_outputs != cfg.task.num_outputs() {
        return Err(Error::InvalidConfig(format!(
            "model has {} outputs but the task needs {}",
            setup.model.num_outputs,
            cfg.task.num_outputs()
        )));
    }
    if train.is_empty() {
        return Err(Error::EmptyDataset("training set".into()));
    }
    if val.is_empty() {
        return Err(Error::EmptyDataset("validation set".into()));
    }
    let root = RngStream::new(cfg.seed).derive2(0x5EED_F01D, setup.fold as u64);
    let mut model = Model::<T>::build(setup.model, &mut root.derive(0))?;
    let mut opt = OptimizerState::for_model(&model, cfg.adam);

    let val_patches: Vec<Patch> = val
        .par_iter()
        .map(|s| s.canonical_patch(setup.crop_size))
        .collect::<Result<_>>()?;

    // a lone sample gives batch statistics with zero variance; drop it
    let min_batch = if setup.model.norm == NormKind::Batch { 2 } else { 1 };
    let full = train.len() / cfg.batch_size;
    let tail = train.len() % cfg.batch_size;
    let steps_per_epoch = full + usize::from(tail >= min_batch);
    let total_steps = (steps_per_epoch * cfg.max_epochs).max(1);

    let mut log = TrainLog::default();
    let mut best: Option<(Model<T>, usize, f64)> = None;
    let mut since_best = 0;
    let mut step = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.max_epochs {
        root.derive2(1, epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        let mut skipped = 0;
        let mut lr = cfg.lr_start;
        for batch in order.chunks(cfg.batch_size) {
            if batch.len() < min_batch {
                continue;
            }
            lr = cosine_lr(step, total_steps, cfg.lr_start, cfg.lr_end);
            step += 1;
            let patches: Vec<Patch> = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = root.derive2(2 + epoch as u64, i as u64);
                    augmented_patch(&train[i].volume, &train[i].bbox, setup.augment, setup.crop_size, &mut rng)
                })
                .collect::<Result<_>>()?;
            let targets: Vec<usize> = batch.iter().map(|&i| train[i].target).collect();
            let x = batch_of::<T>(&patches)?;
            let (logits, cache) = model.forward_train(&x)?;
            let (loss, dlogits) = compute_loss(&logits, &targets, cfg.task)?;
            let grads = model.backward(&cache, &dlogits)?;
            if !loss.is_finite() {
                warn!("fold {} epoch {epoch}: non-finite loss, step skipped", setup.fold);
                skipped += 1;
                continue;
            }
            match opt.step_model(&mut model.params, &grads, lr) {
                Ok(()) => {
                    model.apply_batch_stats(&cache);
                    loss_sum += loss * batch.len() as f64;
                    loss_count += batch.len();
                }
                Err(Error::NonFiniteGradient(name)) => {
                    warn!("fold {} epoch {epoch}: non-finite gradient in {name}, step skipped", setup.fold);
                    skipped += 1;
                }
                Err(e) => return Err(e),
            }
        }
        let probs = predict(&model, &val_patches, cfg.batch_size)?;
        let val_f1 = selection_f1(&to_predictions(val, probs), cfg.task)?;
        let improved = best.as_ref().is_none_or(|b| val_f1 > b.2);
        if improved {
            best = Some((model.clone(), epoch, val_f1));
            since_best = 0;
        } else {
            since_best += 1;
        }
        let train_loss = if loss_count > 0 { loss_sum / loss_count as f64 } else { f64::NAN };
        info!(
            "fold {} epoch {epoch}: lr {lr:.3e} loss {train_loss:.4} val F1 {val_f1:.4}{}",
            setup.fold,
            if improved { " *" } else { "" }
        );
        log.epochs.push(EpochLog {
            epoch,
            lr,
            train_loss,
            val_f1,
            best: improved,
            skipped_steps: skipped,
        });
        if since_best > cfg.early_stop_patience {
            info!("fold {}: early stop after epoch {epoch}", setup.fold);
            break;
        }
    }
    let (model, best_epoch, best_f1) = best.expect("at least one epoch ran");
    Ok(FoldOutcome {
        model,
        best_epoch,
        best_f1,
        log,
    })
}
