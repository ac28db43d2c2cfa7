//! Experiment orchestration: patch extraction, k-fold training with pooled
//! evaluation, single-nodule prediction and re-scoring of saved predictions.
//!
//! Output directory layout:
//!
//! ```text
//! prepared/<scan>.raw|json    resampled, normalized volumes
//! shards/fold_<k>.bin         canonical patches per fold
//! manifest.json               retained records with fold ids
//! extract_summary.json
//! checkpoints/fold_<k>.ckpt
//! logs/fold_<k>.jsonl         one line per epoch
//! predictions.jsonl           pooled validation predictions
//! reports/<name>.json, reports/confusion_<name>.csv
//! train_summary.json
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::{binarize_label, filter_targets, load_manifest, save_manifest, NoduleRecord};
use crate::augment::AugmentConfig;
use crate::cropping::{extract_patch, BoundingBox, Patch};
use crate::error::{Error, Result};
use crate::evaluation::{
    aggregate_binary, binarize_predictions, pool_folds, tta_predict, Aggregation, ClassProbabilities, MetricsReport,
    Prediction,
};
use crate::io::{read_jsonl, write_atomic, write_json, write_jsonl};
use crate::model::checkpoint::Checkpoint;
use crate::model::ModelConfig;
use crate::shards::{read_shard, shard_bytes, ShardRecord};
use crate::splits::grouped_kfold;
use crate::task::Task;
use crate::training::{train_fold, FoldSetup, TrainConfig, TrainingSample};
use crate::volume::{load_volume, prepare_volume, resample_volume, save_volume, CtVolume, NormalizationParams, VoxelSpacing};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Directory holding `<scan_id>.raw` volumes with JSON sidecars.
    pub volumes_dir: PathBuf,
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    pub target_spacing: VoxelSpacing,
    pub normalization: NormalizationParams,
    pub crop_size: usize,
    pub augment: AugmentConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub task: Task,
    /// Multiclass-to-binary rule used by `predict`; training reports always
    /// include both.
    pub aggregation: Aggregation,
    pub keep_indeterminate: bool,
    pub folds: usize,
    pub seed: u64,
    /// Decision threshold for binary metrics.
    pub threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            volumes_dir: "volumes".into(),
            manifest: "manifest.json".into(),
            output_dir: "output".into(),
            target_spacing: VoxelSpacing::CANONICAL,
            normalization: NormalizationParams::default(),
            crop_size: crate::cropping::CROP_SIZE,
            augment: AugmentConfig::default(),
            model: ModelConfig::resnet50(4),
            train: TrainConfig::default(),
            task: Task::Multiclass4,
            aggregation: Aggregation::Sum,
            keep_indeterminate: false,
            folds: 5,
            seed: 0,
            threshold: 0.5,
        }
    }
}

impl ExperimentConfig {
    /// Reads a JSON config; relative paths are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = crate::io::read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.volumes_dir, &mut cfg.manifest, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Propagates the task and seed into the model and training sections and
    /// checks every field.
    pub fn resolve(mut self) -> Result<Self> {
        self.train.task = self.task;
        self.train.seed = self.seed;
        self.model.num_outputs = self.task.num_outputs();
        if self.task.keeps_indeterminate() {
            self.keep_indeterminate = true;
        }
        if self.folds < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 folds, got {}", self.folds)));
        }
        if self.crop_size == 0 {
            return Err(Error::InvalidConfig("crop_size must be positive".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidConfig("threshold must lie in (0, 1)".into()));
        }
        self.target_spacing.validate()?;
        self.normalization.validate()?;
        self.augment.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        Ok(self)
    }

    pub fn shard_path(&self, fold: usize) -> PathBuf {
        self.output_dir.join("shards").join(format!("fold_{fold}.bin"))
    }

    pub fn checkpoint_path(&self, fold: usize) -> PathBuf {
        self.output_dir.join("checkpoints").join(format!("fold_{fold}.ckpt"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractSummary {
    pub total_records: usize,
    pub retained: usize,
    pub scans: usize,
    pub class_histogram: BTreeMap<String, usize>,
    pub binary_histogram: BTreeMap<String, usize>,
    pub resize_needed: usize,
    pub resize_needed_rate: f64,
    pub fold_sizes: Vec<usize>,
}

fn ensure_unique(records: &[NoduleRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.key()) {
            return Err(Error::DuplicateNodule(r.key()));
        }
    }
    Ok(())
}

fn volume_file(dir: &Path, scan_id: &str) -> PathBuf {
    dir.join(format!("{scan_id}.raw"))
}

/// Box in the grid of `prepared`, given one drawn on the grid of `source`.
fn box_on_prepared(bbox: &BoundingBox, source: &CtVolume, prepared: &CtVolume) -> Result<BoundingBox> {
    if !bbox.intersects_volume(source.shape()) {
        return Err(Error::BoxOutsideVolume {
            bbox: bbox.as_array(),
            shape: source.shape(),
        });
    }
    if source.spacing == prepared.spacing {
        Ok(*bbox)
    } else {
        Ok(bbox.rescaled(source.spacing, prepared.spacing, prepared.shape()))
    }
}

/// Prepares every referenced volume, extracts canonical patches for all
/// retained nodules and writes them as one shard per fold.
pub fn cmd_extract(cfg: &ExperimentConfig) -> Result<ExtractSummary> {
    let records = load_manifest(&cfg.manifest)?;
    ensure_unique(&records)?;
    let retained = filter_targets(&records, cfg.keep_indeterminate)?;
    let kept: Vec<NoduleRecord> = retained.iter().map(|(r, _)| r.clone()).collect();
    let assignment = grouped_kfold(&kept, cfg.folds, cfg.seed)?;

    let mut by_scan: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (r, _)) in retained.iter().enumerate() {
        by_scan.entry(r.scan_id.as_str()).or_default().push(i);
    }
    for scan in by_scan.keys() {
        if !volume_file(&cfg.volumes_dir, scan).exists() {
            return Err(Error::UnknownScan(scan.to_string()));
        }
    }
    let scans: Vec<(&str, Vec<usize>)> = by_scan.into_iter().collect();
    let extracted: Vec<Vec<(usize, ShardRecord, Patch)>> = scans
        .par_iter()
        .map(|(scan, idxs)| {
            let source = load_volume(volume_file(&cfg.volumes_dir, scan))?;
            let prepared = prepare_volume(&source, cfg.target_spacing, &cfg.normalization)?;
            let rel = format!("prepared/{scan}.raw");
            save_volume(&prepared, cfg.output_dir.join(&rel))?;
            idxs.iter()
                .map(|&i| {
                    let (r, level) = &retained[i];
                    let bbox = box_on_prepared(&r.bbox, &source, &prepared)?;
                    let ex = extract_patch(&prepared, &bbox, cfg.crop_size)?;
                    let rec = ShardRecord {
                        patient_id: r.patient_id.clone(),
                        scan_id: r.scan_id.clone(),
                        nodule_id: r.nodule_id.clone(),
                        bbox,
                        source_bbox: r.bbox,
                        label: *level,
                        binary_label: binarize_label(*level).ok(),
                        fold: assignment.fold_of(&r.patient_id).expect("every retained patient has a fold"),
                        resize_needed: ex.resize_needed,
                        volume: rel.clone(),
                    };
                    Ok((i, rec, ex.patch.with_source(&r.scan_id, &r.nodule_id)))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut entries: Vec<(usize, ShardRecord, Patch)> = extracted.into_iter().flatten().collect();
    entries.sort_by_key(|e| e.0);

    let mut per_fold: Vec<Vec<(ShardRecord, Patch)>> = vec![Vec::new(); cfg.folds];
    for (_, rec, patch) in entries {
        per_fold[rec.fold].push((rec, patch));
    }
    let mut class_histogram = BTreeMap::new();
    let mut binary_histogram = BTreeMap::new();
    let mut resize_needed = 0;
    for (rec, _) in per_fold.iter().flatten() {
        *class_histogram.entry(rec.label.name().to_string()).or_insert(0) += 1;
        let b = rec.binary_label.map_or("None".to_string(), |b| format!("{b:?}"));
        *binary_histogram.entry(b).or_insert(0) += 1;
        resize_needed += rec.resize_needed as usize;
    }
    for (f, items) in per_fold.iter().enumerate() {
        write_atomic(&cfg.shard_path(f), &shard_bytes(cfg.crop_size, items)?)?;
    }
    let mut manifest = kept;
    assignment.apply(&mut manifest)?;
    save_manifest(&manifest, cfg.output_dir.join("manifest.json"))?;

    let summary = ExtractSummary {
        total_records: records.len(),
        retained: retained.len(),
        scans: scans.len(),
        class_histogram,
        binary_histogram,
        resize_needed,
        resize_needed_rate: resize_needed as f64 / retained.len().max(1) as f64,
        fold_sizes: per_fold.iter().map(Vec::len).collect(),
    };
    write_json(&cfg.output_dir.join("extract_summary.json"), &summary)?;
    info!("extracted {} of {} nodules from {} scans", summary.retained, summary.total_records, summary.scans);
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub epochs_run: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainEvalSummary {
    pub task: Task,
    pub folds: Vec<FoldSummary>,
    pub skipped_folds: Vec<usize>,
    /// `macro` or `binary` for the task itself; multiclass runs add
    /// `binary_sum` and `binary_max`.
    pub reports: BTreeMap<String, MetricsReport>,
}

struct Loaded {
    samples: Vec<TrainingSample>,
    patches: Vec<Patch>,
    folds: Vec<usize>,
}

fn load_shards(cfg: &ExperimentConfig) -> Result<Loaded> {
    let mut records = Vec::new();
    let mut patches = Vec::new();
    for f in 0..cfg.folds {
        let (header, items) = read_shard(&cfg.shard_path(f), true)?;
        if header.crop_size != cfg.crop_size {
            return Err(Error::InvalidConfig(format!(
                "shards hold {}³ patches but crop_size is {}",
                header.crop_size, cfg.crop_size
            )));
        }
        for (rec, patch) in items {
            if rec.fold >= cfg.folds {
                return Err(Error::InvalidConfig(format!("{} has fold {} but k = {}", rec.key(), rec.fold, cfg.folds)));
            }
            if cfg.task.target_of(rec.label).is_some() {
                records.push(rec);
                patches.push(patch.expect("payload requested"));
            }
        }
    }
    let paths: BTreeSet<&str> = records.iter().map(|r| r.volume.as_str()).collect();
    let volumes: HashMap<&str, Arc<CtVolume>> = paths
        .into_par_iter()
        .map(|p| Ok((p, Arc::new(load_volume(cfg.output_dir.join(p))?))))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .collect();
    let samples = records
        .iter()
        .map(|r| TrainingSample {
            volume: volumes[r.volume.as_str()].clone(),
            bbox: r.bbox,
            target: cfg.task.target_of(r.label).expect("filtered above"),
            patient_id: r.patient_id.clone(),
            scan_id: r.scan_id.clone(),
            nodule_id: r.nodule_id.clone(),
        })
        .collect();
    Ok(Loaded {
        samples,
        patches,
        folds: records.iter().map(|r| r.fold).collect(),
    })
}

/// Scores pooled predictions: the task's own report, plus both binary
/// aggregations for multiclass tasks.
pub fn pooled_reports(per_fold: &[Vec<Prediction>], task: Task, threshold: f64) -> Result<BTreeMap<String, MetricsReport>> {
    let mut reports = BTreeMap::new();
    let own = if task.is_binary() { "binary" } else { "macro" };
    reports.insert(own.to_string(), pool_folds(per_fold, task, threshold)?);
    if !task.is_binary() {
        for (name, mode) in [("binary_sum", Aggregation::Sum), ("binary_max", Aggregation::Max)] {
            let binarized = per_fold
                .iter()
                .map(|f| binarize_predictions(f, task, mode))
                .collect::<Result<Vec<_>>>()?;
            reports.insert(name.to_string(), pool_folds(&binarized, Task::Binary, threshold)?);
        }
    }
    Ok(reports)
}

fn write_reports(dir: &Path, reports: &BTreeMap<String, MetricsReport>) -> Result<()> {
    for (name, r) in reports {
        r.validate()?;
        write_json(&dir.join(format!("{name}.json")), r)?;
        write_atomic(&dir.join(format!("confusion_{name}.csv")), r.confusion_csv().as_bytes())?;
    }
    Ok(())
}

/// Trains one model per fold on the other folds, predicts its validation
/// fold with flip TTA and scores the pooled predictions.
pub fn cmd_train_eval(cfg: &ExperimentConfig) -> Result<TrainEvalSummary> {
    let data = load_shards(cfg)?;
    let mut per_fold = Vec::new();
    let mut folds = Vec::new();
    let mut skipped = Vec::new();
    for f in 0..cfg.folds {
        let (train_idx, val_idx): (Vec<usize>, Vec<usize>) = (0..data.samples.len()).partition(|&i| data.folds[i] != f);
        let classes: BTreeSet<usize> = val_idx.iter().map(|&i| data.samples[i].target).collect();
        if classes.len() < 2 {
            warn!("fold {f}: validation set has {} class(es); fold skipped", classes.len());
            skipped.push(f);
            continue;
        }
        let train: Vec<TrainingSample> = train_idx.iter().map(|&i| data.samples[i].clone()).collect();
        let val: Vec<TrainingSample> = val_idx.iter().map(|&i| data.samples[i].clone()).collect();
        info!("fold {f}: {} training, {} validation nodules", train.len(), val.len());
        let setup = FoldSetup {
            model: &cfg.model,
            train: &cfg.train,
            augment: &cfg.augment,
            crop_size: cfg.crop_size,
            fold: f,
        };
        let outcome = train_fold::<f32>(&train, &val, &setup)?;
        Checkpoint::new(outcome.model.clone(), cfg.task, outcome.best_epoch, outcome.best_f1, cfg.crop_size)
            .save(cfg.checkpoint_path(f))?;
        write_jsonl(&cfg.output_dir.join("logs").join(format!("fold_{f}.jsonl")), &outcome.log.epochs)?;
        let probs = val_idx
            .par_iter()
            .map(|&i| tta_predict(&outcome.model, &data.patches[i]))
            .collect::<Result<Vec<_>>>()?;
        let preds: Vec<Prediction> = val
            .iter()
            .zip(probs)
            .map(|(s, p)| Prediction {
                scan_id: s.scan_id.clone(),
                nodule_id: s.nodule_id.clone(),
                patient_id: s.patient_id.clone(),
                fold: f,
                probabilities: p,
                true_label: s.target,
            })
            .collect();
        folds.push(FoldSummary {
            fold: f,
            train_size: train.len(),
            val_size: val.len(),
            best_epoch: outcome.best_epoch,
            best_val_f1: outcome.best_f1,
            epochs_run: outcome.log.epochs.len(),
        });
        per_fold.push(preds);
    }
    if per_fold.is_empty() {
        return Err(Error::EmptyDataset("every fold was skipped".into()));
    }
    let all: Vec<Prediction> = per_fold.iter().flatten().cloned().collect();
    write_jsonl(&cfg.output_dir.join("predictions.jsonl"), &all)?;
    let reports = pooled_reports(&per_fold, cfg.task, cfg.threshold)?;
    write_reports(&cfg.output_dir.join("reports"), &reports)?;
    let summary = TrainEvalSummary {
        task: cfg.task,
        folds,
        skipped_folds: skipped,
        reports,
    };
    write_json(&cfg.output_dir.join("train_summary.json"), &summary)?;
    Ok(summary)
}

/// Result of scoring one nodule with a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionOutput {
    pub scan_id: String,
    pub task: Task,
    pub bbox: BoundingBox,
    /// Per-class probabilities (multiclass) keyed by class name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<BTreeMap<String, f64>>,
    pub p_dangerous: f64,
    pub p_not_dangerous: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregation: Option<Aggregation>,
}

/// Flip-TTA prediction for one box. Unnormalized volumes are resampled and
/// normalized first; normalized ones are only resampled.
pub fn cmd_predict(
    checkpoint: &Checkpoint,
    volume: &CtVolume,
    bbox: &BoundingBox,
    aggregation: Aggregation,
    target_spacing: VoxelSpacing,
    normalization: &NormalizationParams,
) -> Result<PredictionOutput> {
    bbox.validate()?;
    let prepared = if volume.normalized {
        resample_volume(volume, target_spacing)?
    } else {
        prepare_volume(volume, target_spacing, normalization)?
    };
    let b = box_on_prepared(bbox, volume, &prepared)?;
    let patch = extract_patch(&prepared, &b, checkpoint.header.crop_size)?.patch;
    let probs = tta_predict(&checkpoint.model, &patch)?;
    let task = checkpoint.header.task;
    let out = if task.is_binary() {
        PredictionOutput {
            scan_id: volume.scan_id.clone(),
            task,
            bbox: *bbox,
            classes: None,
            p_dangerous: probs[0],
            p_not_dangerous: 1.0 - probs[0],
            aggregation: None,
        }
    } else {
        let (d, n) = aggregate_binary(&ClassProbabilities::from_vec(&probs)?, aggregation);
        PredictionOutput {
            scan_id: volume.scan_id.clone(),
            task,
            bbox: *bbox,
            classes: Some(task.class_names().into_iter().zip(probs).collect()),
            p_dangerous: d,
            p_not_dangerous: n,
            aggregation: Some(aggregation),
        }
    };
    Ok(out)
}

/// Re-scores a `predictions.jsonl` file, grouping by its fold field.
pub fn cmd_report(predictions: &Path, task: Task, threshold: f64, out_dir: Option<&Path>) -> Result<BTreeMap<String, MetricsReport>> {
    let preds: Vec<Prediction> = read_jsonl(predictions)?;
    let mut by_fold: BTreeMap<usize, Vec<Prediction>> = BTreeMap::new();
    for p in preds {
        by_fold.entry(p.fold).or_default().push(p);
    }
    let per_fold: Vec<Vec<Prediction>> = by_fold.into_values().collect();
    let reports = pooled_reports(&per_fold, task, threshold)?;
    if let Some(dir) = out_dir {
        write_reports(dir, &reports)?;
    }
    Ok(reports)
}
