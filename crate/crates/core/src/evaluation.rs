//! Flip test-time augmentation, multiclass-to-binary probability
//! aggregation, ROC AUC and precision / recall / F1 reporting.

use std::collections::HashSet;
use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::augment::flip_patch;
use crate::cropping::Patch;
use crate::error::{Error, Result};
use crate::model::{Model, Real, TensorBatch};
use crate::task::Task;

/// Number of axis-flip combinations averaged by [`tta_predict`].
pub const TTA_VARIANTS: usize = 8;

/// All `2³` flip variants of a patch, in bit order `(x, y, z)`; variant 0 is
/// the patch itself.
pub fn flip_variants(p: &Patch) -> Vec<Patch> {
    (0..TTA_VARIANTS)
        .map(|mask| {
            let mut q = p.clone();
            for axis in 0..3 {
                if mask >> axis & 1 == 1 {
                    flip_patch(&mut q, axis);
                }
            }
            q
        })
        .collect()
}

/// Softmax per row, or the sigmoid of a single logit.
pub fn probabilities<T: Real>(row: &[T]) -> Vec<f64> {
    if row.len() == 1 {
        return vec![sigmoid(row[0].f64())];
    }
    let max = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v.f64() - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn patches_to_batch<T: Real>(patches: &[Patch]) -> Result<TensorBatch<T>> {
    let s = patches[0].size();
    let mut data = Vec::with_capacity(patches.len() * 2 * s * s * s);
    for p in patches {
        if p.size() != s {
            return Err(Error::ShapeMismatch("patches in a batch must share a size".into()));
        }
        data.extend(p.data().iter().map(|&v| T::of(v as f64)));
    }
    TensorBatch::from_vec(patches.len(), 2, [s; 3], data)
}

/// Stacks patches into a network input batch.
pub fn batch_of<T: Real>(patches: &[Patch]) -> Result<TensorBatch<T>> {
    if patches.is_empty() {
        return Err(Error::EmptyPredictions);
    }
    patches_to_batch(patches)
}

/// Single-view probabilities for each patch (evaluation mode).
pub fn predict<T: Real>(model: &Model<T>, patches: &[Patch], batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(patches.len());
    for chunk in patches.chunks(batch_size.max(1)) {
        let logits = model.forward(&batch_of(chunk)?)?;
        out.extend((0..logits.rows).map(|r| probabilities(logits.row(r))));
    }
    Ok(out)
}

/// Mean of the per-variant probabilities over all eight flip variants, both
/// channels flipped together.
pub fn tta_predict<T: Real>(model: &Model<T>, patch: &Patch) -> Result<Vec<f64>> {
    let variants = flip_variants(patch);
    let logits = model.forward(&batch_of(&variants)?)?;
    let mut mean = vec![0.0; logits.cols];
    for r in 0..logits.rows {
        for (m, p) in mean.iter_mut().zip(probabilities(logits.row(r))) {
            *m += p;
        }
    }
    mean.iter_mut().for_each(|m| *m /= logits.rows as f64);
    Ok(mean)
}

/// Class probabilities of a multiclass model, keyed by suspicion level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassProbabilities {
    pub highly_unlikely: f64,
    pub moderately_unlikely: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indeterminate: Option<f64>,
    pub moderately_suspicious: f64,
    pub highly_suspicious: f64,
}

impl ClassProbabilities {
    /// From a softmax vector of a four- or five-class model.
    pub fn from_vec(p: &[f64]) -> Result<Self> {
        match *p {
            [hu, mu, ms, hs] => Ok(Self {
                highly_unlikely: hu,
                moderately_unlikely: mu,
                indeterminate: None,
                moderately_suspicious: ms,
                highly_suspicious: hs,
            }),
            [hu, mu, ind, ms, hs] => Ok(Self {
                highly_unlikely: hu,
                moderately_unlikely: mu,
                indeterminate: Some(ind),
                moderately_suspicious: ms,
                highly_suspicious: hs,
            }),
            _ => Err(Error::ShapeMismatch(format!("expected 4 or 5 class probabilities, got {}", p.len()))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// `p_dangerous = p_MS + p_HS`.
    Sum,
    /// `p_dangerous = max(p_MS, p_HS)`.
    Max,
}

/// `(p_dangerous, p_not_dangerous)` with `p_not_dangerous = 1 - p_dangerous`.
pub fn aggregate_binary(p: &ClassProbabilities, mode: Aggregation) -> (f64, f64) {
    let dangerous = match mode {
        Aggregation::Sum => p.moderately_suspicious + p.highly_suspicious,
        Aggregation::Max => p.moderately_suspicious.max(p.highly_suspicious),
    };
    (dangerous, 1.0 - dangerous)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from mid-ranks in `O(n log n)`.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch("scores and labels differ in length".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of 1-based mid-ranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + 1 + j) as f64 / 2.0;
        let pos_in_tie = order[i..j].iter().filter(|&&k| labels[k]).count();
        rank_sum += mid * pos_in_tie as f64;
        i = j;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Unweighted mean of one-vs-rest AUCs. Classes without both positives and
/// negatives are skipped with a warning.
pub fn macro_roc_auc(probs: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<f64> {
    let mut aucs = Vec::new();
    for c in 0..num_classes {
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let truth: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        match roc_auc(&scores, &truth) {
            Ok(a) => aucs.push(a),
            Err(Error::SingleClass) => warn!("class {c} has no positives or no negatives; skipped in macro AUC"),
            Err(e) => return Err(e),
        }
    }
    if aucs.is_empty() {
        return Err(Error::SingleClass);
    }
    Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
}

/// Scored validation sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub scan_id: String,
    pub nodule_id: String,
    #[serde(default)]
    pub patient_id: String,
    #[serde(default)]
    pub fold: usize,
    /// Class probabilities (multiclass) or `[p_dangerous]` (binary).
    pub probabilities: Vec<f64>,
    /// Class index in the task's class order.
    pub true_label: usize,
}

impl Prediction {
    pub fn key(&self) -> String {
        format!("{}/{}", self.scan_id, self.nodule_id)
    }

    /// Decided class: argmax (first maximum wins) or `p >= threshold`.
    pub fn decision(&self, threshold: f64) -> usize {
        if self.probabilities.len() == 1 {
            (self.probabilities[0] >= threshold) as usize
        } else {
            let mut best = 0;
            for (i, &p) in self.probabilities.iter().enumerate() {
                if p > self.probabilities[best] {
                    best = i;
                }
            }
            best
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportKind {
    Macro,
    Binary,
}

/// Metrics over one prediction set. Binary reports score the Dangerous class;
/// macro reports average classes without weighting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub kind: ReportKind,
    pub count: u64,
    pub roc_auc: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub class_names: Vec<String>,
    pub per_class: Vec<ClassMetrics>,
    /// Rows are truth, columns are predictions.
    pub confusion_matrix: Vec<Vec<u64>>,
    pub threshold: f64,
}

impl MetricsReport {
    /// Checks internal consistency: counts add up and metrics lie in `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        let total: u64 = self.confusion_matrix.iter().flatten().sum();
        let bad = |d: String| Err(Error::Format { kind: "metrics report", detail: d });
        if total != self.count {
            return bad(format!("confusion total {total} != count {}", self.count));
        }
        let metrics = [self.roc_auc, self.recall, self.precision, self.f1];
        if metrics.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return bad(format!("metric out of range: {metrics:?}"));
        }
        for (c, row) in self.per_class.iter().zip(&self.confusion_matrix) {
            if row.iter().sum::<u64>() != c.support {
                return bad(format!("support mismatch for {}", c.name));
            }
        }
        Ok(())
    }

    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("truth\\pred");
        for n in &self.class_names {
            let _ = write!(s, ",{n}");
        }
        s.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.confusion_matrix) {
            s.push_str(name);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

fn ratio(num: u64, den: u64, what: &str, class: &str) -> f64 {
    if den == 0 {
        warn!("{what} undefined for class {class}; reported as 0");
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall, F1 and AUC for a prediction set. Multiclass decisions
/// use argmax; binary decisions use `p >= threshold`.
pub fn classification_metrics(predictions: &[Prediction], task: Task, threshold: f64) -> Result<MetricsReport> {
    if predictions.is_empty() {
        return Err(Error::EmptyPredictions);
    }
    let k = task.num_classes();
    let expected_len = task.num_outputs();
    let mut cm = vec![vec![0u64; k]; k];
    for p in predictions {
        if p.probabilities.len() != expected_len {
            return Err(Error::ShapeMismatch(format!(
                "prediction {} has {} probabilities, task needs {expected_len}",
                p.key(),
                p.probabilities.len()
            )));
        }
        if p.true_label >= k {
            return Err(Error::InvalidClassIndex {
                index: p.true_label,
                classes: k,
            });
        }
        cm[p.true_label][p.decision(threshold)] += 1;
    }
    let names = task.class_names();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = cm[c][c];
            let support: u64 = cm[c].iter().sum();
            let predicted: u64 = cm.iter().map(|r| r[c]).sum();
            let precision = ratio(tp, predicted, "precision", &names[c]);
            let recall = ratio(tp, support, "recall", &names[c]);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                name: names[c].clone(),
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let labels: Vec<usize> = predictions.iter().map(|p| p.true_label).collect();
    let (kind, auc, precision, recall, f1) = if task.is_binary() {
        let scores: Vec<f64> = predictions.iter().map(|p| p.probabilities[0]).collect();
        let truth: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        let pos = &per_class[1];
        (ReportKind::Binary, roc_auc(&scores, &truth)?, pos.precision, pos.recall, pos.f1)
    } else {
        let probs: Vec<Vec<f64>> = predictions.iter().map(|p| p.probabilities.clone()).collect();
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
        (
            ReportKind::Macro,
            macro_roc_auc(&probs, &labels, k)?,
            mean(|c| c.precision),
            mean(|c| c.recall),
            mean(|c| c.f1),
        )
    };
    let report = MetricsReport {
        kind,
        count: predictions.len() as u64,
        roc_auc: auc,
        recall,
        precision,
        f1,
        class_names: names,
        per_class,
        confusion_matrix: cm,
        threshold,
    };
    report.validate()?;
    Ok(report)
}

/// F1 used for model selection: binary F1 of the Dangerous class, or macro F1.
pub fn selection_f1(predictions: &[Prediction], task: Task) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyPredictions);
    }
    let k = task.num_classes();
    let mut cm = vec![vec![0u64; k]; k];
    for p in predictions {
        cm[p.true_label][p.decision(0.5)] += 1;
    }
    let f1_of = |c: usize| {
        let tp = cm[c][c] as f64;
        let fp = cm.iter().map(|r| r[c]).sum::<u64>() as f64 - tp;
        let fn_ = cm[c].iter().sum::<u64>() as f64 - tp;
        if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fn_)
        }
    };
    Ok(if task.is_binary() {
        f1_of(1)
    } else {
        (0..k).map(f1_of).sum::<f64>() / k as f64
    })
}

/// Concatenates validation predictions of every fold and scores them once.
pub fn pool_folds(per_fold: &[Vec<Prediction>], task: Task, threshold: f64) -> Result<MetricsReport> {
    let mut seen = HashSet::new();
    let mut all = Vec::new();
    for fold in per_fold {
        for p in fold {
            if !seen.insert(p.key()) {
                return Err(Error::DuplicateNodule(p.key()));
            }
            all.push(p.clone());
        }
    }
    classification_metrics(&all, task, threshold)
}

/// Converts multiclass predictions to Dangerous-probability predictions.
/// Samples whose truth is Indeterminate have no binary label and are dropped.
pub fn binarize_predictions(predictions: &[Prediction], task: Task, mode: Aggregation) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(predictions.len());
    for p in predictions {
        let level = task.level_of(p.true_label).ok_or(Error::InvalidClassIndex {
            index: p.true_label,
            classes: task.num_classes(),
        })?;
        let Some(truth) = Task::Binary.target_of(level) else {
            continue;
        };
        let probs = ClassProbabilities::from_vec(&p.probabilities)?;
        let (dangerous, _) = aggregate_binary(&probs, mode);
        out.push(Prediction {
            probabilities: vec![dangerous],
            true_label: truth,
            ..p.clone()
        });
    }
    Ok(out)
}
