//! Acceptance checks. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero on any FAIL.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::{Duration, Instant};

use nodulenet_core::annotations::{aggregate_annotations, filter_targets};
use nodulenet_core::augment::{jitter_box_traced, JitterConfig};
use nodulenet_core::cropping::extract_patch;
use nodulenet_core::evaluation::{
    aggregate_binary, batch_of, classification_metrics, flip_variants, probabilities, roc_auc, tta_predict,
    ClassProbabilities, TTA_VARIANTS,
};
use nodulenet_core::model::{Model, ModelConfig};
use nodulenet_core::pipeline::{cmd_extract, cmd_train_eval, TrainEvalSummary};
use nodulenet_core::synthetic::{paper_count_manifest, write_sphere_dataset, SphereConfig};
use nodulenet_core::training::{adam_update, cosine_lr, AdamParams};
use nodulenet_core::{
    grouped_kfold, Aggregation, BoundingBox, CtVolume, ExperimentConfig, NoduleRecord, Patch, Prediction, RngStream,
    SuspicionLevel, Task, VoxelSpacing,
};

/// Crop size of the learnability run; spheres span at most 17 voxels.
const LEARN_CROP: usize = 20;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let cases = common::all_cases();
    let elapsed = start.elapsed();
    let (worst_name, worst) = cases
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(n, e)| (n.clone(), *e))
        .unwrap();
    let pass = worst <= 1e-4 && elapsed < Duration::from_secs(60);
    outcome(
        pass,
        format!("{} cases, max rel err {worst:.2e} ({worst_name}), {:.1}s", cases.len(), elapsed.as_secs_f64()),
    )
}

fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    wins / pairs
}

fn criterion_2() -> Outcome {
    let mut rng = RngStream::new(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = 2 + rng.below(199);
        // coarse levels force ties
        let levels = 1 + rng.below(12);
        let scores: Vec<f64> = (0..n).map(|_| rng.below(levels) as f64 / levels as f64).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        worst = worst.max((roc_auc(&scores, &labels).unwrap() - pairwise_auc(&scores, &labels)).abs());
    }
    // Ten samples, four classes; counts by hand:
    //   class 0: TP 2, FP 1, FN 1 -> P 2/3, R 2/3, F1 2/3
    //   class 1: TP 1, FP 1, FN 1 -> P 1/2, R 1/2, F1 1/2
    //   class 2: TP 2, FP 1, FN 0 -> P 2/3, R 1,   F1 4/5
    //   class 3: TP 2, FP 0, FN 1 -> P 1,   R 2/3, F1 4/5
    let truth = [0, 0, 0, 1, 1, 2, 2, 3, 3, 3];
    let guess = [0, 0, 1, 1, 2, 2, 2, 3, 0, 3];
    let preds: Vec<Prediction> = truth
        .iter()
        .zip(guess)
        .enumerate()
        .map(|(i, (&t, g))| {
            let mut p = vec![0.1; 4];
            p[g] = 0.7;
            Prediction {
                scan_id: format!("S{i}"),
                nodule_id: "N".into(),
                patient_id: format!("P{i}"),
                fold: 0,
                probabilities: p,
                true_label: t,
            }
        })
        .collect();
    let r = classification_metrics(&preds, Task::Multiclass4, 0.5).unwrap();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-15;
    let fixture = close(r.precision, 17.0 / 24.0) && close(r.recall, 17.0 / 24.0) && close(r.f1, 83.0 / 120.0);
    outcome(
        worst <= 1e-12 && fixture,
        format!(
            "100 instances, max |auc - oracle| {worst:.1e}; fixture P {:.6} R {:.6} F1 {:.6} (expect 17/24, 17/24, 83/120)",
            r.precision, r.recall, r.f1
        ),
    )
}

fn random_volume(rng: &mut RngStream) -> CtVolume {
    let shape = [0; 3].map(|_| 16 + rng.below(80));
    let n = shape.iter().product();
    let voxels = (0..n).map(|_| rng.unit() as f32).collect();
    CtVolume::new(shape, voxels, VoxelSpacing::CANONICAL, true).unwrap()
}

/// Box with at least one voxel inside `shape`; sides up to 90 so some
/// exceed the crop and some hang over the border.
fn random_box(shape: [usize; 3], rng: &mut RngStream) -> BoundingBox {
    let mut c = [0i64; 6];
    for a in 0..3 {
        let limit = if rng.bernoulli(0.2) { 90 } else { 30 };
        let side = 1 + rng.below(limit) as i64;
        let anchor = rng.below(shape[a]) as i64;
        let lo = anchor - rng.below(side as usize) as i64;
        c[a] = lo;
        c[a + 3] = lo + side;
    }
    BoundingBox::new(c).unwrap()
}

fn criterion_3() -> Outcome {
    const S: usize = 64;
    let mut rng = RngStream::new(3);
    let (mut cases, mut shape_ok, mut direct, mut resized, mut oracle_ok, mut relation_ok, mut border) = (0, 0, 0, 0, 0, 0, 0);
    for _ in 0..10 {
        let v = random_volume(&mut rng);
        let shape = v.shape();
        for _ in 0..100 {
            let b = random_box(shape, &mut rng);
            cases += 1;
            if !b.inside_volume(shape) {
                border += 1;
            }
            let e = extract_patch(&v, &b, S).unwrap();
            if e.patch.shape() == [2, S, S, S] && e.patch.data().len() == 2 * S * S * S {
                shape_ok += 1;
            }
            if e.resize_needed {
                resized += 1;
                continue;
            }
            direct += 1;
            let c = [0, 1, 2].map(|a| (b.min[a] + b.max[a]).div_euclid(2) - S as i64 / 2);
            let (mut gather, mut relation) = (true, true);
            for z in 0..S {
                for y in 0..S {
                    for x in 0..S {
                        let p = [c[0] + x as i64, c[1] + y as i64, c[2] + z as i64];
                        let inside = (0..3).all(|a| p[a] >= 0 && p[a] < shape[a] as i64);
                        let want = if inside { v.get(p[0] as usize, p[1] as usize, p[2] as usize) } else { 0.0 };
                        let in_box = (0..3).all(|a| p[a] >= b.min[a] && p[a] < b.max[a]);
                        let (img, mask) = (e.patch.get(0, x, y, z), e.patch.get(1, x, y, z));
                        gather &= img.to_bits() == want.to_bits();
                        relation &= if in_box { mask.to_bits() == img.to_bits() } else { mask == 0.0 };
                    }
                }
            }
            oracle_ok += gather as usize;
            relation_ok += relation as usize;
        }
    }
    outcome(
        shape_ok == cases && oracle_ok == direct && relation_ok == direct && resized > 0 && border > 0,
        format!(
            "{cases} cases ({direct} direct, {resized} resized, {border} over the border): shape {shape_ok}/{cases}, gather {oracle_ok}/{direct}, mask relation {relation_ok}/{direct}"
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = RngStream::new(4);
    let configs = [(-0.75, 0.75), (0.0, 0.0), (-0.2, 0.5), (0.3, 0.3)];
    let mut failures = 0;
    let mut identity_checked = 0;
    for &(lo, hi) in &configs {
        let cfg = JitterConfig { alpha_min: lo, alpha_max: hi };
        for _ in 0..10_000 {
            let shape = [0; 3].map(|_| 8 + rng.below(60));
            let mut c = [0i64; 6];
            for a in 0..3 {
                let side = 1 + rng.below(shape[a]) as i64;
                let min = rng.below(shape[a] - side as usize + 1) as i64;
                c[a] = min;
                c[a + 3] = min + side;
            }
            let b = BoundingBox::new(c).unwrap();
            let d = jitter_box_traced(&b, shape, &cfg, &mut rng).unwrap();
            let len = b.lengths();
            let in_range = (0..3).all(|a| {
                let l = len[a] as f64;
                d.deltas[a] >= l * lo && d.deltas[a] <= l * hi
            });
            let ok = in_range && d.bbox.inside_volume(shape) && d.bbox.lengths() == len;
            let identity = lo != 0.0 || hi != 0.0 || d.bbox == b;
            if lo == 0.0 && hi == 0.0 {
                identity_checked += 1;
            }
            failures += usize::from(!(ok && identity));
        }
    }
    outcome(
        failures == 0 && identity_checked == 10_000,
        format!("{} draws over {} configs, {failures} violations; alpha = 0 identity on {identity_checked} draws", 10_000 * configs.len(), configs.len()),
    )
}

fn criterion_5() -> Outcome {
    let total = 1000;
    let lrs: Vec<f64> = (0..=total).map(|s| cosine_lr(s, total, 1e-3, 1e-5)).collect();
    let endpoints = lrs[0] == 1e-3 && lrs[total] == 1e-5;
    let monotone = lrs.windows(2).all(|w| w[1] <= w[0]);
    // p0 = 1, g = (0.5, -0.25, 0.125), lr 1e-3, betas (0.9, 0.999), eps 1e-8:
    //   t1: m 0.05,   v 0.00025,     p = 1 - 1e-3 * 0.5 / (0.5 + 1e-8)
    //   t2: m 0.02,   v 0.00031225
    //   t3: m 0.0305, v 0.00032756275
    let expected = [
        (0.05, 0.00025, 0.999_000_000_019_999_999_6),
        (0.02, 0.000_312_25, 0.998_733_662_987_078_461_6),
        (0.0305, 0.000_327_562_75, 0.998_393_233_849_166_539_7),
    ];
    let (mut p, mut m, mut v) = ([1.0f64], [0.0f64], [0.0f64]);
    let mut worst: f64 = 0.0;
    for (t, (g, (em, ev, ep))) in [0.5, -0.25, 0.125].into_iter().zip(expected).enumerate() {
        adam_update(&mut p, &[g], &mut m, &mut v, t as u64 + 1, 1e-3, &AdamParams::default());
        worst = worst.max((p[0] - ep).abs()).max((m[0] - em).abs()).max((v[0] - ev).abs());
    }
    outcome(
        endpoints && monotone && worst <= 1e-12,
        format!("lr(0) = {:e}, lr(T) = {:e}, monotone {monotone}; adam 3-step max error {worst:.1e}", lrs[0], lrs[total]),
    )
}

fn median_oracle(labels: &[SuspicionLevel]) -> u8 {
    let mut codes: Vec<u8> = labels.iter().map(|l| l.code()).collect();
    codes.sort();
    let n = codes.len();
    if n % 2 == 1 {
        codes[n / 2]
    } else {
        // half-integer medians round up
        (codes[n / 2 - 1] + codes[n / 2]).div_ceil(2)
    }
}

fn criterion_6() -> Outcome {
    let mut rng = RngStream::new(6);
    let mut mismatches = 0;
    for _ in 0..100_000 {
        let n = 1 + rng.below(8);
        let mut labels: Vec<SuspicionLevel> =
            (0..n).map(|_| SuspicionLevel::from_code(rng.below(5) as i64).unwrap()).collect();
        let first = aggregate_annotations(&labels).unwrap();
        rng.shuffle(&mut labels);
        let second = aggregate_annotations(&labels).unwrap();
        if first != second || first.code() != median_oracle(&labels) {
            mismatches += 1;
        }
    }
    let manifest = paper_count_manifest(6, [24, 24, 24]);
    let indeterminate = filter_targets(&manifest, true)
        .unwrap()
        .iter()
        .filter(|(_, l)| *l == SuspicionLevel::Indeterminate)
        .count();
    let retained = filter_targets(&manifest, false).unwrap().len();
    outcome(
        mismatches == 0 && manifest.len() == 2525 && indeterminate == 1177 && retained == 1348,
        format!("1e5 multisets, {mismatches} mismatches; manifest {} nodules, {indeterminate} Indeterminate, {retained} retained", manifest.len()),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = RngStream::new(7);
    let mut records = Vec::new();
    let mut max_per_patient = 0;
    for p in 0..200 {
        let n = 1 + rng.below(7);
        max_per_patient = max_per_patient.max(n);
        for j in 0..n {
            records.push(NoduleRecord {
                patient_id: format!("P{p:03}"),
                scan_id: format!("S{p:03}-{}", j % 2),
                nodule_id: format!("N{j}"),
                bbox: BoundingBox::new([0, 0, 0, 4, 4, 4]).unwrap(),
                annotator_labels: vec![SuspicionLevel::HighlyUnlikely],
                fold: None,
            });
        }
    }
    let mut worst_spread = 0;
    let mut leaks = 0;
    for seed in 0..10 {
        let a = grouped_kfold(&records, 5, seed).unwrap();
        let mut folds_of: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
        let mut covered = 0;
        for k in 0..5 {
            let (train, val) = a.split_indices(&records, k);
            covered += val.len();
            let train_patients: BTreeSet<&str> = train.iter().map(|&i| records[i].patient_id.as_str()).collect();
            leaks += val.iter().filter(|&&i| train_patients.contains(records[i].patient_id.as_str())).count();
            for &i in &val {
                folds_of.entry(&records[i].patient_id).or_default().insert(k);
            }
        }
        leaks += folds_of.values().filter(|f| f.len() != 1).count() + (covered != records.len()) as usize;
        leaks += 200 - folds_of.len();
        let sizes = a.fold_sizes(&records);
        worst_spread = worst_spread.max(sizes.iter().max().unwrap() - sizes.iter().min().unwrap());
    }
    outcome(
        leaks == 0 && worst_spread <= max_per_patient,
        format!("{} nodules / 200 patients, 10 seeds: {leaks} leaks, worst fold spread {worst_spread} (limit {max_per_patient})", records.len()),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = RngStream::new(8);
    let mut worst: f64 = 0.0;
    let mut violations = 0;
    for i in 0..10_000 {
        // uniform on the simplex via normalized exponentials; half the points
        // carry a fifth (Indeterminate) component
        let k = if i % 2 == 0 { 4 } else { 5 };
        let e: Vec<f64> = (0..k).map(|_| -(1.0 - rng.unit()).ln()).collect();
        let total: f64 = e.iter().sum();
        let p: Vec<f64> = e.iter().map(|v| v / total).collect();
        let (ms, hs) = (p[k - 2], p[k - 1]);
        let c = ClassProbabilities::from_vec(&p).unwrap();
        let (sum_d, sum_n) = aggregate_binary(&c, Aggregation::Sum);
        let (max_d, max_n) = aggregate_binary(&c, Aggregation::Max);
        if sum_d + sum_n != 1.0 || max_d > sum_d {
            violations += 1;
        }
        worst = worst
            .max((sum_d - (ms + hs)).abs())
            .max((sum_n - (1.0 - (ms + hs))).abs())
            .max((max_d - ms.max(hs)).abs())
            .max((max_n - (1.0 - ms.max(hs))).abs());
    }
    outcome(
        violations == 0 && worst <= 1e-12,
        format!("1e4 simplex points: {violations} violations, max deviation {worst:.1e}"),
    )
}

struct Run {
    summary: TrainEvalSummary,
    predictions: Vec<u8>,
    elapsed: Duration,
}

fn learnability_run(data: &Path, out: &Path) -> Run {
    let cfg: ExperimentConfig = serde_json::from_value(serde_json::json!({
        "volumes_dir": data.join("volumes"),
        "manifest": data.join("manifest.json"),
        "output_dir": out,
        "crop_size": LEARN_CROP,
        "task": "binary",
        "model": {"block_kind": "basic", "blocks_per_stage": [1, 1, 1, 1], "base_width": 8, "num_outputs": 1},
        "train": {"max_epochs": 10, "batch_size": 16},
        "folds": 5,
        "seed": 9,
    }))
    .unwrap();
    let cfg = cfg.resolve().unwrap();
    let start = Instant::now();
    cmd_extract(&cfg).unwrap();
    let summary = cmd_train_eval(&cfg).unwrap();
    let elapsed = start.elapsed();
    Run {
        summary,
        predictions: std::fs::read(out.join("predictions.jsonl")).unwrap(),
        elapsed,
    }
}

fn criterion_9(first: &Run, synth_time: Duration) -> Outcome {
    let r = &first.summary.reports["binary"];
    let total = first.elapsed + synth_time;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    outcome(
        r.roc_auc >= 0.95 && r.f1 >= 0.90 && total <= Duration::from_secs(600),
        format!(
            "400 volumes, 5 folds, crop {LEARN_CROP}: pooled AUC {:.4}, F1 {:.4}, {} predictions; {:.0}s on {cores} core(s)",
            r.roc_auc,
            r.f1,
            r.count,
            total.as_secs_f64()
        ),
    )
}

/// Symmetrizes every convolution kernel over all axis reversals; with odd
/// input sizes that stay odd down the strided stages, the network is then
/// invariant to flips of its input.
fn flip_invariant_model() -> Model<f64> {
    let mut model: Model<f64> = Model::build(&ModelConfig::tiny(4), &mut RngStream::new(10)).unwrap();
    for t in model.params.iter_mut().filter(|t| t.shape.len() == 5 && t.shape[2] > 1) {
        let k = t.shape[2];
        let src = t.data.clone();
        for (block, out) in src.chunks(k * k * k).zip(t.data.chunks_mut(k * k * k)) {
            for z in 0..k {
                for y in 0..k {
                    for x in 0..k {
                        let mut acc = 0.0;
                        for mask in 0..8 {
                            let f = |v: usize, bit: usize| if mask >> bit & 1 == 1 { k - 1 - v } else { v };
                            acc += block[f(x, 0) + k * (f(y, 1) + k * f(z, 2))];
                        }
                        out[x + k * (y + k * z)] = acc / 8.0;
                    }
                }
            }
        }
    }
    model
}

fn criterion_10(first: &Run, second: &Run) -> Outcome {
    let mut rng = RngStream::new(10);
    let s = 9;
    let data: Vec<f32> = (0..2 * s * s * s).map(|_| rng.unit() as f32).collect();
    let patch = Patch::from_data(s, data).unwrap();
    let variants = flip_variants(&patch);
    // oracle: reverse the chosen axes by index arithmetic
    let oracle = |mask: usize| {
        let mut q = Patch::zeros(s);
        for c in 0..2 {
            for z in 0..s {
                for y in 0..s {
                    for x in 0..s {
                        let f = |v: usize, bit: usize| if mask >> bit & 1 == 1 { s - 1 - v } else { v };
                        let i = q.index(x, y, z) + c * s * s * s;
                        q.data_mut()[i] = patch.get(c, f(x, 0), f(y, 1), f(z, 2));
                    }
                }
            }
        }
        q
    };
    let matched = (0..8)
        .filter(|&m| variants.iter().any(|v| v.data() == oracle(m).data()))
        .count();
    let distinct: BTreeSet<Vec<u32>> = variants.iter().map(|v| v.data().iter().map(|x| x.to_bits()).collect()).collect();
    let enumerated = TTA_VARIANTS == 8 && variants.len() == 8 && distinct.len() == 8 && matched == 8;

    let model = flip_invariant_model();
    let tta = tta_predict(&model, &patch).unwrap();
    let logits = model.forward(&batch_of::<f64>(std::slice::from_ref(&patch)).unwrap()).unwrap();
    let single = probabilities(logits.row(0));
    let invariance = tta.iter().zip(&single).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    // the model is not trivially constant: a non-flip transform changes it
    let mut shifted = patch.clone();
    shifted.data_mut().rotate_left(1);
    let moved = probabilities(model.forward(&batch_of::<f64>(&[shifted]).unwrap()).unwrap().row(0));
    let nontrivial = moved.iter().zip(&single).any(|(a, b)| (a - b).abs() > 1e-9);

    let identical = first.summary.reports == second.summary.reports && first.predictions == second.predictions;
    outcome(
        enumerated && invariance <= 1e-6 && nontrivial && identical,
        format!(
            "{} variants ({} distinct, {matched}/8 match oracle); flip-invariant model |TTA - single| {invariance:.1e}; repeated run identical: {identical}",
            variants.len(),
            distinct.len()
        ),
    )
}

fn report(n: usize, o: &Outcome) -> bool {
    println!("criterion {n:>2}: {} — {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    o.pass
}

fn main() {
    let mut all = true;
    let checks: [fn() -> Outcome; 8] =
        [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8];
    for (i, check) in checks.iter().enumerate() {
        all &= report(i + 1, &check());
    }

    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let start = Instant::now();
    write_sphere_dataset(&SphereConfig::default(), 9, &data).unwrap();
    let synth_time = start.elapsed();
    let first = learnability_run(&data, &dir.path().join("run_a"));
    all &= report(9, &criterion_9(&first, synth_time));
    let second = learnability_run(&data, &dir.path().join("run_b"));
    all &= report(10, &criterion_10(&first, &second));

    if !all {
        std::process::exit(1);
    }
}
