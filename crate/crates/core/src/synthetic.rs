//! Synthetic datasets: a manifest with a realistic class mix, and small
//! volumes with spherical nodules whose class is recoverable from intensity.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotations::{aggregate_annotations, save_manifest, NoduleRecord, SuspicionLevel};
use crate::cropping::BoundingBox;
use crate::error::Result;
use crate::rng::RngStream;
use crate::volume::{save_volume, CtVolume, NormalizationParams, VoxelSpacing};

/// Aggregated-label counts of the LIDC-IDRI nodule population (2525 total).
pub const PAPER_CLASS_COUNTS: [(SuspicionLevel, usize); 5] = [
    (SuspicionLevel::HighlyUnlikely, 312),
    (SuspicionLevel::ModeratelyUnlikely, 532),
    (SuspicionLevel::Indeterminate, 1177),
    (SuspicionLevel::ModeratelySuspicious, 332),
    (SuspicionLevel::HighlySuspicious, 172),
];

/// One to four annotator labels whose median is `target`.
pub fn annotator_labels_for(target: SuspicionLevel, rng: &mut RngStream) -> Vec<SuspicionLevel> {
    loop {
        let n = 1 + rng.below(4);
        let labels: Vec<SuspicionLevel> = (0..n)
            .map(|_| {
                let offset = [-1i64, 0, 0, 0, 1][rng.below(5)];
                SuspicionLevel::from_code((target.code() as i64 + offset).clamp(0, 4)).expect("clamped code")
            })
            .collect();
        if aggregate_annotations(&labels).ok() == Some(target) {
            return labels;
        }
    }
}

/// Manifest whose aggregated labels follow [`PAPER_CLASS_COUNTS`]. Patients
/// hold one scan with one to seven nodules; boxes fit inside `shape`.
pub fn paper_count_manifest(seed: u64, shape: [usize; 3]) -> Vec<NoduleRecord> {
    let mut rng = RngStream::new(seed);
    let mut levels: Vec<SuspicionLevel> = PAPER_CLASS_COUNTS
        .iter()
        .flat_map(|&(l, n)| std::iter::repeat_n(l, n))
        .collect();
    rng.shuffle(&mut levels);
    let mut out = Vec::with_capacity(levels.len());
    let mut patient = 0;
    let mut i = 0;
    while i < levels.len() {
        let n = (1 + rng.below(7)).min(levels.len() - i);
        for j in 0..n {
            let bbox = random_box(shape, &mut rng);
            out.push(NoduleRecord {
                patient_id: format!("P{patient:04}"),
                scan_id: format!("S{patient:04}"),
                nodule_id: format!("N{j}"),
                bbox,
                annotator_labels: annotator_labels_for(levels[i + j], &mut rng),
                fold: None,
            });
        }
        i += n;
        patient += 1;
    }
    out
}

fn random_box(shape: [usize; 3], rng: &mut RngStream) -> BoundingBox {
    let mut c = [0i64; 6];
    for a in 0..3 {
        let extent = shape[a] as i64;
        let side = 1 + rng.below(extent.clamp(1, 12) as usize) as i64;
        let lo = rng.below((extent - side + 1) as usize) as i64;
        c[a] = lo;
        c[a + 3] = lo + side;
    }
    BoundingBox::new(c).expect("positive sides")
}

/// Uniform-air volumes for every scan in `records`, written as
/// `dir/<scan_id>.raw` with sidecars.
pub fn write_blank_volumes(records: &[NoduleRecord], shape: [usize; 3], dir: &Path) -> Result<()> {
    let mut scans: Vec<(&str, &str)> = records.iter().map(|r| (r.scan_id.as_str(), r.patient_id.as_str())).collect();
    scans.sort_unstable();
    scans.dedup();
    for (scan, patient) in scans {
        let v = CtVolume::filled(shape, -1000.0, VoxelSpacing::CANONICAL, false)?.with_ids(patient, scan);
        save_volume(&v, dir.join(format!("{scan}.raw")))?;
    }
    Ok(())
}

/// Spheres on a noisy background. Intensities are given on the normalized
/// `[0, 1]` scale and stored as HU through the inverse of `normalization`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SphereConfig {
    pub count: usize,
    pub shape: [usize; 3],
    pub radius: (f64, f64),
    pub background: f64,
    /// Faint sphere (not dangerous).
    pub negative: f64,
    /// Bright sphere (dangerous).
    pub positive: f64,
    pub noise_sigma: f64,
    pub normalization: NormalizationParams,
}

impl Default for SphereConfig {
    fn default() -> Self {
        Self {
            count: 400,
            shape: [36, 36, 36],
            radius: (5.0, 8.0),
            background: 0.2,
            negative: 0.5,
            positive: 0.8,
            noise_sigma: 0.05,
            normalization: NormalizationParams::default(),
        }
    }
}

pub struct SphereCase {
    pub volume: CtVolume,
    pub record: NoduleRecord,
    pub positive: bool,
}

/// Case `index`: classes alternate, radius and centre are random, and the box
/// is the tight integer hull of the sphere.
pub fn sphere_case(cfg: &SphereConfig, seed: u64, index: usize) -> SphereCase {
    let mut rng = RngStream::new(seed).derive(index as u64);
    let positive = index % 2 == 1;
    let r = rng.uniform(cfg.radius.0, cfg.radius.1);
    let margin = r.ceil() + 1.0;
    let center: [f64; 3] = [0, 1, 2].map(|a| rng.uniform(margin, cfg.shape[a] as f64 - margin));
    let level = if positive { cfg.positive } else { cfg.negative };
    let n = &cfg.normalization;
    let to_hu = |v: f64| n.a_min + (v - n.b_min) * (n.a_max - n.a_min) / (n.b_max - n.b_min);
    let [sx, sy, sz] = cfg.shape;
    let mut voxels = Vec::with_capacity(sx * sy * sz);
    for z in 0..sz {
        for y in 0..sy {
            for x in 0..sx {
                let d2 = [x, y, z].iter().zip(center).map(|(&p, c)| (p as f64 - c).powi(2)).sum::<f64>();
                let base = if d2 <= r * r { level } else { cfg.background };
                voxels.push(to_hu(base + cfg.noise_sigma * rng.normal()) as f32);
            }
        }
    }
    let lo = center.map(|c| (c - r).ceil() as i64);
    let hi = center.map(|c| (c + r).floor() as i64 + 1);
    let bbox = BoundingBox::new([lo[0], lo[1], lo[2], hi[0], hi[1], hi[2]]).expect("sphere has volume");
    use SuspicionLevel::*;
    let labels = if positive {
        vec![HighlySuspicious, ModeratelySuspicious, HighlySuspicious]
    } else {
        vec![HighlyUnlikely, ModeratelyUnlikely, HighlyUnlikely]
    };
    let patient = format!("P{index:04}");
    let scan = format!("S{index:04}");
    let volume = CtVolume::new(cfg.shape, voxels, VoxelSpacing::CANONICAL, false)
        .expect("shape matches")
        .with_ids(&patient, &scan);
    SphereCase {
        volume,
        record: NoduleRecord {
            patient_id: patient,
            scan_id: scan,
            nodule_id: "N0".into(),
            bbox,
            annotator_labels: labels,
            fold: None,
        },
        positive,
    }
}

/// Writes `count` cases under `dir/volumes/` and the manifest as
/// `dir/manifest.json`; returns the manifest path.
pub fn write_sphere_dataset(cfg: &SphereConfig, seed: u64, dir: &Path) -> Result<PathBuf> {
    let volumes = dir.join("volumes");
    std::fs::create_dir_all(&volumes).map_err(|e| crate::error::Error::io(&volumes, e))?;
    let mut records = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let case = sphere_case(cfg, seed, i);
        save_volume(&case.volume, volumes.join(format!("{}.raw", case.record.scan_id)))?;
        records.push(case.record);
    }
    let manifest = dir.join("manifest.json");
    save_manifest(&records, &manifest)?;
    Ok(manifest)
}
