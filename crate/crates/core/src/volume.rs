//! CT volumes: raw loading, resampling to a canonical voxel geometry and
//! intensity normalization.
//!
//! Voxels are stored with the X axis fastest: `index = x + H * (y + W * z)`
//! for a volume of shape `(H, W, D)`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical voxel size in millimetres along X, Y and Z.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelSpacing {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl VoxelSpacing {
    /// Canonical spacing every scan is resampled to: 0.625 mm in-plane,
    /// 1.0 mm slice thickness.
    pub const CANONICAL: VoxelSpacing = VoxelSpacing {
        dx: 0.625,
        dy: 0.625,
        dz: 1.0,
    };

    pub fn new(dx: f64, dy: f64, dz: f64) -> Result<Self> {
        let s = Self { dx, dy, dz };
        s.validate()?;
        Ok(s)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.dx, self.dy, self.dz]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::NonPositiveSpacing(self.as_array()))
        }
    }
}

/// Linear intensity window `[a_min, a_max] -> [b_min, b_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub a_min: f64,
    pub a_max: f64,
    pub b_min: f64,
    pub b_max: f64,
}

impl Default for NormalizationParams {
    fn default() -> Self {
        Self {
            a_min: -1024.0,
            a_max: 700.0,
            b_min: 0.0,
            b_max: 1.0,
        }
    }
}

impl NormalizationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a_max > self.a_min) {
            return Err(Error::InvalidNormalization(format!(
                "a_max {} must exceed a_min {}",
                self.a_max, self.a_min
            )));
        }
        if !(self.b_max > self.b_min) {
            return Err(Error::InvalidNormalization(format!(
                "b_max {} must exceed b_min {}",
                self.b_max, self.b_min
            )));
        }
        Ok(())
    }

    /// Maps one HU value into the output range, clamping values outside
    /// `[a_min, a_max]`.
    pub fn apply(&self, hu: f64) -> f64 {
        let out = self.b_min + (hu - self.a_min) * (self.b_max - self.b_min) / (self.a_max - self.a_min);
        out.clamp(self.b_min, self.b_max)
    }
}

/// A 3D intensity grid with physical spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct CtVolume {
    shape: [usize; 3],
    voxels: Vec<f32>,
    pub spacing: VoxelSpacing,
    pub normalized: bool,
    pub patient_id: String,
    pub scan_id: String,
}

impl CtVolume {
    pub fn new(shape: [usize; 3], voxels: Vec<f32>, spacing: VoxelSpacing, normalized: bool) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidShape(shape.to_vec()));
        }
        let expected = shape.iter().product::<usize>();
        if voxels.len() != expected {
            return Err(Error::PayloadLengthMismatch {
                expected,
                found: voxels.len(),
            });
        }
        spacing.validate()?;
        Ok(Self {
            shape,
            voxels,
            spacing,
            normalized,
            patient_id: String::new(),
            scan_id: String::new(),
        })
    }

    pub fn filled(shape: [usize; 3], value: f32, spacing: VoxelSpacing, normalized: bool) -> Result<Self> {
        Self::new(shape, vec![value; shape.iter().product()], spacing, normalized)
    }

    pub fn with_ids(mut self, patient_id: impl Into<String>, scan_id: impl Into<String>) -> Self {
        self.patient_id = patient_id.into();
        self.scan_id = scan_id.into();
        self
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [f32] {
        &mut self.voxels
    }

    pub fn into_voxels(self) -> Vec<f32> {
        self.voxels
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.shape[0] * (y + self.shape[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[self.index(x, y, z)]
    }

    /// Voxel at signed coordinates, or `None` outside the grid.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64, z: i64) -> Option<f32> {
        let [h, w, d] = self.shape;
        if x < 0 || y < 0 || z < 0 || x >= h as i64 || y >= w as i64 || z >= d as i64 {
            None
        } else {
            Some(self.get(x as usize, y as usize, z as usize))
        }
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.voxels
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Element type of a raw volume payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoxelDType {
    I16,
    F32,
}

/// JSON sidecar describing a raw payload file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeSidecar {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub dtype: VoxelDType,
    pub normalized: bool,
    #[serde(default)]
    pub patient_id: String,
    #[serde(default)]
    pub scan_id: String,
}

/// Payload and sidecar paths for a volume. Either file may be given; the other
/// is found by swapping the extension (`.raw` payload, `.json` sidecar).
pub fn volume_paths(path: &Path) -> (PathBuf, PathBuf) {
    if path.extension().is_some_and(|e| e == "json") {
        (path.with_extension("raw"), path.to_path_buf())
    } else {
        (path.to_path_buf(), path.with_extension("json"))
    }
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<CtVolume> {
    let (payload_path, sidecar_path) = volume_paths(path.as_ref());
    if !sidecar_path.exists() {
        return Err(Error::MissingSidecar(sidecar_path));
    }
    let text = fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
    let meta: VolumeSidecar =
        serde_json::from_str(&text).map_err(|e| Error::json(sidecar_path.display().to_string(), e))?;
    let spacing = VoxelSpacing {
        dx: meta.spacing[0],
        dy: meta.spacing[1],
        dz: meta.spacing[2],
    };
    spacing.validate()?;
    let bytes = fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;
    let width = match meta.dtype {
        VoxelDType::I16 => 2,
        VoxelDType::F32 => 4,
    };
    let expected = meta.shape.iter().product::<usize>();
    if bytes.len() % width != 0 || bytes.len() / width != expected {
        return Err(Error::PayloadLengthMismatch {
            expected,
            found: bytes.len() / width,
        });
    }
    let voxels: Vec<f32> = match meta.dtype {
        VoxelDType::I16 => bytes
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32)
            .collect(),
        VoxelDType::F32 => bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect(),
    };
    Ok(CtVolume::new(meta.shape, voxels, spacing, meta.normalized)?.with_ids(meta.patient_id, meta.scan_id))
}

/// Writes payload + sidecar. Unnormalized volumes are stored as rounded,
/// saturated i16 HU; normalized volumes as f32.
pub fn save_volume(volume: &CtVolume, path: impl AsRef<Path>) -> Result<()> {
    let (payload_path, sidecar_path) = volume_paths(path.as_ref());
    let dtype = if volume.normalized {
        VoxelDType::F32
    } else {
        VoxelDType::I16
    };
    let mut bytes = Vec::with_capacity(volume.voxels.len() * 4);
    match dtype {
        VoxelDType::I16 => {
            for &v in &volume.voxels {
                let q = v.round().clamp(i16::MIN as f32, i16::MAX as f32) as i16;
                bytes.extend_from_slice(&q.to_le_bytes());
            }
        }
        VoxelDType::F32 => {
            for &v in &volume.voxels {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let meta = VolumeSidecar {
        shape: volume.shape,
        spacing: volume.spacing.as_array(),
        dtype,
        normalized: volume.normalized,
        patient_id: volume.patient_id.clone(),
        scan_id: volume.scan_id.clone(),
    };
    crate::io::write_atomic(&payload_path, &bytes)?;
    let text = serde_json::to_string(&meta).map_err(|e| Error::json("volume sidecar", e))?;
    crate::io::write_atomic(&sidecar_path, text.as_bytes())
}

/// Output grid size when resampling `shape` from `from` to `to` spacing.
pub fn resampled_shape(shape: [usize; 3], from: VoxelSpacing, to: VoxelSpacing) -> [usize; 3] {
    let (f, t) = (from.as_array(), to.as_array());
    let mut out = [0; 3];
    for a in 0..3 {
        out[a] = ((shape[a] as f64 * f[a] / t[a]).round() as usize).max(1);
    }
    out
}

/// Trilinear resampling to `target` spacing.
///
/// Output voxel centres are mapped to input index space as
/// `(i + 0.5) * target / source - 0.5` and clamped to the valid index range,
/// so every output value is a convex combination of input voxels.
pub fn resample_volume(v: &CtVolume, target: VoxelSpacing) -> Result<CtVolume> {
    target.validate()?;
    if target == v.spacing {
        return Ok(v.clone());
    }
    let out_shape = resampled_shape(v.shape, v.spacing, target);
    let (src, dst) = (v.spacing.as_array(), target.as_array());
    let scale = [dst[0] / src[0], dst[1] / src[1], dst[2] / src[2]];
    let voxels = resize_grid(&v.voxels, v.shape, out_shape, |axis, i| {
        (i as f64 + 0.5) * scale[axis] - 0.5
    });
    Ok(CtVolume {
        shape: out_shape,
        voxels,
        spacing: target,
        normalized: v.normalized,
        patient_id: v.patient_id.clone(),
        scan_id: v.scan_id.clone(),
    })
}

/// Applies the intensity window to every voxel and marks the volume normalized.
pub fn normalize_intensity(v: &CtVolume, p: &NormalizationParams) -> Result<CtVolume> {
    if v.normalized {
        return Err(Error::AlreadyNormalized);
    }
    p.validate()?;
    let mut out = v.clone();
    for x in out.voxels.iter_mut() {
        *x = p.apply(*x as f64) as f32;
    }
    out.normalized = true;
    Ok(out)
}

/// Resamples (if needed) then normalizes (if needed).
pub fn prepare_volume(v: &CtVolume, target: VoxelSpacing, p: &NormalizationParams) -> Result<CtVolume> {
    let r = resample_volume(v, target)?;
    if r.normalized {
        Ok(r)
    } else {
        normalize_intensity(&r, p)
    }
}

/// Resizes an X-fastest grid. `coord(axis, i)` gives the continuous source
/// index sampled for output index `i`; coordinates are clamped into the grid.
pub(crate) fn resize_grid(
    src: &[f32],
    src_shape: [usize; 3],
    dst_shape: [usize; 3],
    coord: impl Fn(usize, usize) -> f64,
) -> Vec<f32> {
    let taps = |axis: usize| -> Vec<(usize, usize, f64)> {
        let n = src_shape[axis];
        (0..dst_shape[axis])
            .map(|i| {
                let c = coord(axis, i).clamp(0.0, (n - 1) as f64);
                let lo = c.floor() as usize;
                let hi = (lo + 1).min(n - 1);
                (lo, hi, c - lo as f64)
            })
            .collect()
    };
    let (tx, ty, tz) = (taps(0), taps(1), taps(2));
    let [sh, sw, _] = src_shape;
    let at = |x: usize, y: usize, z: usize| src[x + sh * (y + sw * z)] as f64;
    let mut out = Vec::with_capacity(dst_shape.iter().product());
    for &(z0, z1, fz) in &tz {
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let c00 = lerp(at(x0, y0, z0), at(x1, y0, z0), fx);
                let c10 = lerp(at(x0, y1, z0), at(x1, y1, z0), fx);
                let c01 = lerp(at(x0, y0, z1), at(x1, y0, z1), fx);
                let c11 = lerp(at(x0, y1, z1), at(x1, y1, z1), fx);
                let c0 = lerp(c00, c10, fy);
                let c1 = lerp(c01, c11, fy);
                out.push(lerp(c0, c1, fz) as f32);
            }
        }
    }
    out
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a * (1.0 - t) + b * t
    }
}
