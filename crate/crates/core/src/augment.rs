//! Training-time augmentation: box jittering, mask-channel dropout, and
//! standard geometric and intensity transforms on patches.
//!
//! Every operation takes an explicit [`RngStream`] and is bit-deterministic
//! for a given stream state.

use serde::{Deserialize, Serialize};

use crate::cropping::{extract_patch, BoundingBox, Patch};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::volume::CtVolume;

/// Per-axis jitter range as fractions of the box side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JitterConfig {
    pub alpha_min: f64,
    pub alpha_max: f64,
}

impl Default for JitterConfig {
    fn default() -> Self {
        Self {
            alpha_min: -0.75,
            alpha_max: 0.75,
        }
    }
}

impl JitterConfig {
    pub const NONE: JitterConfig = JitterConfig {
        alpha_min: 0.0,
        alpha_max: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if self.alpha_max >= self.alpha_min && self.alpha_min.is_finite() && self.alpha_max.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "jitter alpha_max {} < alpha_min {}",
                self.alpha_max, self.alpha_min
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub jitter_enabled: bool,
    pub jitter: JitterConfig,
    pub mask_dropout_p: f64,
    /// Flip probability per spatial axis (X, Y, Z).
    pub flip_p: [f64; 3],
    pub rot90_xy: bool,
    pub rot90_p: f64,
    pub zoom_p: f64,
    pub zoom_range: (f64, f64),
    pub noise_p: f64,
    pub noise_sigma_max: f64,
    pub smooth_p: f64,
    pub smooth_sigma_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            jitter_enabled: true,
            jitter: JitterConfig::default(),
            mask_dropout_p: 0.5,
            flip_p: [0.5; 3],
            rot90_xy: true,
            rot90_p: 0.5,
            zoom_p: 0.2,
            zoom_range: (0.9, 1.1),
            noise_p: 0.2,
            noise_sigma_max: 0.05,
            smooth_p: 0.2,
            smooth_sigma_range: (0.5, 1.0),
        }
    }
}

impl AugmentConfig {
    /// Every transform disabled.
    pub fn none() -> Self {
        Self {
            jitter_enabled: false,
            jitter: JitterConfig::NONE,
            mask_dropout_p: 0.0,
            flip_p: [0.0; 3],
            rot90_xy: false,
            rot90_p: 0.0,
            zoom_p: 0.0,
            zoom_range: (1.0, 1.0),
            noise_p: 0.0,
            noise_sigma_max: 0.0,
            smooth_p: 0.0,
            smooth_sigma_range: (0.5, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.jitter.validate()?;
        let probs = [
            self.mask_dropout_p,
            self.flip_p[0],
            self.flip_p[1],
            self.flip_p[2],
            self.rot90_p,
            self.zoom_p,
            self.noise_p,
            self.smooth_p,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig("augmentation probabilities must lie in [0, 1]".into()));
        }
        if !(self.zoom_range.0 > 0.0 && self.zoom_range.0 <= self.zoom_range.1) {
            return Err(Error::InvalidConfig(format!("bad zoom range {:?}", self.zoom_range)));
        }
        if !(self.noise_sigma_max >= 0.0) {
            return Err(Error::InvalidConfig("noise_sigma_max must be non-negative".into()));
        }
        let (lo, hi) = self.smooth_sigma_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::InvalidConfig(format!("bad smoothing range {:?}", self.smooth_sigma_range)));
        }
        Ok(())
    }
}

/// Jittered box together with the raw (pre-rounding) offsets that produced it.
#[derive(Clone, Copy, Debug)]
pub struct JitterDraw {
    pub bbox: BoundingBox,
    pub deltas: [f64; 3],
}

/// Translates the box by `Δ_i ~ U(L_i·α_min, L_i·α_max)` per axis, rounded to
/// the nearest voxel (ties away from zero), then shifts it back inside
/// `[0, H] × [0, W] × [0, D]` without changing its size.
pub fn jitter_box(b: &BoundingBox, volume_shape: [usize; 3], cfg: &JitterConfig, rng: &mut RngStream) -> Result<BoundingBox> {
    jitter_box_traced(b, volume_shape, cfg, rng).map(|d| d.bbox)
}

pub fn jitter_box_traced(
    b: &BoundingBox,
    volume_shape: [usize; 3],
    cfg: &JitterConfig,
    rng: &mut RngStream,
) -> Result<JitterDraw> {
    b.validate()?;
    cfg.validate()?;
    let lengths = b.lengths();
    for a in 0..3 {
        if lengths[a] > volume_shape[a] as i64 {
            return Err(Error::BoxLargerThanVolume {
                axis: a,
                side: lengths[a],
                extent: volume_shape[a],
            });
        }
    }
    let mut deltas = [0.0; 3];
    let mut shift = [0i64; 3];
    for a in 0..3 {
        let l = lengths[a] as f64;
        deltas[a] = rng.uniform(l * cfg.alpha_min, l * cfg.alpha_max);
        shift[a] = deltas[a].round() as i64;
    }
    let mut out = b.translated(shift);
    for a in 0..3 {
        let extent = volume_shape[a] as i64;
        if out.min[a] < 0 {
            let d = -out.min[a];
            out.min[a] += d;
            out.max[a] += d;
        }
        if out.max[a] > extent {
            let d = out.max[a] - extent;
            out.min[a] -= d;
            out.max[a] -= d;
        }
    }
    Ok(JitterDraw { bbox: out, deltas })
}

/// With probability `prob`, zeroes the mask channel. Channel 0 is never
/// touched.
pub fn mask_dropout(mut p: Patch, prob: f64, rng: &mut RngStream) -> Patch {
    if rng.bernoulli(prob) {
        p.channel_mut(1).fill(0.0);
    }
    p
}

/// Reverses one spatial axis (0 = X, 1 = Y, 2 = Z) of both channels.
pub fn flip_patch(p: &mut Patch, axis: usize) {
    let s = p.size();
    let n = p.voxels_per_channel();
    for c in 0..Patch::CHANNELS {
        let ch = &mut p.data_mut()[c * n..(c + 1) * n];
        flip_grid(ch, [s, s, s], axis);
    }
}

pub(crate) fn flip_grid<T>(data: &mut [T], dims: [usize; 3], axis: usize) {
    let [sx, sy, sz] = dims;
    match axis {
        0 => {
            for row in data.chunks_exact_mut(sx) {
                row.reverse();
            }
        }
        1 => {
            for plane in data.chunks_exact_mut(sx * sy) {
                for y in 0..sy / 2 {
                    let (a, b) = plane.split_at_mut((sy - 1 - y) * sx);
                    a[y * sx..(y + 1) * sx].swap_with_slice(&mut b[..sx]);
                }
            }
        }
        2 => {
            let plane = sx * sy;
            for z in 0..sz / 2 {
                let (a, b) = data.split_at_mut((sz - 1 - z) * plane);
                a[z * plane..(z + 1) * plane].swap_with_slice(&mut b[..plane]);
            }
        }
        _ => panic!("axis {axis} out of range"),
    }
}

/// Rotates both channels by `k` quarter turns in the X-Y plane.
pub fn rot90_xy(p: &Patch, k: usize) -> Patch {
    let k = k % 4;
    if k == 0 {
        return p.clone();
    }
    let s = p.size();
    let mut out = p.clone();
    let n = p.voxels_per_channel();
    for c in 0..Patch::CHANNELS {
        let src = &p.data()[c * n..(c + 1) * n];
        let dst = &mut out.data_mut()[c * n..(c + 1) * n];
        for z in 0..s {
            for y in 0..s {
                for x in 0..s {
                    let (sx, sy) = match k {
                        1 => (y, s - 1 - x),
                        2 => (s - 1 - x, s - 1 - y),
                        _ => (s - 1 - y, x),
                    };
                    dst[x + s * (y + s * z)] = src[sx + s * (sy + s * z)];
                }
            }
        }
    }
    out
}

/// Scales the patch content about its centre by `factor` (>1 magnifies),
/// cropping or zero-padding back to the original side. The mask indicator is
/// zoomed with the image, re-binarized at 0.5 and multiplied by the image.
pub fn zoom_patch(p: &Patch, factor: f64) -> Patch {
    let s = p.size();
    let image = zoom_grid(p.channel(0), s, factor);
    let indicator: Vec<f32> = p.channel(1).iter().map(|&m| (m != 0.0) as u8 as f32).collect();
    let indicator = zoom_grid(&indicator, s, factor);
    let mut data = image.clone();
    data.extend(image.iter().zip(&indicator).map(|(&x, &m)| if m >= 0.5 { x } else { 0.0 }));
    Patch::from_data(s, data)
        .expect("zoom preserves size")
        .with_source(p.scan_id.clone(), p.nodule_id.clone())
}

fn zoom_grid(src: &[f32], s: usize, factor: f64) -> Vec<f32> {
    let c = (s as f64 - 1.0) / 2.0;
    let taps: Vec<Option<(usize, usize, f64)>> = (0..s)
        .map(|i| {
            let u = c + (i as f64 - c) / factor;
            if u < -0.5 || u > s as f64 - 0.5 {
                return None;
            }
            let u = u.clamp(0.0, (s - 1) as f64);
            let lo = u.floor() as usize;
            let hi = (lo + 1).min(s - 1);
            Some((lo, hi, u - lo as f64))
        })
        .collect();
    let at = |x: usize, y: usize, z: usize| src[x + s * (y + s * z)] as f64;
    let mut out = vec![0.0f32; s * s * s];
    for (k, tz) in taps.iter().enumerate() {
        let Some((z0, z1, fz)) = *tz else { continue };
        for (j, ty) in taps.iter().enumerate() {
            let Some((y0, y1, fy)) = *ty else { continue };
            for (i, tx) in taps.iter().enumerate() {
                let Some((x0, x1, fx)) = *tx else { continue };
                let c00 = at(x0, y0, z0) * (1.0 - fx) + at(x1, y0, z0) * fx;
                let c10 = at(x0, y1, z0) * (1.0 - fx) + at(x1, y1, z0) * fx;
                let c01 = at(x0, y0, z1) * (1.0 - fx) + at(x1, y0, z1) * fx;
                let c11 = at(x0, y1, z1) * (1.0 - fx) + at(x1, y1, z1) * fx;
                let c0 = c00 * (1.0 - fy) + c10 * fy;
                let c1 = c01 * (1.0 - fy) + c11 * fy;
                out[i + s * (j + s * k)] = (c0 * (1.0 - fz) + c1 * fz) as f32;
            }
        }
    }
    out
}

/// Random flips on each axis, then a random quarter-turn in X-Y, then a
/// random zoom, each gated by its own probability.
pub fn geometric_augs(mut p: Patch, cfg: &AugmentConfig, rng: &mut RngStream) -> Patch {
    for axis in 0..3 {
        if rng.bernoulli(cfg.flip_p[axis]) {
            flip_patch(&mut p, axis);
        }
    }
    if cfg.rot90_xy && rng.bernoulli(cfg.rot90_p) {
        let k = 1 + rng.below(3);
        p = rot90_xy(&p, k);
    }
    if rng.bernoulli(cfg.zoom_p) {
        let f = rng.uniform(cfg.zoom_range.0, cfg.zoom_range.1);
        p = zoom_patch(&p, f);
    }
    p
}

/// Adds `N(0, sigma²)` noise in place, without clamping.
pub fn add_gaussian_noise(data: &mut [f32], sigma: f64, rng: &mut RngStream) {
    if sigma <= 0.0 {
        return;
    }
    for x in data.iter_mut() {
        *x += (sigma * rng.normal()) as f32;
    }
}

/// Separable Gaussian smoothing of a cubic grid with edge replication.
pub fn gaussian_smooth(data: &mut [f32], s: usize, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let mut line = vec![0.0f64; s];
    let strides = [1, s, s * s];
    for &stride in &strides {
        // every line along `axis` starts at a base index with zero coordinate on that axis
        for base in 0..s * s * s {
            let coord = (base / stride) % s;
            if coord != 0 {
                continue;
            }
            for (i, l) in line.iter_mut().enumerate() {
                *l = data[base + i * stride] as f64;
            }
            for i in 0..s as i64 {
                let mut acc = 0.0;
                for (t, &w) in kernel.iter().enumerate() {
                    let j = (i + t as i64 - radius).clamp(0, s as i64 - 1) as usize;
                    acc += w * line[j];
                }
                data[base + i as usize * stride] = acc as f32;
            }
        }
    }
}

/// Gaussian noise and/or smoothing on channel 0, clamped to `[0, 1]`; the mask
/// channel is re-derived from the new image on its existing support.
pub fn intensity_augs(mut p: Patch, cfg: &AugmentConfig, rng: &mut RngStream) -> Patch {
    let s = p.size();
    let mut changed = false;
    if rng.bernoulli(cfg.noise_p) && cfg.noise_sigma_max > 0.0 {
        let sigma = rng.uniform(0.0, cfg.noise_sigma_max);
        add_gaussian_noise(p.channel_mut(0), sigma, rng);
        changed = true;
    }
    if rng.bernoulli(cfg.smooth_p) {
        let sigma = rng.uniform(cfg.smooth_sigma_range.0, cfg.smooth_sigma_range.1);
        gaussian_smooth(p.channel_mut(0), s, sigma);
        changed = true;
    }
    if changed {
        p.channel_mut(0).iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
        p.rederive_mask();
    }
    p
}

/// Full on-the-fly training sample: jitter the box, extract, drop the mask
/// channel, then geometric and intensity transforms.
pub fn augmented_patch(
    volume: &CtVolume,
    bbox: &BoundingBox,
    cfg: &AugmentConfig,
    crop_size: usize,
    rng: &mut RngStream,
) -> Result<Patch> {
    let b = if cfg.jitter_enabled {
        jitter_box(bbox, volume.shape(), &cfg.jitter, rng)?
    } else {
        *bbox
    };
    let p = extract_patch(volume, &b, crop_size)?.patch;
    let p = mask_dropout(p, cfg.mask_dropout_p, rng);
    let p = geometric_augs(p, cfg, rng);
    Ok(intensity_augs(p, cfg, rng))
}
