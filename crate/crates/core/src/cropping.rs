//! Builds the two-channel model input from a volume and a nodule box.
//!
//! Channel 0 is the crop `X`; channel 1 is the box mask `M`, equal to `X`
//! inside the box and zero elsewhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{resize_grid, CtVolume, VoxelSpacing};

/// Default cubic crop side in voxels.
pub const CROP_SIZE: usize = 64;

/// Padding added on each side of an axis whose box side exceeds the crop.
pub const OVERSIZE_PADDING: i64 = 8;

/// Axis-aligned voxel box, half-open: `min <= p < max` on every axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[i64; 6]", into = "[i64; 6]")]
pub struct BoundingBox {
    pub min: [i64; 3],
    pub max: [i64; 3],
}

impl BoundingBox {
    /// From `[x_min, y_min, z_min, x_max, y_max, z_max]`.
    pub fn new(c: [i64; 6]) -> Result<Self> {
        let b = Self {
            min: [c[0], c[1], c[2]],
            max: [c[3], c[4], c[5]],
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if (0..3).all(|a| self.max[a] > self.min[a]) {
            Ok(())
        } else {
            Err(Error::InvalidBox(self.as_array()))
        }
    }

    pub fn as_array(&self) -> [i64; 6] {
        [self.min[0], self.min[1], self.min[2], self.max[0], self.max[1], self.max[2]]
    }

    /// Side lengths `max - min`.
    pub fn lengths(&self) -> [i64; 3] {
        [0, 1, 2].map(|a| self.max[a] - self.min[a])
    }

    pub fn center(&self) -> [i64; 3] {
        [0, 1, 2].map(|a| (self.min[a] + self.max[a]).div_euclid(2))
    }

    pub fn translated(&self, delta: [i64; 3]) -> Self {
        Self {
            min: [0, 1, 2].map(|a| self.min[a] + delta[a]),
            max: [0, 1, 2].map(|a| self.max[a] + delta[a]),
        }
    }

    #[inline]
    pub fn contains(&self, p: [i64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] < self.max[a])
    }

    pub fn intersects_volume(&self, shape: [usize; 3]) -> bool {
        (0..3).all(|a| self.max[a] > 0 && self.min[a] < shape[a] as i64)
    }

    pub fn inside_volume(&self, shape: [usize; 3]) -> bool {
        (0..3).all(|a| self.min[a] >= 0 && self.max[a] <= shape[a] as i64)
    }

    /// Maps a box drawn on a grid with spacing `from` onto the grid with
    /// spacing `to`: physical edges are rescaled, then rounded outward and
    /// clipped to `shape`, keeping at least one voxel per axis.
    pub fn rescaled(&self, from: VoxelSpacing, to: VoxelSpacing, shape: [usize; 3]) -> Self {
        let (f, t) = (from.as_array(), to.as_array());
        let mut min = [0i64; 3];
        let mut max = [0i64; 3];
        for a in 0..3 {
            let r = f[a] / t[a];
            let extent = shape[a] as i64;
            let lo = ((self.min[a] as f64 * r + 1e-9).floor() as i64).clamp(0, extent - 1);
            let hi = ((self.max[a] as f64 * r - 1e-9).ceil() as i64).clamp(lo + 1, extent);
            min[a] = lo;
            max[a] = hi;
        }
        Self { min, max }
    }
}

impl TryFrom<[i64; 6]> for BoundingBox {
    type Error = Error;

    fn try_from(c: [i64; 6]) -> Result<Self> {
        Self::new(c)
    }
}

impl From<BoundingBox> for [i64; 6] {
    fn from(b: BoundingBox) -> Self {
        b.as_array()
    }
}

/// Two-channel cubic model input. Storage is channel-major, X fastest within
/// a channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    size: usize,
    data: Vec<f32>,
    pub scan_id: String,
    pub nodule_id: String,
}

impl Patch {
    pub const CHANNELS: usize = 2;

    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            data: vec![0.0; Self::CHANNELS * size * size * size],
            scan_id: String::new(),
            nodule_id: String::new(),
        }
    }

    pub fn from_data(size: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != Self::CHANNELS * size.pow(3) {
            return Err(Error::ShapeMismatch(format!(
                "patch of side {size} needs {} values, got {}",
                Self::CHANNELS * size.pow(3),
                data.len()
            )));
        }
        Ok(Self {
            size,
            data,
            scan_id: String::new(),
            nodule_id: String::new(),
        })
    }

    pub fn with_source(mut self, scan_id: impl Into<String>, nodule_id: impl Into<String>) -> Self {
        self.scan_id = scan_id.into();
        self.nodule_id = nodule_id.into();
        self
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// `[2, s, s, s]`.
    pub fn shape(&self) -> [usize; 4] {
        [Self::CHANNELS, self.size, self.size, self.size]
    }

    pub fn voxels_per_channel(&self) -> usize {
        self.size.pow(3)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.voxels_per_channel();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.voxels_per_channel();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Both channels at once: `(image, mask)`.
    pub fn channels_mut(&mut self) -> (&mut [f32], &mut [f32]) {
        let n = self.voxels_per_channel();
        self.data.split_at_mut(n)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.size * (y + self.size * z)
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize, z: usize) -> f32 {
        self.data[c * self.voxels_per_channel() + self.index(x, y, z)]
    }

    /// Whether channel 1 equals channel 0 wherever channel 1 is nonzero.
    pub fn mask_relation_holds(&self) -> bool {
        self.channel(0)
            .iter()
            .zip(self.channel(1))
            .all(|(&x, &m)| m == 0.0 || m == x)
    }

    /// Re-derives channel 1 as `channel0 * (channel1 != 0)`.
    pub fn rederive_mask(&mut self) {
        let (image, mask) = self.channels_mut();
        for (m, &x) in mask.iter_mut().zip(image.iter()) {
            *m = if *m != 0.0 { x } else { 0.0 };
        }
    }
}

/// Region read from the volume for a box.
///
/// With every side within `crop_size`, the window is the `crop_size` cube
/// centred on `floor((min + max) / 2)` and no resize is needed. Otherwise each
/// oversized axis spans the box plus [`OVERSIZE_PADDING`] per side, the other
/// axes stay centred cubes, and the window must be resized.
pub fn crop_window(bbox: &BoundingBox, crop_size: usize) -> (BoundingBox, bool) {
    let cs = crop_size as i64;
    let center = bbox.center();
    let lengths = bbox.lengths();
    let mut min = [0; 3];
    let mut max = [0; 3];
    let mut resize = false;
    for a in 0..3 {
        if lengths[a] > cs {
            min[a] = bbox.min[a] - OVERSIZE_PADDING;
            max[a] = bbox.max[a] + OVERSIZE_PADDING;
            resize = true;
        } else {
            min[a] = center[a] - cs / 2;
            max[a] = min[a] + cs;
        }
    }
    (BoundingBox { min, max }, resize)
}

/// Result of [`extract_patch`].
#[derive(Clone, Debug)]
pub struct Extraction {
    pub patch: Patch,
    pub window: BoundingBox,
    pub resize_needed: bool,
}

/// Reads the crop window (zero outside the volume), resizes oversized windows
/// to `crop_size³` trilinearly, and builds the mask channel.
///
/// On the resize path the box indicator is built at window resolution,
/// resized with the same transform, re-binarized at 0.5 and multiplied by
/// the resized image.
pub fn extract_patch(v: &CtVolume, bbox: &BoundingBox, crop_size: usize) -> Result<Extraction> {
    if !v.normalized {
        return Err(Error::NotNormalized);
    }
    bbox.validate()?;
    if !bbox.intersects_volume(v.shape()) {
        return Err(Error::BoxOutsideVolume {
            bbox: bbox.as_array(),
            shape: v.shape(),
        });
    }
    if crop_size == 0 {
        return Err(Error::InvalidConfig("crop size must be positive".into()));
    }
    let (window, resize_needed) = crop_window(bbox, crop_size);
    let wdims = window.lengths().map(|l| l as usize);
    let wn: usize = wdims.iter().product();
    let mut image = vec![0.0f32; wn];
    let mut indicator = vec![0.0f32; wn];
    gather_window(v, &window, bbox, &mut image, &mut indicator);

    let n = crop_size.pow(3);
    let mut data = Vec::with_capacity(2 * n);
    if resize_needed {
        let cs = crop_size as f64;
        let map = |axis: usize, i: usize| (i as f64 + 0.5) * (wdims[axis] as f64 / cs) - 0.5;
        let dst = [crop_size; 3];
        let image = resize_grid(&image, wdims, dst, map);
        let indicator = resize_grid(&indicator, wdims, dst, map);
        data.extend_from_slice(&image);
        data.extend(image.iter().zip(&indicator).map(|(&x, &m)| if m >= 0.5 { x } else { 0.0 }));
    } else {
        data.extend_from_slice(&image);
        data.extend(image.iter().zip(&indicator).map(|(&x, &m)| x * m));
    }
    let patch = Patch::from_data(crop_size, data)?.with_source(v.scan_id.clone(), String::new());
    Ok(Extraction {
        patch,
        window,
        resize_needed,
    })
}

fn gather_window(v: &CtVolume, window: &BoundingBox, bbox: &BoundingBox, image: &mut [f32], indicator: &mut [f32]) {
    let [h, w, d] = v.shape().map(|s| s as i64);
    let wd = window.lengths();
    for (k, z) in (window.min[2]..window.max[2]).enumerate() {
        for (j, y) in (window.min[1]..window.max[1]).enumerate() {
            let row = (j as i64 + wd[1] * k as i64) * wd[0];
            let in_yz = y >= 0 && y < w && z >= 0 && z < d;
            let box_yz = y >= bbox.min[1] && y < bbox.max[1] && z >= bbox.min[2] && z < bbox.max[2];
            if box_yz {
                let lo = bbox.min[0].max(window.min[0]) - window.min[0];
                let hi = bbox.max[0].min(window.max[0]) - window.min[0];
                for i in lo..hi {
                    indicator[(row + i) as usize] = 1.0;
                }
            }
            if !in_yz {
                continue;
            }
            let x_lo = window.min[0].max(0);
            let x_hi = window.max[0].min(h);
            if x_lo >= x_hi {
                continue;
            }
            let src = v.index(x_lo as usize, y as usize, z as usize);
            let dst = (row + x_lo - window.min[0]) as usize;
            let len = (x_hi - x_lo) as usize;
            image[dst..dst + len].copy_from_slice(&v.voxels()[src..src + len]);
        }
    }
}
