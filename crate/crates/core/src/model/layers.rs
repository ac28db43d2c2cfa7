//! Forward and reverse-mode kernels for each layer type.
//!
//! Every backward function returns exact gradients of a scalar loss given the
//! upstream gradient of the layer output.

use rayon::prelude::*;

use super::tensor::{Matrix, Real, TensorBatch};

pub const NORM_EPS: f64 = 1e-5;

/// Geometry of a cubic-kernel 3D convolution with symmetric zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// "Same"-style padding `(k - 1) / 2`.
    pub fn new(cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        Self {
            cin,
            cout,
            k,
            stride,
            pad: (k - 1) / 2,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.patch_len()
    }

    /// Rows of the unfolded input: `cin · k³`.
    pub fn patch_len(&self) -> usize {
        self.cin * self.k * self.k * self.k
    }

    pub fn out_dims(&self, dims: [usize; 3]) -> [usize; 3] {
        dims.map(|n| (n + 2 * self.pad - self.k) / self.stride + 1)
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Columns unfolded per tile: enough to amortize GEMM overhead while the
/// tile stays cache resident.
const TILE_ELEMS: usize = 1 << 17;

/// Output z-planes per tile for a convolution with `kk` rows per column.
fn tile_planes(kk: usize, plane: usize, oz: usize) -> usize {
    (TILE_ELEMS / (kk * plane).max(1)).clamp(1, oz.max(1))
}

/// Valid output x range `[lo, hi)` for kernel offset `kx`:
/// `0 <= ox·s + kx - p < ix`.
#[inline]
fn x_range(ix: isize, ox: usize, kx: usize, s: isize, p: isize) -> (usize, usize) {
    let lo = ((p - kx as isize).max(0) + s - 1) / s;
    let hi = ((ix - 1 + p - kx as isize).div_euclid(s) + 1).clamp(0, ox as isize);
    (lo.min(hi) as usize, hi as usize)
}

/// Unfolds output planes `z0..z1` of one sample `[cin, in]` into
/// `[cin·k³, (z1 - z0)·oy·ox]` columns.
fn im2col<T: Real>(x: &[T], din: [usize; 3], g: &ConvGeom, dout: [usize; 3], (z0, z1): (usize, usize), col: &mut [T]) {
    let [ix, iy, iz] = din.map(|d| d as isize);
    let [ox, oy, _] = dout;
    let nc = (z1 - z0) * oy * ox;
    let sin = din.iter().product::<usize>();
    let (k, s, p) = (g.k, g.stride as isize, g.pad as isize);
    for ci in 0..g.cin {
        let xc = &x[ci * sin..(ci + 1) * sin];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + kz) * k + ky) * k + kx;
                    let dst = &mut col[row * nc..(row + 1) * nc];
                    let (lo, hi) = x_range(ix, ox, kx, s, p);
                    for z in z0..z1 {
                        let zz = z as isize * s + kz as isize - p;
                        for y in 0..oy {
                            let yy = y as isize * s + ky as isize - p;
                            let at = ((z - z0) * oy + y) * ox;
                            let drow = &mut dst[at..at + ox];
                            if zz < 0 || zz >= iz || yy < 0 || yy >= iy || lo >= hi {
                                drow.fill(T::zero());
                                continue;
                            }
                            drow[..lo].fill(T::zero());
                            drow[hi..].fill(T::zero());
                            let x0 = (zz * iy + yy) * ix + lo as isize * s + kx as isize - p;
                            if s == 1 {
                                let x0 = x0 as usize;
                                drow[lo..hi].copy_from_slice(&xc[x0..x0 + (hi - lo)]);
                            } else {
                                for (j, d) in drow[lo..hi].iter_mut().enumerate() {
                                    *d = xc[(x0 + j as isize * s) as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates the columns of planes `z0..z1` back
/// into `[cin, in]`.
fn col2im<T: Real>(col: &[T], din: [usize; 3], g: &ConvGeom, dout: [usize; 3], (z0, z1): (usize, usize), dx: &mut [T]) {
    let [ix, iy, iz] = din.map(|d| d as isize);
    let [ox, oy, _] = dout;
    let nc = (z1 - z0) * oy * ox;
    let sin = din.iter().product::<usize>();
    let (k, s, p) = (g.k, g.stride as isize, g.pad as isize);
    for ci in 0..g.cin {
        let dxc = &mut dx[ci * sin..(ci + 1) * sin];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + kz) * k + ky) * k + kx;
                    let src = &col[row * nc..(row + 1) * nc];
                    let (lo, hi) = x_range(ix, ox, kx, s, p);
                    if lo >= hi {
                        continue;
                    }
                    for z in z0..z1 {
                        let zz = z as isize * s + kz as isize - p;
                        if zz < 0 || zz >= iz {
                            continue;
                        }
                        for y in 0..oy {
                            let yy = y as isize * s + ky as isize - p;
                            if yy < 0 || yy >= iy {
                                continue;
                            }
                            let at = ((z - z0) * oy + y) * ox;
                            let srow = &src[at + lo..at + hi];
                            let x0 = (zz * iy + yy) * ix + lo as isize * s + kx as isize - p;
                            if s == 1 {
                                let x0 = x0 as usize;
                                for (d, &v) in dxc[x0..x0 + srow.len()].iter_mut().zip(srow) {
                                    *d = *d + v;
                                }
                            } else {
                                for (j, &v) in srow.iter().enumerate() {
                                    let idx = (x0 + j as isize * s) as usize;
                                    dxc[idx] = dxc[idx] + v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Output z-plane ranges covered by successive tiles.
fn tiles(g: &ConvGeom, dout: [usize; 3]) -> impl Iterator<Item = (usize, usize)> {
    let [ox, oy, oz] = dout;
    let zt = tile_planes(g.patch_len(), ox * oy, oz);
    (0..oz).step_by(zt).map(move |z0| (z0, (z0 + zt).min(oz)))
}

/// `y = conv(x, w)`; `w` is `[cout, cin, kz, ky, kx]` with kx fastest.
pub fn conv3d_forward<T: Real>(x: &TensorBatch<T>, w: &[T], g: &ConvGeom) -> TensorBatch<T> {
    assert_eq!(x.c, g.cin, "conv input channels");
    assert_eq!(w.len(), g.weight_len(), "conv weight size");
    let dout = g.out_dims(x.dims);
    let so: usize = dout.iter().product();
    let plane = dout[0] * dout[1];
    let kk = g.patch_len();
    let mut y = TensorBatch::zeros(x.n, g.cout, dout);
    let sin = x.sample_len();
    let pointwise = g.is_pointwise();
    let zt = tile_planes(kk, plane, dout[2]);
    y.data
        .par_chunks_mut(g.cout * so)
        .zip(x.data.par_chunks(sin))
        .for_each_init(
            || if pointwise { Vec::new() } else { vec![T::zero(); kk * zt * plane] },
            |col, (ys, xs)| {
                if pointwise {
                    T::gemm(g.cout, kk, so, w, (kk as isize, 1), xs, (so as isize, 1), T::zero(), ys, (so as isize, 1));
                    return;
                }
                for (z0, z1) in tiles(g, dout) {
                    let nc = (z1 - z0) * plane;
                    im2col(xs, x.dims, g, dout, (z0, z1), col);
                    T::gemm(g.cout, kk, nc, w, (kk as isize, 1), col, (nc as isize, 1), T::zero(), &mut ys[z0 * plane..], (so as isize, 1));
                }
            },
        );
    y
}

/// Gradients of a convolution: `(dx, dw)`. `dx` is skipped when not needed.
pub fn conv3d_backward<T: Real>(
    x: &TensorBatch<T>,
    w: &[T],
    g: &ConvGeom,
    dy: &TensorBatch<T>,
    need_dx: bool,
) -> (Option<TensorBatch<T>>, Vec<T>) {
    let dout = g.out_dims(x.dims);
    assert_eq!(dy.dims, dout, "conv grad dims");
    assert_eq!(dy.c, g.cout);
    let so: usize = dout.iter().product();
    let plane = dout[0] * dout[1];
    let kk = g.patch_len();
    let sin = x.sample_len();
    let pointwise = g.is_pointwise();
    let zt = tile_planes(kk, plane, dout[2]);
    let mut dx = need_dx.then(|| TensorBatch::zeros(x.n, g.cin, x.dims));

    let per_sample = |i: usize, col: &mut Vec<T>, dcol: &mut Vec<T>, dxs: Option<&mut [T]>| -> Vec<T> {
        let xs = &x.data[i * sin..(i + 1) * sin];
        let dys = &dy.data[i * g.cout * so..(i + 1) * g.cout * so];
        let mut dw = vec![T::zero(); g.weight_len()];
        let ld = so as isize;
        if pointwise {
            // dw = dy · xᵀ, dx = wᵀ · dy
            T::gemm(g.cout, so, kk, dys, (ld, 1), xs, (1, ld), T::zero(), &mut dw, (kk as isize, 1));
            if let Some(dxs) = dxs {
                T::gemm(kk, g.cout, so, w, (1, kk as isize), dys, (ld, 1), T::zero(), dxs, (ld, 1));
            }
            return dw;
        }
        let mut dxs = dxs;
        for (z0, z1) in tiles(g, dout) {
            let nc = (z1 - z0) * plane;
            let dyt = &dys[z0 * plane..];
            im2col(xs, x.dims, g, dout, (z0, z1), col);
            T::gemm(g.cout, nc, kk, dyt, (ld, 1), col, (1, nc as isize), T::one(), &mut dw, (kk as isize, 1));
            if let Some(dxs) = dxs.as_deref_mut() {
                T::gemm(kk, g.cout, nc, w, (1, kk as isize), dyt, (ld, 1), T::zero(), dcol, (nc as isize, 1));
                col2im(dcol, x.dims, g, dout, (z0, z1), dxs);
            }
        }
        dw
    };

    let scratch = || {
        if pointwise {
            (Vec::new(), Vec::new())
        } else {
            let len = kk * zt * plane;
            (vec![T::zero(); len], if need_dx { vec![T::zero(); len] } else { Vec::new() })
        }
    };
    let partials: Vec<Vec<T>> = match dx.as_mut() {
        Some(dx) => dx
            .data
            .par_chunks_mut(sin)
            .enumerate()
            .map_init(scratch, |(col, dcol), (i, dxs)| per_sample(i, col, dcol, Some(dxs)))
            .collect(),
        None => (0..x.n)
            .into_par_iter()
            .map_init(scratch, |(col, dcol), i| per_sample(i, col, dcol, None))
            .collect(),
    };
    let mut dw = vec![T::zero(); g.weight_len()];
    for p in &partials {
        for (a, &b) in dw.iter_mut().zip(p) {
            *a = *a + b;
        }
    }
    (dx, dw)
}

/// Normalization layer flavour.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    /// Batch statistics in training, running statistics in evaluation.
    Batch,
    /// Per-sample statistics over `min(8, C)` channel groups.
    Group,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Statistics saved by a normalization forward pass.
#[derive(Clone, Debug)]
pub struct NormSaved {
    /// Per channel (batch norm) or per `(sample, group)` (group norm).
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Biased batch variance per channel, batch norm in training only.
    pub batch_var: Vec<f64>,
    pub mode: Mode,
}

pub fn group_count(channels: usize) -> usize {
    let mut g = channels.min(8);
    while channels % g != 0 {
        g -= 1;
    }
    g
}

/// `Σ f(x)` in f64 with eight independent accumulators, so the reduction
/// pipelines instead of serializing on one running sum.
#[inline]
fn lane_sum<T: Real>(xs: &[T], f: impl Fn(f64) -> f64) -> f64 {
    let mut acc = [0.0f64; 8];
    let mut chunks = xs.chunks_exact(8);
    for c in &mut chunks {
        for l in 0..8 {
            acc[l] += f(c[l].f64());
        }
    }
    let tail: f64 = chunks.remainder().iter().map(|v| f(v.f64())).sum();
    acc.iter().sum::<f64>() + tail
}

/// `Σ x·y` in f64, pipelined like [`lane_sum`].
#[inline]
fn lane_dot<T: Real>(xs: &[T], ys: &[T]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (mut cx, mut cy) = (xs.chunks_exact(8), ys.chunks_exact(8));
    for (a, b) in (&mut cx).zip(&mut cy) {
        for l in 0..8 {
            acc[l] += a[l].f64() * b[l].f64();
        }
    }
    let tail: f64 = cx.remainder().iter().zip(cy.remainder()).map(|(a, b)| a.f64() * b.f64()).sum();
    acc.iter().sum::<f64>() + tail
}

/// `out = a·x + b` elementwise.
#[inline]
fn affine<T: Real>(out: &mut [T], xs: &[T], a: f64, b: f64) {
    let (a, b) = (T::of(a), T::of(b));
    for (o, &v) in out.iter_mut().zip(xs) {
        *o = v * a + b;
    }
}

/// Normalizes then applies the per-channel affine `gamma · x̂ + beta`.
pub fn norm_forward<T: Real>(
    kind: NormKind,
    mode: Mode,
    x: &TensorBatch<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
) -> (TensorBatch<T>, NormSaved) {
    let (c, s) = (x.c, x.spatial());
    let mut y = TensorBatch::zeros(x.n, c, x.dims);
    let saved = match kind {
        NormKind::Batch => {
            let (mean, inv_std, batch_var) = match mode {
                Mode::Train => {
                    let m = (x.n * s) as f64;
                    let mut mean = vec![0.0; c];
                    let mut var = vec![0.0; c];
                    for ch in 0..c {
                        let mu = (0..x.n).map(|i| lane_sum(x.channel(i, ch), |v| v)).sum::<f64>() / m;
                        let sq: f64 = (0..x.n).map(|i| lane_sum(x.channel(i, ch), |v| (v - mu) * (v - mu))).sum();
                        mean[ch] = mu;
                        var[ch] = sq / m;
                    }
                    let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
                    (mean, inv, var)
                }
                Mode::Eval => (
                    running_mean.iter().map(|v| v.f64()).collect(),
                    running_var.iter().map(|v| 1.0 / (v.f64() + NORM_EPS).sqrt()).collect(),
                    Vec::new(),
                ),
            };
            for (idx, chunk) in y.data.chunks_mut(s).enumerate() {
                let ch = idx % c;
                let a = gamma[ch].f64() * inv_std[ch];
                affine(chunk, &x.data[idx * s..(idx + 1) * s], a, beta[ch].f64() - a * mean[ch]);
            }
            NormSaved {
                mean,
                inv_std,
                batch_var,
                mode,
            }
        }
        NormKind::Group => {
            let groups = group_count(c);
            let per = c / groups;
            let m = (per * s) as f64;
            let mut mean = Vec::with_capacity(x.n * groups);
            let mut inv_std = Vec::with_capacity(x.n * groups);
            for (block_idx, block) in x.data.chunks(per * s).enumerate() {
                let mu = lane_sum(block, |v| v) / m;
                let var = lane_sum(block, |v| (v - mu) * (v - mu)) / m;
                let inv = 1.0 / (var + NORM_EPS).sqrt();
                let gi = block_idx % groups;
                for cj in 0..per {
                    let ch = gi * per + cj;
                    let start = block_idx * per * s + cj * s;
                    let a = gamma[ch].f64() * inv;
                    affine(&mut y.data[start..start + s], &x.data[start..start + s], a, beta[ch].f64() - a * mu);
                }
                mean.push(mu);
                inv_std.push(inv);
            }
            NormSaved {
                mean,
                inv_std,
                batch_var: Vec::new(),
                mode,
            }
        }
    };
    (y, saved)
}

/// `dx = k_dy·dy + k_x·x + k_0` elementwise.
#[inline]
fn linear2<T: Real>(out: &mut [T], dys: &[T], xs: &[T], k_dy: f64, k_x: f64, k_0: f64) {
    let (a, b, c) = (T::of(k_dy), T::of(k_x), T::of(k_0));
    for ((o, &d), &v) in out.iter_mut().zip(dys).zip(xs) {
        *o = d * a + v * b + c;
    }
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn norm_backward<T: Real>(
    kind: NormKind,
    x: &TensorBatch<T>,
    saved: &NormSaved,
    gamma: &[T],
    dy: &TensorBatch<T>,
) -> (TensorBatch<T>, Vec<T>, Vec<T>) {
    let (c, s) = (x.c, x.spatial());
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    let mut dx = TensorBatch::zeros(x.n, c, x.dims);
    // per (sample, channel): Σ dy and Σ dy·x
    let mut sum_dy = vec![0.0; x.n * c];
    let mut sum_dyx = vec![0.0; x.n * c];
    for idx in 0..x.n * c {
        let (xs, dys) = (&x.data[idx * s..(idx + 1) * s], &dy.data[idx * s..(idx + 1) * s]);
        sum_dy[idx] = lane_sum(dys, |v| v);
        sum_dyx[idx] = lane_dot(dys, xs);
    }
    match kind {
        NormKind::Batch => {
            let m = (x.n * s) as f64;
            for ch in 0..c {
                let (mu, inv) = (saved.mean[ch], saved.inv_std[ch]);
                let sdy: f64 = (0..x.n).map(|i| sum_dy[i * c + ch]).sum();
                let sdyx: f64 = (0..x.n).map(|i| sum_dyx[i * c + ch]).sum();
                dbeta[ch] = sdy;
                // Σ dy·x̂ = inv·(Σ dy·x − μ Σ dy)
                dgamma[ch] = inv * (sdyx - mu * sdy);
            }
            for (idx, chunk) in dx.data.chunks_mut(s).enumerate() {
                let ch = idx % c;
                let (mu, inv, g) = (saved.mean[ch], saved.inv_std[ch], gamma[ch].f64());
                let (xs, dys) = (&x.data[idx * s..(idx + 1) * s], &dy.data[idx * s..(idx + 1) * s]);
                match saved.mode {
                    Mode::Eval => linear2(chunk, dys, xs, g * inv, 0.0, 0.0),
                    Mode::Train => {
                        // g·inv·(dy − a − x̂·b) with x̂ = (x − μ)·inv
                        let (a, b) = (dbeta[ch] / m, dgamma[ch] / m);
                        let k = g * inv;
                        linear2(chunk, dys, xs, k, -k * b * inv, -k * a + k * b * inv * mu);
                    }
                }
            }
        }
        NormKind::Group => {
            let groups = group_count(c);
            let per = c / groups;
            let m = (per * s) as f64;
            for i in 0..x.n {
                for gi in 0..groups {
                    let (mu, inv) = (saved.mean[i * groups + gi], saved.inv_std[i * groups + gi]);
                    // sums of dx̂ = g·dy and dx̂·x̂ over the group
                    let (mut sa, mut sb) = (0.0, 0.0);
                    for cj in 0..per {
                        let ch = gi * per + cj;
                        let g = gamma[ch].f64();
                        let idx = i * c + ch;
                        let dyxhat = inv * (sum_dyx[idx] - mu * sum_dy[idx]);
                        dgamma[ch] += dyxhat;
                        dbeta[ch] += sum_dy[idx];
                        sa += g * sum_dy[idx];
                        sb += g * dyxhat;
                    }
                    let (a, b) = (sa / m, sb / m);
                    for cj in 0..per {
                        let ch = gi * per + cj;
                        let g = gamma[ch].f64();
                        let idx = i * c + ch;
                        let (xs, dys) = (&x.data[idx * s..(idx + 1) * s], &dy.data[idx * s..(idx + 1) * s]);
                        // inv·(g·dy − a − x̂·b)
                        linear2(&mut dx.data[idx * s..(idx + 1) * s], dys, xs, inv * g, -inv * b * inv, -inv * a + inv * b * inv * mu);
                    }
                }
            }
        }
    }
    (dx, dgamma.into_iter().map(T::of).collect(), dbeta.into_iter().map(T::of).collect())
}

pub fn relu_inplace<T: Real>(x: &mut TensorBatch<T>) {
    for v in x.data.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `dy` by `y > 0`, where `y` is the ReLU output.
pub fn relu_backward<T: Real>(y: &TensorBatch<T>, dy: &mut TensorBatch<T>) {
    for (d, &v) in dy.data.iter_mut().zip(&y.data) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
}

/// 3×3×3 max pooling with stride 2 and padding 1. Also returns, per output,
/// the flat input index (within its sample-channel) of the maximum.
pub fn max_pool_forward<T: Real>(x: &TensorBatch<T>) -> (TensorBatch<T>, Vec<u32>) {
    let g = ConvGeom::new(1, 1, 3, 2);
    let dout = g.out_dims(x.dims);
    let so: usize = dout.iter().product();
    let [ix, iy, iz] = x.dims;
    let mut y = TensorBatch::zeros(x.n, x.c, dout);
    let mut arg = vec![0u32; x.n * x.c * so];
    for (plane, (ys, args)) in y.data.chunks_mut(so).zip(arg.chunks_mut(so)).enumerate() {
        let xs = &x.data[plane * x.spatial()..(plane + 1) * x.spatial()];
        for oz in 0..dout[2] {
            for oy in 0..dout[1] {
                for ox in 0..dout[0] {
                    let mut best = T::neg_infinity();
                    let mut best_i = 0usize;
                    for kz in 0..3 {
                        let z = (oz * 2 + kz) as isize - 1;
                        if z < 0 || z >= iz as isize {
                            continue;
                        }
                        for ky in 0..3 {
                            let yy = (oy * 2 + ky) as isize - 1;
                            if yy < 0 || yy >= iy as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let xx = (ox * 2 + kx) as isize - 1;
                                if xx < 0 || xx >= ix as isize {
                                    continue;
                                }
                                let i = xx as usize + ix * (yy as usize + iy * z as usize);
                                if xs[i] > best {
                                    best = xs[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    let o = ox + dout[0] * (oy + dout[1] * oz);
                    ys[o] = best;
                    args[o] = best_i as u32;
                }
            }
        }
    }
    (y, arg)
}

pub fn max_pool_backward<T: Real>(x: &TensorBatch<T>, arg: &[u32], dy: &TensorBatch<T>) -> TensorBatch<T> {
    let mut dx = TensorBatch::zeros(x.n, x.c, x.dims);
    let (si, so) = (x.spatial(), dy.spatial());
    for plane in 0..x.n * x.c {
        let d = &mut dx.data[plane * si..(plane + 1) * si];
        for (o, &a) in arg[plane * so..(plane + 1) * so].iter().enumerate() {
            d[a as usize] = d[a as usize] + dy.data[plane * so + o];
        }
    }
    dx
}

/// Mean over the spatial axes: `[N, C, ...] -> [N, C]`.
pub fn global_avg_pool_forward<T: Real>(x: &TensorBatch<T>) -> Matrix<T> {
    let s = x.spatial() as f64;
    let data = x
        .data
        .chunks(x.spatial())
        .map(|ch| T::of(ch.iter().map(|v| v.f64()).sum::<f64>() / s))
        .collect();
    Matrix {
        rows: x.n,
        cols: x.c,
        data,
    }
}

pub fn global_avg_pool_backward<T: Real>(dims: [usize; 3], dy: &Matrix<T>) -> TensorBatch<T> {
    let s: usize = dims.iter().product();
    let mut dx = TensorBatch::zeros(dy.rows, dy.cols, dims);
    for (chunk, &g) in dx.data.chunks_mut(s).zip(&dy.data) {
        chunk.fill(T::of(g.f64() / s as f64));
    }
    dx
}

/// `y = x · wᵀ + b` with `w` stored `[out, in]`.
pub fn linear_forward<T: Real>(x: &Matrix<T>, w: &[T], b: &[T], out: usize) -> Matrix<T> {
    let inp = x.cols;
    let mut y = Matrix::zeros(x.rows, out);
    for r in 0..x.rows {
        y.data[r * out..(r + 1) * out].copy_from_slice(b);
    }
    T::gemm(x.rows, inp, out, &x.data, (inp as isize, 1), w, (1, inp as isize), T::one(), &mut y.data, (out as isize, 1));
    y
}

/// Returns `(dx, dw, db)`.
pub fn linear_backward<T: Real>(x: &Matrix<T>, w: &[T], dy: &Matrix<T>) -> (Matrix<T>, Vec<T>, Vec<T>) {
    let (n, inp, out) = (x.rows, x.cols, dy.cols);
    let mut dx = Matrix::zeros(n, inp);
    T::gemm(n, out, inp, &dy.data, (out as isize, 1), w, (inp as isize, 1), T::zero(), &mut dx.data, (inp as isize, 1));
    let mut dw = vec![T::zero(); out * inp];
    T::gemm(out, n, inp, &dy.data, (1, out as isize), &x.data, (inp as isize, 1), T::zero(), &mut dw, (inp as isize, 1));
    let mut db = vec![T::zero(); out];
    for r in 0..n {
        for (d, &g) in db.iter_mut().zip(dy.row(r)) {
            *d = *d + g;
        }
    }
    (dx, dw, db)
}
