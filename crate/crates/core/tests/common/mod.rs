//! Central-difference gradient checks shared by the integration tests.
#![allow(dead_code)]

use nodulenet_core::model::layers::{self, ConvGeom, Mode, NormKind};
use nodulenet_core::model::{Matrix, Model, ModelConfig, TensorBatch};
use nodulenet_core::training::compute_loss;
use nodulenet_core::{RngStream, Task};

pub const H: f64 = 1e-4;
/// Denominator floor: below this magnitude the comparison is absolute.
pub const FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

pub fn randn(n: usize, rng: &mut RngStream) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

/// Values bounded away from zero, so ReLU kinks sit further than `H` away.
fn away_from_zero(n: usize, rng: &mut RngStream) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.uniform(0.05, 1.0);
            if rng.bernoulli(0.5) { m } else { -m }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest relative error between `analytic` and the central difference of
/// `loss` with respect to each coordinate of `*target`.
fn check_coords(analytic: &[f64], target: &mut [f64], coords: &[usize], loss: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for &i in coords {
        let orig = target[i];
        target[i] = orig + H;
        let up = loss(target);
        target[i] = orig - H;
        let down = loss(target);
        target[i] = orig;
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * H)));
    }
    worst
}

fn all(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn sample(n: usize, k: usize, rng: &mut RngStream) -> Vec<usize> {
    if n <= k {
        return all(n);
    }
    (0..k).map(|_| rng.below(n)).collect()
}

fn batch(n: usize, c: usize, d: [usize; 3], data: &[f64]) -> TensorBatch<f64> {
    TensorBatch::from_vec(n, c, d, data.to_vec()).unwrap()
}

pub fn conv(cin: usize, cout: usize, k: usize, stride: usize, seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let (n, d) = (2, [5, 4, 6]);
    let g = ConvGeom::new(cin, cout, k, stride);
    let x = randn(n * cin * d.iter().product::<usize>(), &mut rng);
    let w = randn(g.weight_len(), &mut rng);
    let od = g.out_dims(d);
    let r = randn(n * cout * od.iter().product::<usize>(), &mut rng);
    let xb = batch(n, cin, d, &x);
    let (dx, dw) = layers::conv3d_backward(&xb, &w, &g, &batch(n, cout, od, &r), true);
    let dx = dx.unwrap().data;
    let f = |x: &[f64], w: &[f64]| dot(&layers::conv3d_forward(&batch(n, cin, d, x), w, &g).data, &r);
    let (mut xv, mut wv) = (x.clone(), w.clone());
    let ex = check_coords(&dx, &mut xv, &all(x.len()), &mut |xs| f(xs, &w));
    let ew = check_coords(&dw, &mut wv, &all(w.len()), &mut |ws| f(&x, ws));
    ex.max(ew)
}

pub fn norm(kind: NormKind, mode: Mode, seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let (n, c, d) = (3, 16, [3, 2, 4]);
    let len = n * c * d.iter().product::<usize>();
    let x: Vec<f64> = randn(len, &mut rng).iter().map(|v| 2.0 * v + 0.5).collect();
    let gamma: Vec<f64> = (0..c).map(|_| rng.uniform(0.5, 1.5)).collect();
    let beta = randn(c, &mut rng);
    let rm = randn(c, &mut rng);
    let rv: Vec<f64> = (0..c).map(|_| rng.uniform(0.5, 2.0)).collect();
    let r = randn(len, &mut rng);
    let fwd = |x: &[f64], g: &[f64], b: &[f64]| layers::norm_forward(kind, mode, &batch(n, c, d, x), g, b, &rm, &rv);
    let (_, saved) = fwd(&x, &gamma, &beta);
    let (dx, dg, db) = layers::norm_backward(kind, &batch(n, c, d, &x), &saved, &gamma, &batch(n, c, d, &r));
    let f = |x: &[f64], g: &[f64], b: &[f64]| dot(&fwd(x, g, b).0.data, &r);
    let (mut xv, mut gv, mut bv) = (x.clone(), gamma.clone(), beta.clone());
    let e1 = check_coords(&dx.data, &mut xv, &all(len), &mut |xs| f(xs, &gamma, &beta));
    let e2 = check_coords(&dg, &mut gv, &all(c), &mut |gs| f(&x, gs, &beta));
    let e3 = check_coords(&db, &mut bv, &all(c), &mut |bs| f(&x, &gamma, bs));
    e1.max(e2).max(e3)
}

pub fn relu(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let (n, c, d) = (2, 3, [4, 3, 2]);
    let len = n * c * 24;
    let x = away_from_zero(len, &mut rng);
    let r = randn(len, &mut rng);
    let fwd = |x: &[f64]| {
        let mut y = batch(n, c, d, x);
        layers::relu_inplace(&mut y);
        y
    };
    let mut dy = batch(n, c, d, &r);
    layers::relu_backward(&fwd(&x), &mut dy);
    let mut xv = x.clone();
    check_coords(&dy.data, &mut xv, &all(len), &mut |xs| dot(&fwd(xs).data, &r))
}

pub fn max_pool(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let (n, c, d) = (2, 2, [5, 4, 6]);
    let len = n * c * 120;
    // distinct values 0.01 apart: a step of H never changes the arg-max
    let mut x: Vec<f64> = (0..len).map(|i| i as f64 * 0.01).collect();
    rng.shuffle(&mut x);
    let xb = batch(n, c, d, &x);
    let (y, arg) = layers::max_pool_forward(&xb);
    let r = randn(y.data.len(), &mut rng);
    let dx = layers::max_pool_backward(&xb, &arg, &batch(n, c, y.dims, &r));
    let mut xv = x.clone();
    check_coords(&dx.data, &mut xv, &all(len), &mut |xs| dot(&layers::max_pool_forward(&batch(n, c, d, xs)).0.data, &r))
}

pub fn global_avg_pool(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let (n, c, d) = (2, 3, [3, 2, 2]);
    let x = randn(n * c * 12, &mut rng);
    let r = randn(n * c, &mut rng);
    let dx = layers::global_avg_pool_backward(d, &Matrix::from_vec(n, c, r.clone()).unwrap());
    let mut xv = x.clone();
    check_coords(&dx.data, &mut xv, &all(x.len()), &mut |xs| {
        dot(&layers::global_avg_pool_forward(&batch(n, c, d, xs)).data, &r)
    })
}

pub fn linear(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let (n, fin, fout) = (3, 5, 4);
    let x = randn(n * fin, &mut rng);
    let w = randn(fout * fin, &mut rng);
    let b = randn(fout, &mut rng);
    let r = randn(n * fout, &mut rng);
    let xm = |x: &[f64]| Matrix::from_vec(n, fin, x.to_vec()).unwrap();
    let (dx, dw, db) = layers::linear_backward(&xm(&x), &w, &Matrix::from_vec(n, fout, r.clone()).unwrap());
    let f = |x: &[f64], w: &[f64], b: &[f64]| dot(&layers::linear_forward(&xm(x), w, b, fout).data, &r);
    let (mut xv, mut wv, mut bv) = (x.clone(), w.clone(), b.clone());
    let e1 = check_coords(&dx.data, &mut xv, &all(x.len()), &mut |xs| f(xs, &w, &b));
    let e2 = check_coords(&dw, &mut wv, &all(w.len()), &mut |ws| f(&x, ws, &b));
    let e3 = check_coords(&db, &mut bv, &all(b.len()), &mut |bs| f(&x, &w, bs));
    e1.max(e2).max(e3)
}

pub fn loss(task: Task, seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let (n, k) = (4, task.num_outputs());
    let z: Vec<f64> = randn(n * k, &mut rng).iter().map(|v| 3.0 * v).collect();
    let targets: Vec<usize> = (0..n).map(|_| rng.below(task.num_classes())).collect();
    let zm = |z: &[f64]| Matrix::from_vec(n, k, z.to_vec()).unwrap();
    let (_, grad) = compute_loss(&zm(&z), &targets, task).unwrap();
    let mut zv = z.clone();
    check_coords(&grad.data, &mut zv, &all(z.len()), &mut |zs| compute_loss(&zm(zs), &targets, task).unwrap().0)
}

/// Result of the end-to-end check.
pub struct ModelCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates whose `±H` step moved a ReLU or max-pool across a kink,
    /// where a central difference does not estimate the derivative.
    pub kinked: usize,
}

/// End-to-end check on a tiny model at 8³: every parameter tensor, all of
/// its coordinates when small, otherwise a random sample of them.
pub fn model(config: &ModelConfig, task: Task, mode: Mode, seed: u64) -> ModelCheck {
    let mut rng = RngStream::new(seed);
    let base: Model<f64> = Model::build(config, &mut rng).unwrap();
    let n = 3;
    let x = TensorBatch::from_vec(n, config.input_channels, [8; 3], randn(n * config.input_channels * 512, &mut rng)).unwrap();
    let targets: Vec<usize> = (0..n).map(|i| i % task.num_classes()).collect();
    let eval = |m: &Model<f64>| {
        let (logits, cache) = m.forward_cached(&x, mode).unwrap();
        (compute_loss(&logits, &targets, task).unwrap().0, cache.activation_pattern())
    };
    let (logits, cache) = base.forward_cached(&x, mode).unwrap();
    let pattern = cache.activation_pattern();
    let (_, loss_grad) = compute_loss(&logits, &targets, task).unwrap();
    let grads = base.backward(&cache, &loss_grad).unwrap();
    let mut out = ModelCheck { max_rel_err: 0.0, checked: 0, kinked: 0 };
    for (t, analytic) in grads.tensors.iter().enumerate() {
        for i in sample(analytic.len(), 24, &mut rng) {
            let mut m = base.clone();
            let orig = m.params[t].data[i];
            m.params[t].data[i] = orig + H;
            let (up, p_up) = eval(&m);
            m.params[t].data[i] = orig - H;
            let (down, p_down) = eval(&m);
            if p_up != pattern || p_down != pattern {
                out.kinked += 1;
                continue;
            }
            out.checked += 1;
            out.max_rel_err = out.max_rel_err.max(rel_err(analytic[i], (up - down) / (2.0 * H)));
        }
    }
    out
}

/// Every layer and model case, labelled.
pub fn all_cases() -> Vec<(String, f64)> {
    let model_case = |name: &str, c: ModelCheck| {
        (format!("{name} ({} coords, {} across a kink)", c.checked, c.kinked), c.max_rel_err)
    };
    let mut tiny_gn = ModelConfig::tiny(4);
    tiny_gn.norm = NormKind::Group;
    tiny_gn.stem_pool = true;
    vec![
        ("conv 3x3x3 stride 1".into(), conv(2, 3, 3, 1, 1)),
        ("conv 3x3x3 stride 2".into(), conv(3, 2, 3, 2, 2)),
        ("conv 1x1x1 stride 2".into(), conv(3, 4, 1, 2, 3)),
        ("batch norm (train)".into(), norm(NormKind::Batch, Mode::Train, 4)),
        ("batch norm (eval)".into(), norm(NormKind::Batch, Mode::Eval, 5)),
        ("group norm".into(), norm(NormKind::Group, Mode::Train, 6)),
        ("relu".into(), relu(7)),
        ("max pool".into(), max_pool(8)),
        ("global average pool".into(), global_avg_pool(9)),
        ("linear".into(), linear(10)),
        ("bce loss".into(), loss(Task::Binary, 11)),
        ("softmax ce loss".into(), loss(Task::Multiclass5, 12)),
        model_case("tiny model, batch norm, train", model(&ModelConfig::tiny(1), Task::Binary, Mode::Train, 13)),
        model_case("tiny model, batch norm, eval", model(&ModelConfig::tiny(5), Task::Multiclass5, Mode::Eval, 14)),
        model_case("tiny model, group norm, stem pool", model(&tiny_gn, Task::Multiclass4, Mode::Train, 15)),
    ]
}
