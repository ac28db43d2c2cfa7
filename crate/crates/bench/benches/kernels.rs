use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nodulenet_core::cropping::extract_patch;
use nodulenet_core::evaluation::{roc_auc, tta_predict};
use nodulenet_core::model::layers::{conv3d_backward, conv3d_forward, ConvGeom};
use nodulenet_core::model::{Model, ModelConfig, TensorBatch};
use nodulenet_core::training::compute_loss;
use nodulenet_core::{BoundingBox, CtVolume, Patch, RngStream, Task, VoxelSpacing};

fn random(len: usize, rng: &mut RngStream) -> Vec<f32> {
    (0..len).map(|_| rng.unit() as f32).collect()
}

fn conv(c: &mut Criterion) {
    let mut rng = RngStream::new(1);
    let mut group = c.benchmark_group("conv3d");
    group.sample_size(10);
    for (cin, cout, stride, d) in [(2, 8, 1, 24), (8, 8, 1, 24), (8, 16, 2, 24), (32, 32, 1, 6)] {
        let g = ConvGeom::new(cin, cout, 3, stride);
        let x = TensorBatch::from_vec(4, cin, [d; 3], random(4 * cin * d * d * d, &mut rng)).unwrap();
        let w = random(g.weight_len(), &mut rng);
        let y = conv3d_forward(&x, &w, &g);
        let id = format!("{cin}x{cout}s{stride}@{d}");
        group.bench_function(BenchmarkId::new("forward", &id), |b| b.iter(|| conv3d_forward(black_box(&x), &w, &g)));
        group.bench_function(BenchmarkId::new("backward", &id), |b| {
            b.iter(|| conv3d_backward(black_box(&x), &w, &g, &y, true))
        });
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let mut rng = RngStream::new(2);
    let model: Model<f32> = Model::build(&ModelConfig::tiny(1), &mut rng).unwrap();
    let x = TensorBatch::from_vec(8, 2, [16; 3], random(8 * 2 * 16usize.pow(3), &mut rng)).unwrap();
    let targets: Vec<usize> = (0..8).map(|i| i % 2).collect();
    c.bench_function("tiny_step_8x16", |b| {
        b.iter(|| {
            let (logits, cache) = model.forward_train(&x).unwrap();
            let (_, grad) = compute_loss(&logits, &targets, Task::Binary).unwrap();
            model.backward(&cache, &grad).unwrap()
        })
    });
    let patch = Patch::from_data(16, x.data[..2 * 16usize.pow(3)].to_vec()).unwrap();
    c.bench_function("tta_tiny_16", |b| b.iter(|| tta_predict(&model, black_box(&patch)).unwrap()));
}

fn metrics(c: &mut Criterion) {
    let mut rng = RngStream::new(3);
    let scores: Vec<f64> = (0..10_000).map(|_| rng.unit()).collect();
    let labels: Vec<bool> = (0..10_000).map(|i| i % 3 == 0).collect();
    c.bench_function("roc_auc_10k", |b| b.iter(|| roc_auc(black_box(&scores), &labels).unwrap()));
}

fn cropping(c: &mut Criterion) {
    let mut rng = RngStream::new(4);
    let shape = [128, 128, 96];
    let v = CtVolume::new(shape, random(128 * 128 * 96, &mut rng), VoxelSpacing::CANONICAL, true).unwrap();
    let small = BoundingBox::new([40, 40, 30, 52, 55, 41]).unwrap();
    let large = BoundingBox::new([10, 10, 5, 100, 90, 80]).unwrap();
    c.bench_function("extract_patch_64", |b| b.iter(|| extract_patch(&v, black_box(&small), 64).unwrap()));
    c.bench_function("extract_patch_64_resize", |b| b.iter(|| extract_patch(&v, black_box(&large), 64).unwrap()));
}

criterion_group!(benches, conv, train_step, metrics, cropping);
criterion_main!(benches);
