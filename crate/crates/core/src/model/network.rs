use super::layers::{self, ConvGeom, Mode, NormKind, NormSaved};
use super::tensor::{Matrix, Real, TensorBatch};
use super::{BlockKind, ModelConfig};
use crate::error::{Error, Result};
use crate::rng::RngStream;

const BN_MOMENTUM: f64 = 0.1;

/// A named parameter or buffer tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

#[derive(Clone, Copy, Debug)]
enum Init {
    /// Kaiming fan-in normal.
    Kaiming(usize),
    /// `U(-1/√fan_in, 1/√fan_in)`.
    Uniform(usize),
    Const(f64),
}

#[derive(Clone, Debug)]
struct ConvNorm {
    geom: ConvGeom,
    weight: usize,
    gamma: usize,
    beta: usize,
    running_mean: usize,
    running_var: usize,
    relu: bool,
}

#[derive(Clone, Debug)]
struct Block {
    layers: Vec<ConvNorm>,
    shortcut: Option<ConvNorm>,
}

#[derive(Clone, Debug)]
struct Layout {
    stem: ConvNorm,
    blocks: Vec<Block>,
    fc_weight: usize,
    fc_bias: usize,
    feature_dim: usize,
}

struct Builder {
    params: Vec<(String, Vec<usize>, Init)>,
    buffers: Vec<(String, Vec<usize>, f64)>,
}

impl Builder {
    fn param(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.params.push((name, shape, init));
        self.params.len() - 1
    }

    fn conv_norm(&mut self, prefix: &str, geom: ConvGeom, relu: bool) -> ConvNorm {
        let k = geom.k;
        let weight = self.param(
            format!("{prefix}.conv.weight"),
            vec![geom.cout, geom.cin, k, k, k],
            Init::Kaiming(geom.patch_len()),
        );
        let gamma = self.param(format!("{prefix}.norm.weight"), vec![geom.cout], Init::Const(1.0));
        let beta = self.param(format!("{prefix}.norm.bias"), vec![geom.cout], Init::Const(0.0));
        self.buffers.push((format!("{prefix}.norm.running_mean"), vec![geom.cout], 0.0));
        self.buffers.push((format!("{prefix}.norm.running_var"), vec![geom.cout], 1.0));
        let running_var = self.buffers.len() - 1;
        ConvNorm {
            geom,
            weight,
            gamma,
            beta,
            running_mean: running_var - 1,
            running_var,
            relu,
        }
    }
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Builder) {
    let mut b = Builder {
        params: Vec::new(),
        buffers: Vec::new(),
    };
    let stem = b.conv_norm("stem", ConvGeom::new(cfg.input_channels, cfg.base_width, 3, 1), true);
    let expansion = cfg.block_kind.expansion();
    let mut channels = cfg.base_width;
    let mut blocks = Vec::new();
    for (stage, &count) in cfg.blocks_per_stage.iter().enumerate() {
        let width = cfg.base_width << stage;
        let out = width * expansion;
        for bi in 0..count {
            let stride = if stage > 0 && bi == 0 { 2 } else { 1 };
            let prefix = format!("stages.{stage}.{bi}");
            let layers = match cfg.block_kind {
                BlockKind::Basic => vec![
                    b.conv_norm(&format!("{prefix}.a"), ConvGeom::new(channels, width, 3, stride), true),
                    b.conv_norm(&format!("{prefix}.b"), ConvGeom::new(width, width, 3, 1), false),
                ],
                BlockKind::Bottleneck => vec![
                    b.conv_norm(&format!("{prefix}.a"), ConvGeom::new(channels, width, 1, 1), true),
                    b.conv_norm(&format!("{prefix}.b"), ConvGeom::new(width, width, 3, stride), true),
                    b.conv_norm(&format!("{prefix}.c"), ConvGeom::new(width, out, 1, 1), false),
                ],
            };
            // type-B shortcut: project only where the shape changes
            let shortcut = (stride != 1 || channels != out)
                .then(|| b.conv_norm(&format!("{prefix}.shortcut"), ConvGeom::new(channels, out, 1, stride), false));
            blocks.push(Block { layers, shortcut });
            channels = out;
        }
    }
    let fc_weight = b.param("fc.weight".into(), vec![cfg.num_outputs, channels], Init::Uniform(channels));
    let fc_bias = b.param("fc.bias".into(), vec![cfg.num_outputs], Init::Const(0.0));
    (
        Layout {
            stem,
            blocks,
            fc_weight,
            fc_bias,
            feature_dim: channels,
        },
        b,
    )
}

/// Parameter names and shapes implied by a config, without allocating.
pub fn parameter_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (_, b) = build_layout(cfg);
    b.params.into_iter().map(|(n, s, _)| (n, s)).collect()
}

/// Network parameters, normalization running statistics and the layout they
/// plug into.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: Vec<NamedTensor<T>>,
    /// Batch-norm running statistics; not learnable.
    pub buffers: Vec<NamedTensor<T>>,
    layout: Layout,
}

/// Parameter gradients, index-aligned with [`Model::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().flatten().all(|v| *v == T::zero())
    }
}

struct ConvNormCache<T> {
    input: TensorBatch<T>,
    conv_out: TensorBatch<T>,
    saved: NormSaved,
    out: Option<TensorBatch<T>>,
}

struct BlockCache<T> {
    layers: Vec<ConvNormCache<T>>,
    shortcut: Option<ConvNormCache<T>>,
    out: TensorBatch<T>,
}

/// `(running_mean, running_var, batch mean, biased batch var, count)`.
type BatchStat = (usize, usize, Vec<f64>, Vec<f64>, usize);

/// Intermediates kept by a forward pass for the matching backward pass.
pub struct ForwardCache<T> {
    mode: Mode,
    stem: ConvNormCache<T>,
    pool: Option<(TensorBatch<T>, Vec<u32>)>,
    blocks: Vec<BlockCache<T>>,
    backbone_dims: [usize; 3],
    features: Matrix<T>,
    batch_stats: Vec<BatchStat>,
}

impl<T> ForwardCache<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

impl<T: Real> ForwardCache<T> {
    /// Active/inactive flag of every ReLU unit followed by the max-pool
    /// arg-maxes. Inputs sharing a pattern lie on the same smooth piece of
    /// the network function.
    pub fn activation_pattern(&self) -> Vec<u32> {
        let active = |t: &TensorBatch<T>| t.data.iter().map(|&v| u32::from(v > T::zero())).collect::<Vec<_>>();
        let mut out = Vec::new();
        if let Some(o) = &self.stem.out {
            out.extend(active(o));
        }
        if let Some((_, arg)) = &self.pool {
            out.extend_from_slice(arg);
        }
        for b in &self.blocks {
            for o in b.layers.iter().chain(&b.shortcut).filter_map(|l| l.out.as_ref()) {
                out.extend(active(o));
            }
            out.extend(active(&b.out));
        }
        out
    }
}

impl<T: Real> Model<T> {
    /// Allocates and initializes parameters: Kaiming fan-in normal for
    /// convolutions, unit scale / zero shift for normalization, uniform
    /// `±1/√fan_in` for the head weights and zero head bias.
    pub fn build(config: &ModelConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let (layout, b) = build_layout(config);
        let params = b
            .params
            .into_iter()
            .map(|(name, shape, init)| {
                let n = shape.iter().product();
                let data = match init {
                    Init::Kaiming(fan_in) => {
                        let std = (2.0 / fan_in as f64).sqrt();
                        (0..n).map(|_| T::of(rng.normal() * std)).collect()
                    }
                    Init::Uniform(fan_in) => {
                        let bound = 1.0 / (fan_in as f64).sqrt();
                        (0..n).map(|_| T::of(rng.uniform(-bound, bound))).collect()
                    }
                    Init::Const(c) => vec![T::of(c); n],
                };
                NamedTensor { name, shape, data }
            })
            .collect();
        let buffers = b
            .buffers
            .into_iter()
            .map(|(name, shape, v)| NamedTensor {
                data: vec![T::of(v); shape.iter().product()],
                name,
                shape,
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            params,
            buffers,
            layout,
        })
    }

    /// Rebuilds a model from stored tensors, checking names and shapes.
    pub fn from_tensors(config: &ModelConfig, params: Vec<NamedTensor<T>>, buffers: Vec<NamedTensor<T>>) -> Result<Self> {
        config.validate()?;
        let (layout, b) = build_layout(config);
        let check = |what: &str, expected: Vec<(String, Vec<usize>)>, got: &[NamedTensor<T>]| -> Result<()> {
            if expected.len() != got.len() {
                return Err(Error::ShapeMismatch(format!("expected {} {what}, got {}", expected.len(), got.len())));
            }
            for ((name, shape), t) in expected.iter().zip(got) {
                if *name != t.name || *shape != t.shape || t.data.len() != shape.iter().product::<usize>() {
                    return Err(Error::ShapeMismatch(format!("{what} {name} {shape:?} does not match {} {:?}", t.name, t.shape)));
                }
            }
            Ok(())
        };
        check("parameters", b.params.into_iter().map(|(n, s, _)| (n, s)).collect(), &params)?;
        check("buffers", b.buffers.into_iter().map(|(n, s, _)| (n, s)).collect(), &buffers)?;
        Ok(Self {
            config: config.clone(),
            params,
            buffers,
            layout,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&NamedTensor<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut NamedTensor<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn buffer_mut(&mut self, name: &str) -> Option<&mut NamedTensor<T>> {
        self.buffers.iter_mut().find(|p| p.name == name)
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        let conv = |ts: &[NamedTensor<T>]| {
            ts.iter()
                .map(|t| NamedTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::of(v.f64())).collect(),
                })
                .collect()
        };
        Model {
            config: self.config.clone(),
            params: conv(&self.params),
            buffers: conv(&self.buffers),
            layout: self.layout.clone(),
        }
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients {
            tensors: self.params.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
        }
    }

    fn check_input(&self, x: &TensorBatch<T>) -> Result<()> {
        x.validate()?;
        if x.c != self.config.input_channels {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} input channels, got {}",
                self.config.input_channels, x.c
            )));
        }
        Ok(())
    }

    /// Evaluation-mode logits `[N, num_outputs]`; a pure function of the
    /// parameters and the input.
    pub fn forward(&self, x: &TensorBatch<T>) -> Result<Matrix<T>> {
        self.check_input(x)?;
        Ok(self.run(x.clone(), Mode::Eval, false).0)
    }

    /// Forward pass keeping intermediates for [`Model::backward`].
    pub fn forward_cached(&self, x: &TensorBatch<T>, mode: Mode) -> Result<(Matrix<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let (logits, cache) = self.run(x.clone(), mode, true);
        Ok((logits, cache.expect("cache requested")))
    }

    /// Training-mode forward (batch statistics) with cache.
    pub fn forward_train(&self, x: &TensorBatch<T>) -> Result<(Matrix<T>, ForwardCache<T>)> {
        self.forward_cached(x, Mode::Train)
    }

    /// Recomputes the forward pass in `mode`, then back-propagates `loss_grad`.
    pub fn backward_from_input(&self, x: &TensorBatch<T>, loss_grad: &Matrix<T>, mode: Mode) -> Result<Gradients<T>> {
        let (_, cache) = self.forward_cached(x, mode)?;
        self.backward(&cache, loss_grad)
    }

    /// Folds the batch statistics recorded in a training-mode cache into the
    /// running statistics (momentum 0.1, unbiased variance).
    pub fn apply_batch_stats(&mut self, cache: &ForwardCache<T>) {
        let m = BN_MOMENTUM;
        for (rm, rv, mean, var, count) in &cache.batch_stats {
            let unbias = if *count > 1 {
                *count as f64 / (*count as f64 - 1.0)
            } else {
                1.0
            };
            for (r, &v) in self.buffers[*rm].data.iter_mut().zip(mean) {
                *r = T::of((1.0 - m) * r.f64() + m * v);
            }
            for (r, &v) in self.buffers[*rv].data.iter_mut().zip(var) {
                *r = T::of((1.0 - m) * r.f64() + m * v * unbias);
            }
        }
    }

    fn run(&self, x: TensorBatch<T>, mode: Mode, keep: bool) -> (Matrix<T>, Option<ForwardCache<T>>) {
        let mut batch_stats = Vec::new();
        let (mut h, stem) = self.conv_norm_forward(&self.layout.stem, x, mode, keep, &mut batch_stats);
        let pool = if self.config.stem_pool {
            let (y, arg) = layers::max_pool_forward(&h);
            let input = std::mem::replace(&mut h, y);
            keep.then_some((input, arg))
        } else {
            None
        };
        let mut blocks = Vec::new();
        for block in &self.layout.blocks {
            let shortcut_in = block.shortcut.as_ref().map(|_| h.clone());
            let identity = if block.shortcut.is_none() { Some(h.clone()) } else { None };
            let mut caches = Vec::new();
            let mut y = h;
            for l in &block.layers {
                let (out, c) = self.conv_norm_forward(l, y, mode, keep, &mut batch_stats);
                y = out;
                caches.extend(c);
            }
            let (skip, sc_cache) = match (&block.shortcut, shortcut_in) {
                (Some(sc), Some(input)) => {
                    let (out, c) = self.conv_norm_forward(sc, input, mode, keep, &mut batch_stats);
                    (out, c)
                }
                _ => (identity.expect("identity shortcut"), None),
            };
            for (a, b) in y.data.iter_mut().zip(&skip.data) {
                *a = *a + *b;
            }
            layers::relu_inplace(&mut y);
            if keep {
                blocks.push(BlockCache {
                    layers: caches,
                    shortcut: sc_cache,
                    out: y.clone(),
                });
            }
            h = y;
        }
        let backbone_dims = h.dims;
        let features = layers::global_avg_pool_forward(&h);
        let logits = layers::linear_forward(
            &features,
            &self.params[self.layout.fc_weight].data,
            &self.params[self.layout.fc_bias].data,
            self.config.num_outputs,
        );
        let cache = keep.then(|| ForwardCache {
            mode,
            stem: stem.expect("kept"),
            pool,
            blocks,
            backbone_dims,
            features,
            batch_stats,
        });
        (logits, cache)
    }

    fn conv_norm_forward(
        &self,
        spec: &ConvNorm,
        x: TensorBatch<T>,
        mode: Mode,
        keep: bool,
        stats: &mut Vec<BatchStat>,
    ) -> (TensorBatch<T>, Option<ConvNormCache<T>>) {
        let z = layers::conv3d_forward(&x, &self.params[spec.weight].data, &spec.geom);
        let kind = self.config.norm;
        let (mut y, saved) = layers::norm_forward(
            kind,
            mode,
            &z,
            &self.params[spec.gamma].data,
            &self.params[spec.beta].data,
            &self.buffers[spec.running_mean].data,
            &self.buffers[spec.running_var].data,
        );
        if kind == NormKind::Batch && mode == Mode::Train {
            stats.push((
                spec.running_mean,
                spec.running_var,
                saved.mean.clone(),
                saved.batch_var.clone(),
                z.n * z.spatial(),
            ));
        }
        if spec.relu {
            layers::relu_inplace(&mut y);
        }
        let cache = keep.then(|| ConvNormCache {
            input: x,
            conv_out: z,
            saved,
            out: spec.relu.then(|| y.clone()),
        });
        (y, cache)
    }

    fn conv_norm_backward(
        &self,
        spec: &ConvNorm,
        cache: &ConvNormCache<T>,
        mut dy: TensorBatch<T>,
        grads: &mut Gradients<T>,
        need_dx: bool,
    ) -> Option<TensorBatch<T>> {
        if let Some(out) = &cache.out {
            layers::relu_backward(out, &mut dy);
        }
        let (dz, dgamma, dbeta) =
            layers::norm_backward(self.config.norm, &cache.conv_out, &cache.saved, &self.params[spec.gamma].data, &dy);
        add_into(&mut grads.tensors[spec.gamma], &dgamma);
        add_into(&mut grads.tensors[spec.beta], &dbeta);
        let (dx, dw) = layers::conv3d_backward(&cache.input, &self.params[spec.weight].data, &spec.geom, &dz, need_dx);
        add_into(&mut grads.tensors[spec.weight], &dw);
        dx
    }

    /// Exact reverse-mode gradients of the loss with respect to every
    /// parameter, given `loss_grad = ∂loss/∂logits`.
    pub fn backward(&self, cache: &ForwardCache<T>, loss_grad: &Matrix<T>) -> Result<Gradients<T>> {
        if loss_grad.rows != cache.features.rows || loss_grad.cols != self.config.num_outputs {
            return Err(Error::ShapeMismatch(format!(
                "loss gradient {}x{} does not match logits {}x{}",
                loss_grad.rows, loss_grad.cols, cache.features.rows, self.config.num_outputs
            )));
        }
        let mut grads = self.zero_gradients();
        let (dfeat, dw, db) = layers::linear_backward(&cache.features, &self.params[self.layout.fc_weight].data, loss_grad);
        add_into(&mut grads.tensors[self.layout.fc_weight], &dw);
        add_into(&mut grads.tensors[self.layout.fc_bias], &db);
        let mut dh = layers::global_avg_pool_backward(cache.backbone_dims, &dfeat);
        for (block, bc) in self.layout.blocks.iter().zip(&cache.blocks).rev() {
            layers::relu_backward(&bc.out, &mut dh);
            let dskip = match (&block.shortcut, &bc.shortcut) {
                (Some(sc), Some(c)) => self.conv_norm_backward(sc, c, dh.clone(), &mut grads, true).expect("dx"),
                _ => dh.clone(),
            };
            let mut d = dh;
            for (l, c) in block.layers.iter().zip(&bc.layers).rev() {
                d = self.conv_norm_backward(l, c, d, &mut grads, true).expect("dx");
            }
            for (a, b) in d.data.iter_mut().zip(&dskip.data) {
                *a = *a + *b;
            }
            dh = d;
        }
        if let Some((input, arg)) = &cache.pool {
            dh = layers::max_pool_backward(input, arg, &dh);
        }
        self.conv_norm_backward(&self.layout.stem, &cache.stem, dh, &mut grads, false);
        Ok(grads)
    }

    /// Width of the pooled feature vector feeding the head.
    pub fn feature_dim(&self) -> usize {
        self.layout.feature_dim
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a = *a + b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(n: usize, s: usize, seed: u64) -> TensorBatch<f32> {
        let mut r = RngStream::new(seed);
        let len = n * 2 * s * s * s;
        TensorBatch::from_vec(n, 2, [s; 3], (0..len).map(|_| r.unit() as f32).collect()).unwrap()
    }

    #[test]
    fn same_seed_same_params() {
        let cfg = ModelConfig::tiny(1);
        let a = Model::<f32>::build(&cfg, &mut RngStream::new(5)).unwrap();
        let b = Model::<f32>::build(&cfg, &mut RngStream::new(5)).unwrap();
        assert_eq!(a.params, b.params);
        let c = Model::<f32>::build(&cfg, &mut RngStream::new(6)).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn tiny_output_shape() {
        let m = Model::<f32>::build(&ModelConfig::tiny(1), &mut RngStream::new(1)).unwrap();
        let logits = m.forward(&input(2, 64, 2)).unwrap();
        assert_eq!((logits.rows, logits.cols), (2, 1));
        assert!(logits.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_input_gives_head_bias() {
        let mut m = Model::<f32>::build(&ModelConfig::tiny(4), &mut RngStream::new(1)).unwrap();
        m.param_mut("fc.bias").unwrap().data = vec![0.1, -0.2, 0.3, 0.4];
        let x = TensorBatch::zeros(3, 2, [8, 8, 8]);
        let logits = m.forward(&x).unwrap();
        for r in 0..3 {
            assert_eq!(logits.row(r), &[0.1, -0.2, 0.3, 0.4]);
        }
    }

    #[test]
    fn duplicate_rows_identical_in_eval() {
        let m = Model::<f32>::build(&ModelConfig::tiny(4), &mut RngStream::new(3)).unwrap();
        let one = input(1, 16, 4);
        let mut data = one.data.clone();
        data.extend_from_slice(&input(1, 16, 9).data);
        data.extend_from_slice(&one.data);
        let x = TensorBatch::from_vec(3, 2, [16; 3], data).unwrap();
        let l = m.forward(&x).unwrap();
        assert_eq!(l.row(0), l.row(2));
        assert_eq!(m.forward(&x).unwrap(), l);
    }

    #[test]
    fn zero_loss_grad_gives_zero_gradients() {
        let m = Model::<f64>::build(&ModelConfig::tiny(1), &mut RngStream::new(3)).unwrap();
        let x = input(2, 8, 1).cast::<f64>();
        let g = m.backward_from_input(&x, &Matrix::zeros(2, 1), Mode::Train).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn wrong_channel_count_rejected() {
        let m = Model::<f32>::build(&ModelConfig::tiny(1), &mut RngStream::new(3)).unwrap();
        let x = TensorBatch::zeros(1, 3, [8, 8, 8]);
        assert!(matches!(m.forward(&x), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn shortcut_types() {
        let names: Vec<String> = parameter_shapes(&ModelConfig::tiny(1)).into_iter().map(|p| p.0).collect();
        // stage 0 keeps shape (identity); stages 1-3 downsample (projection)
        assert!(!names.iter().any(|n| n.starts_with("stages.0.0.shortcut")));
        for s in 1..4 {
            assert!(names.iter().any(|n| n.starts_with(&format!("stages.{s}.0.shortcut"))));
        }
        let names: Vec<String> = parameter_shapes(&ModelConfig::resnet50(4)).into_iter().map(|p| p.0).collect();
        // bottleneck stage 0 expands channels 64 -> 256, so it projects
        assert!(names.iter().any(|n| n.starts_with("stages.0.0.shortcut")));
        assert!(!names.iter().any(|n| n.starts_with("stages.0.1.shortcut")));
    }

    #[test]
    fn running_stats_update() {
        let mut m = Model::<f64>::build(&ModelConfig::tiny(1), &mut RngStream::new(3)).unwrap();
        let x = input(2, 8, 1).cast::<f64>();
        let (_, cache) = m.forward_train(&x).unwrap();
        let before = m.buffers.clone();
        m.apply_batch_stats(&cache);
        assert_ne!(before, m.buffers);
    }

    #[test]
    fn group_norm_and_stem_pool_run() {
        let cfg = ModelConfig {
            norm: NormKind::Group,
            stem_pool: true,
            ..ModelConfig::tiny(5)
        };
        let m = Model::<f32>::build(&cfg, &mut RngStream::new(3)).unwrap();
        let l = m.forward(&input(1, 16, 2)).unwrap();
        assert_eq!(l.cols, 5);
        assert_eq!(cfg.output_dims([16; 3]), [1, 1, 1]);
    }
}
