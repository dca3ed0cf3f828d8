//! SegResNet as a flat layer graph.
//!
//! Node 0 is the network input and layer `i` writes node `i + 1`. Every layer reads
//! one `input` node; `Add` and `Upsample` additionally reference a second node
//! (the skip source and the size template respectively).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{self, GroupNormCache};
use super::{ParamStore, Real, Tensor};
use crate::{Error, Result};

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    },
    GroupNorm {
        channels: usize,
        groups: usize,
    },
    Relu,
    Dropout {
        p: f64,
    },
    /// Bilinear ×2, cropped to the spatial size of node `like`.
    Upsample {
        like: NodeId,
    },
    Add {
        other: NodeId,
    },
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub op: Op,
    pub input: NodeId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegModelConfig {
    pub in_channels: usize,
    pub init_filters: usize,
    pub levels: usize,
    /// Residual blocks per encoder level; empty selects [`default_blocks_down`].
    pub blocks_down: Vec<usize>,
    pub groups: usize,
    pub dropout: f64,
    pub norm_eps: f64,
}

impl Default for SegModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            init_filters: 16,
            levels: 4,
            blocks_down: Vec::new(),
            groups: 8,
            dropout: 0.2,
            norm_eps: 1e-5,
        }
    }
}

impl SegModelConfig {
    /// The levels=2, init_filters=8 model used for desk-scale training.
    pub fn reduced() -> Self {
        Self {
            init_filters: 8,
            levels: 2,
            ..Self::default()
        }
    }

    pub fn blocks(&self) -> Vec<usize> {
        if self.blocks_down.is_empty() {
            default_blocks_down(self.levels)
        } else {
            self.blocks_down.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.in_channels == 0 || self.init_filters == 0 || self.levels == 0 {
            return bad("in_channels, init_filters and levels must be positive".into());
        }
        if self.groups == 0 || self.init_filters % self.groups != 0 {
            return bad(format!("init_filters {} not divisible by {} groups", self.init_filters, self.groups));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.norm_eps <= 0.0 {
            return bad("norm_eps must be positive".into());
        }
        let blocks = self.blocks();
        if blocks.len() != self.levels || blocks.iter().any(|&b| b == 0) {
            return bad(format!("blocks_down {blocks:?} must list {} positive counts", self.levels));
        }
        Ok(())
    }
}

/// Encoder depth schedule 1, 2, 2, 4 (extended with 4s beyond four levels).
pub fn default_blocks_down(levels: usize) -> Vec<usize> {
    (0..levels)
        .map(|l| match l {
            0 => 1,
            1 | 2 => 2,
            _ => 4,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Cache<F> {
    None,
    Norm(GroupNormCache<F>),
    Dropout(Vec<F>),
}

/// Activations and per-layer caches from a forward pass.
pub struct Trace<F> {
    nodes: Vec<Option<Tensor<F>>>,
    caches: Vec<Cache<F>>,
}

impl<F: Real> Trace<F> {
    pub fn node(&self, id: NodeId) -> Option<&Tensor<F>> {
        self.nodes.get(id).and_then(Option::as_ref)
    }

    pub fn output(&self) -> &Tensor<F> {
        self.nodes.last().and_then(Option::as_ref).expect("forward keeps the output")
    }

    pub fn into_output(mut self) -> Tensor<F> {
        self.nodes.pop().flatten().expect("forward keeps the output")
    }
}

#[derive(Clone, Debug)]
pub struct SegModel<F> {
    config: SegModelConfig,
    layers: Vec<LayerSpec>,
    encoder_outputs: Vec<NodeId>,
    params: ParamStore<F>,
}

struct GraphBuilder {
    layers: Vec<LayerSpec>,
    groups: usize,
}

impl GraphBuilder {
    fn push(&mut self, name: String, op: Op, input: NodeId) -> NodeId {
        self.layers.push(LayerSpec { name, op, input });
        self.layers.len()
    }

    fn conv(&mut self, name: String, input: NodeId, in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> NodeId {
        self.push(name, Op::Conv { in_ch, out_ch, kernel, stride }, input)
    }

    fn norm_relu(&mut self, name: String, input: NodeId, channels: usize) -> NodeId {
        let n = self.push(name.clone(), Op::GroupNorm { channels, groups: self.groups }, input);
        self.push(format!("{name}.relu"), Op::Relu, n)
    }

    /// Pre-activation residual block: (GN → ReLU → conv3×3) twice plus identity.
    fn block(&mut self, prefix: &str, input: NodeId, ch: usize) -> NodeId {
        let a = self.norm_relu(format!("{prefix}.norm1"), input, ch);
        let a = self.conv(format!("{prefix}.conv1"), a, ch, ch, 3, 1);
        let a = self.norm_relu(format!("{prefix}.norm2"), a, ch);
        let a = self.conv(format!("{prefix}.conv2"), a, ch, ch, 3, 1);
        self.push(format!("{prefix}.add"), Op::Add { other: input }, a)
    }
}

/// Builds the encoder/decoder graph with Kaiming-normal convolution weights drawn
/// from `seed`.
pub fn build_segresnet<F: Real>(config: SegModelConfig, seed: u64) -> Result<SegModel<F>> {
    config.validate()?;
    let blocks = config.blocks();
    let f0 = config.init_filters;
    let mut g = GraphBuilder {
        layers: Vec::new(),
        groups: config.groups,
    };

    let mut x = g.conv("enc.conv_init".into(), 0, config.in_channels, f0, 3, 1);
    if config.dropout > 0.0 {
        x = g.push("enc.dropout".into(), Op::Dropout { p: config.dropout }, x);
    }
    let mut encoder_outputs = Vec::with_capacity(config.levels);
    let mut ch = f0;
    for (level, &nb) in blocks.iter().enumerate() {
        if level > 0 {
            x = g.conv(format!("enc.{level}.down"), x, ch, ch * 2, 3, 2);
            ch *= 2;
        }
        for b in 0..nb {
            x = g.block(&format!("enc.{level}.block{b}"), x, ch);
        }
        encoder_outputs.push(x);
    }
    for level in (0..config.levels - 1).rev() {
        let skip = encoder_outputs[level];
        x = g.conv(format!("dec.{level}.proj"), x, ch, ch / 2, 1, 1);
        ch /= 2;
        x = g.push(format!("dec.{level}.up"), Op::Upsample { like: skip }, x);
        x = g.push(format!("dec.{level}.skip"), Op::Add { other: skip }, x);
        x = g.block(&format!("dec.{level}.block0"), x, ch);
    }
    x = g.norm_relu("head.norm".into(), x, ch);
    x = g.conv("head.conv".into(), x, ch, 1, 1, 1);
    g.push("head.sigmoid".into(), Op::Sigmoid, x);

    let params = init_params(&g.layers, seed);
    Ok(SegModel {
        config,
        layers: g.layers,
        encoder_outputs,
        params,
    })
}

fn init_params<F: Real>(layers: &[LayerSpec], seed: u64) -> ParamStore<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    for layer in layers {
        match layer.op {
            Op::Conv { in_ch, out_ch, kernel, .. } => {
                let fan_in = in_ch * kernel * kernel;
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                let n = out_ch * fan_in;
                let w = (0..n).map(|_| F::from_f64(normal.sample(&mut rng))).collect();
                params.insert(
                    format!("{}.weight", layer.name),
                    Tensor::from_vec([out_ch, in_ch, kernel, kernel], w).expect("sized"),
                );
                params.insert(format!("{}.bias", layer.name), Tensor::zeros([1, out_ch, 1, 1]));
            }
            Op::GroupNorm { channels, .. } => {
                params.insert(format!("{}.gamma", layer.name), Tensor::full([1, channels, 1, 1], F::one()));
                params.insert(format!("{}.beta", layer.name), Tensor::zeros([1, channels, 1, 1]));
            }
            _ => {}
        }
    }
    params
}

impl<F: Real> SegModel<F> {
    pub fn config(&self) -> &SegModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    /// Replaces all parameters; names and shapes must match the current store.
    pub fn set_params(&mut self, params: ParamStore<F>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Weights(format!("{} parameters for a model with {}", params.len(), self.params.len())));
        }
        for (name, cur) in self.params.iter() {
            let new = params.require(name)?;
            if new.shape() != cur.shape() {
                return Err(Error::Weights(format!("{name}: shape {:?} != {:?}", new.shape(), cur.shape())));
            }
        }
        self.params = params;
        Ok(())
    }

    /// Node ids holding the last activation of each encoder level.
    pub fn encoder_outputs(&self) -> &[NodeId] {
        &self.encoder_outputs
    }

    /// Names of layers that own parameters, in graph order.
    pub fn param_layers(&self) -> impl Iterator<Item = &str> {
        self.layers
            .iter()
            .filter(|l| matches!(l.op, Op::Conv { .. } | Op::GroupNorm { .. }))
            .map(|l| l.name.as_str())
    }

    /// Convolution kernels, the tensors the L2 penalty applies to.
    pub fn conv_kernel_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .filter(|l| matches!(l.op, Op::Conv { .. }))
            .map(|l| format!("{}.weight", l.name))
            .collect()
    }

    /// Shapes of every node for an input of the given shape, without computing values.
    pub fn infer_shapes(&self, input: [usize; 4]) -> Result<Vec<[usize; 4]>> {
        let mut shapes = vec![input];
        for layer in &self.layers {
            let [n, c, h, w] = shapes[layer.input];
            let out = match layer.op {
                Op::Conv { in_ch, out_ch, kernel, stride } => {
                    if c != in_ch {
                        return Err(Error::Shape(format!("{} expects {in_ch} channels, got {c}", layer.name)));
                    }
                    [n, out_ch, ops::conv_out_dim(h, kernel, stride), ops::conv_out_dim(w, kernel, stride)]
                }
                Op::Upsample { like } => {
                    let [_, _, lh, lw] = shapes[like];
                    if lh > 2 * h || lw > 2 * w {
                        return Err(Error::Shape(format!("{} cannot reach {lh}×{lw} from {h}×{w}", layer.name)));
                    }
                    [n, c, lh, lw]
                }
                Op::Add { other } => {
                    if shapes[other] != [n, c, h, w] {
                        return Err(Error::Shape(format!("{} adds {:?} to {:?}", layer.name, shapes[other], [n, c, h, w])));
                    }
                    [n, c, h, w]
                }
                _ => [n, c, h, w],
            };
            shapes.push(out);
        }
        Ok(shapes)
    }

    fn check_input(&self, x: &Tensor<F>) -> Result<()> {
        if x.channels() != self.config.in_channels {
            return Err(Error::Shape(format!("model expects {} input channels, got {}", self.config.in_channels, x.channels())));
        }
        let (h, w) = x.spatial();
        if h == 0 || w == 0 || x.batch() == 0 {
            return Err(Error::Shape(format!("empty input {:?}", x.shape())));
        }
        x.ensure_finite("model input")
    }

    /// Full forward pass keeping every activation for [`backward`](Self::backward).
    pub fn forward<R: Rng + ?Sized>(&self, x: Tensor<F>, mode: Mode, rng: &mut R) -> Result<Trace<F>> {
        self.check_input(&x)?;
        let mut trace = Trace {
            nodes: Vec::with_capacity(self.layers.len() + 1),
            caches: Vec::with_capacity(self.layers.len()),
        };
        trace.nodes.push(Some(x));
        for layer in &self.layers {
            let (y, cache) = self.apply(layer, &trace.nodes, mode, rng)?;
            trace.nodes.push(Some(y));
            trace.caches.push(cache);
        }
        Ok(trace)
    }

    /// Eval-mode forward that frees activations once no later layer reads them.
    pub fn predict(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut last_use = vec![0usize; n + 1];
        for (i, layer) in self.layers.iter().enumerate() {
            last_use[layer.input] = i;
            match layer.op {
                Op::Add { other } => last_use[other] = i,
                Op::Upsample { like } => last_use[like] = i,
                _ => {}
            }
        }
        let mut nodes: Vec<Option<Tensor<F>>> = Vec::with_capacity(n + 1);
        nodes.push(Some(x.clone()));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, _) = self.apply(layer, &nodes, Mode::Eval, &mut rng)?;
            nodes.push(Some(y));
            for (id, node) in nodes.iter_mut().enumerate().take(i + 1) {
                if last_use[id] == i {
                    *node = None;
                }
            }
        }
        Ok(nodes.pop().flatten().expect("output kept"))
    }

    fn apply<R: Rng + ?Sized>(
        &self,
        layer: &LayerSpec,
        nodes: &[Option<Tensor<F>>],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor<F>, Cache<F>)> {
        let get = |id: NodeId| nodes[id].as_ref().expect("live node");
        let x = get(layer.input);
        let (y, cache) = match layer.op {
            Op::Conv { stride, .. } => {
                let w = self.params.require(&format!("{}.weight", layer.name))?;
                let b = self.params.require(&format!("{}.bias", layer.name))?;
                let y = ops::conv2d_forward(x, w, b.data(), stride)
                    .map_err(|e| Error::Shape(format!("{}: {e}", layer.name)))?;
                (y, Cache::None)
            }
            Op::GroupNorm { groups, .. } => {
                let gamma = self.params.require(&format!("{}.gamma", layer.name))?;
                let beta = self.params.require(&format!("{}.beta", layer.name))?;
                let (y, c) = ops::groupnorm_forward(x, gamma.data(), beta.data(), groups, self.config.norm_eps)?;
                (y, Cache::Norm(c))
            }
            Op::Relu => (ops::relu_forward(x), Cache::None),
            Op::Dropout { p } => match mode {
                Mode::Train => {
                    let (y, s) = ops::dropout_forward(x, p, rng);
                    (y, Cache::Dropout(s))
                }
                Mode::Eval => (x.clone(), Cache::None),
            },
            Op::Upsample { like } => {
                let (h, w) = get(like).spatial();
                (ops::upsample_forward(x, h, w)?, Cache::None)
            }
            Op::Add { other } => {
                let mut y = x.clone();
                y.add_assign(get(other))
                    .map_err(|e| Error::Shape(format!("{}: {e}", layer.name)))?;
                (y, Cache::None)
            }
            Op::Sigmoid => (ops::sigmoid_forward(x), Cache::None),
        };
        y.ensure_finite(&layer.name)?;
        Ok((y, cache))
    }

    /// Parameter gradients given `d loss / d output`.
    pub fn backward(&self, trace: &Trace<F>, d_output: &Tensor<F>) -> Result<ParamStore<F>> {
        self.backward_full(trace, d_output).map(|(g, _)| g)
    }

    /// Parameter gradients plus the gradient with respect to the network input.
    pub fn backward_full(&self, trace: &Trace<F>, d_output: &Tensor<F>) -> Result<(ParamStore<F>, Tensor<F>)> {
        if trace.nodes.len() != self.layers.len() + 1 {
            return Err(Error::InvalidArgument("trace does not belong to this model".into()));
        }
        if !d_output.same_shape(trace.output()) {
            return Err(Error::Shape(format!("output grad {:?} for output {:?}", d_output.shape(), trace.output().shape())));
        }
        let node = |id: NodeId| trace.nodes[id].as_ref().expect("training trace keeps nodes");
        let mut grads = self.params.zeros_like();
        let mut dnodes: Vec<Option<Tensor<F>>> = (0..trace.nodes.len()).map(|_| None).collect();
        *dnodes.last_mut().expect("output") = Some(d_output.clone());

        fn push<F: Real>(slot: &mut Option<Tensor<F>>, g: Tensor<F>) -> Result<()> {
            match slot {
                Some(acc) => acc.add_assign(&g),
                None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        }

        for (i, layer) in self.layers.iter().enumerate().rev() {
            let Some(dy) = dnodes[i + 1].take() else { continue };
            let x = node(layer.input);
            let dx = match (&layer.op, &trace.caches[i]) {
                (Op::Conv { stride, .. }, _) => {
                    let wname = format!("{}.weight", layer.name);
                    let w = self.params.require(&wname)?;
                    let g = ops::conv2d_backward(x, w, *stride, &dy, true)?;
                    grads.accumulate(&wname, &g.dw)?;
                    let db = Tensor::from_vec([1, g.db.len(), 1, 1], g.db)?;
                    grads.accumulate(&format!("{}.bias", layer.name), &db)?;
                    g.dx.expect("requested")
                }
                (Op::GroupNorm { groups, .. }, Cache::Norm(cache)) => {
                    let gamma = self.params.require(&format!("{}.gamma", layer.name))?;
                    let g = ops::groupnorm_backward(x, cache, gamma.data(), *groups, &dy)?;
                    let c = g.dgamma.len();
                    grads.accumulate(&format!("{}.gamma", layer.name), &Tensor::from_vec([1, c, 1, 1], g.dgamma)?)?;
                    grads.accumulate(&format!("{}.beta", layer.name), &Tensor::from_vec([1, c, 1, 1], g.dbeta)?)?;
                    g.dx
                }
                (Op::GroupNorm { .. }, _) => unreachable!("group norm always caches"),
                (Op::Relu, _) => ops::relu_backward(node(i + 1), &dy),
                (Op::Dropout { .. }, Cache::Dropout(scale)) => ops::dropout_backward(scale, &dy),
                (Op::Dropout { .. }, _) => dy,
                (Op::Upsample { .. }, _) => {
                    let (h, w) = x.spatial();
                    ops::upsample_backward(&dy, h, w)
                }
                (Op::Add { other }, _) => {
                    push(&mut dnodes[*other], dy.clone())?;
                    dy
                }
                (Op::Sigmoid, _) => ops::sigmoid_backward(node(i + 1), &dy),
            };
            dx.ensure_finite(&format!("{} backward", layer.name))?;
            push(&mut dnodes[layer.input], dx)?;
        }
        let dinput = dnodes[0].take().unwrap_or_else(|| Tensor::zeros(node(0).shape()));
        Ok((grads, dinput))
    }
}
