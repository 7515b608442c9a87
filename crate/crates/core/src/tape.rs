//! Reverse-mode differentiation by operation recording.
//!
//! Each op method evaluates its kernel eagerly, stores the result, and
//! records what the backward pass needs. [`Tape::backward`] then walks the
//! records in exact reverse order. A tape is single-writer; parameters are
//! read from a shared [`ParamStore`] and their gradients are written back only
//! through [`Gradients::accumulate_into`].

use std::collections::HashMap;

use strum::{EnumDiscriminants, EnumIter};

use crate::error::{shape_err, Error, Result};
use crate::ops::conv::Conv2dGeometry;
use crate::ops::norm::{BatchNormCache, BatchNormStats, GroupNormCache};
use crate::ops::pool::PoolWindows;
use crate::ops::{self, activation, conv, gating, layout, linalg, loss, norm, pool};
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

#[derive(Clone, Debug, EnumDiscriminants)]
#[strum_discriminants(name(OpKind), vis(pub), derive(EnumIter, Hash, PartialOrd, Ord, strum::Display))]
#[strum_discriminants(strum(serialize_all = "snake_case"))]
enum Op {
    Leaf,
    Param(ParamId),
    AvgPoolOverHeight { x: Var },
    AvgPoolOverWidth { x: Var },
    AdaptiveAvgPool2d { x: Var, windows: PoolWindows },
    AvgPool2d { x: Var, windows: PoolWindows },
    MeanLastDim { x: Var },
    SliceChannels { x: Var, start: usize },
    ConcatChannels { parts: Vec<Var> },
    ChannelShuffle { x: Var, groups: usize },
    Reshape { x: Var },
    TransposeLast2 { x: Var },
    DwConv1d { x: Var, w: Var, bias: Option<Var> },
    Conv2d { x: Var, w: Var, bias: Option<Var>, geometry: Conv2dGeometry },
    GroupNorm { x: Var, gamma: Var, beta: Var, cache: GroupNormCache },
    BatchNorm1d { x: Var, gamma: Var, beta: Var, cache: BatchNormCache },
    Sigmoid { x: Var },
    Relu { x: Var },
    SoftmaxLastDim { x: Var },
    PerChannelAffine { x: Var, w: Var, bias: Var },
    BatchedMatmul { a: Var, b: Var },
    Linear { x: Var, w: Var, bias: Var },
    Scale { x: Var, factor: f64 },
    Add { a: Var, b: Var },
    BroadcastMul3 { x: Var, along_w: Var, along_h: Var },
    ChannelGate { x: Var, gate: Var },
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Tensor },
}

impl OpKind {
    /// False only for graph inputs.
    pub fn has_backward(self) -> bool {
        !matches!(self, OpKind::Leaf | OpKind::Param)
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Settings for batch normalization recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BatchNormSpec {
    pub eps: f64,
    pub momentum: f64,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    mode: Mode,
    param_vars: HashMap<ParamId, Var>,
    buffer_updates: Vec<(ParamId, Tensor)>,
    corruption: Option<(OpKind, f64)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_mode(mode: Mode) -> Self {
        Self { mode, ..Self::default() }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Scales every input gradient emitted by ops of `kind` by `factor`.
    /// Only useful as a negative control for gradient checking.
    pub fn corrupt_backward(&mut self, kind: OpKind, factor: f64) {
        self.corruption = Some((kind, factor));
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Kinds of all recorded ops, in execution order.
    pub fn op_kinds(&self) -> impl Iterator<Item = OpKind> + '_ {
        self.nodes.iter().map(|n| OpKind::from(&n.op))
    }

    /// Running-statistic updates produced by train-mode batch norms.
    pub fn buffer_updates(&self) -> &[(ParamId, Tensor)] {
        &self.buffer_updates
    }

    pub fn apply_buffer_updates(&mut self, store: &mut ParamStore) -> Result<()> {
        for (id, t) in self.buffer_updates.drain(..) {
            store.set_value(id, t)?;
        }
        Ok(())
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if cfg!(debug_assertions) && !value.is_finite() {
            return Err(Error::NonFinite(format!("output of {} op", OpKind::from(&op))));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// The parameter as a graph input. Repeated calls with the same id return
    /// the same var, so every use of a shared parameter feeds one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node { value: store.value(id).clone(), op: Op::Param(id) });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn avg_pool_over_height(&mut self, x: Var) -> Result<Var> {
        let y = pool::avg_pool_over_height(self.value(x))?;
        self.push(y, Op::AvgPoolOverHeight { x })
    }

    pub fn avg_pool_over_width(&mut self, x: Var) -> Result<Var> {
        let y = pool::avg_pool_over_width(self.value(x))?;
        self.push(y, Op::AvgPoolOverWidth { x })
    }

    pub fn adaptive_avg_pool2d(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (_, _, h, w) = self.value(x).dims4()?;
        let windows = PoolWindows::adaptive(h, w, out_h, out_w)?;
        let y = pool::pool2d(self.value(x), &windows)?;
        self.push(y, Op::AdaptiveAvgPool2d { x, windows })
    }

    pub fn avg_pool2d(&mut self, x: Var, kernel: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        let (_, _, h, w) = self.value(x).dims4()?;
        let windows = PoolWindows::strided(h, w, kernel, stride)?;
        let y = pool::pool2d(self.value(x), &windows)?;
        self.push(y, Op::AvgPool2d { x, windows })
    }

    pub fn mean_lastdim(&mut self, x: Var) -> Result<Var> {
        let y = pool::mean_lastdim(self.value(x))?;
        self.push(y, Op::MeanLastDim { x })
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let y = layout::slice_channels(self.value(x), start, end)?;
        self.push(y, Op::SliceChannels { x, start })
    }

    pub fn channel_split(&mut self, x: Var, k: usize) -> Result<Vec<Var>> {
        let c = self.shape(x).get(1).copied().unwrap_or(0);
        if k == 0 || c % k != 0 {
            return Err(Error::Config(format!("cannot split {c} channels into {k} equal parts")));
        }
        let width = c / k;
        (0..k).map(|i| self.slice_channels(x, i * width, (i + 1) * width)).collect()
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let y = layout::concat_channels(&tensors)?;
        self.push(y, Op::ConcatChannels { parts: parts.to_vec() })
    }

    pub fn channel_shuffle(&mut self, x: Var, groups: usize) -> Result<Var> {
        let y = layout::channel_shuffle(self.value(x), groups)?;
        self.push(y, Op::ChannelShuffle { x, groups })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).reshape(shape)?;
        self.push(y, Op::Reshape { x })
    }

    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let y = linalg::transpose_last2(self.value(x))?;
        self.push(y, Op::TransposeLast2 { x })
    }

    pub fn dwconv1d(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let y = conv::dwconv1d(self.value(x), self.value(w), bias.map(|b| self.value(b)))?;
        self.push(y, Op::DwConv1d { x, w, bias })
    }

    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, geometry: Conv2dGeometry) -> Result<Var> {
        let y = conv::conv2d(self.value(x), self.value(w), bias.map(|b| self.value(b)), geometry)?;
        self.push(y, Op::Conv2d { x, w, bias, geometry })
    }

    pub fn group_norm(&mut self, x: Var, groups: usize, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (y, cache) = norm::group_norm(self.value(x), groups, self.value(gamma), self.value(beta), eps)?;
        self.push(y, Op::GroupNorm { x, gamma, beta, cache })
    }

    /// Pre-affine group-normalized values of a recorded group-norm output.
    pub fn group_norm_normalized(&self, v: Var) -> Option<&Tensor> {
        match &self.nodes[v.0].op {
            Op::GroupNorm { cache, .. } => Some(&cache.normalized),
            Op::BatchNorm1d { cache, .. } => Some(&cache.normalized),
            _ => None,
        }
    }

    /// Batch normalization; train mode uses batch statistics and queues the
    /// running-statistic update, eval mode reads the running statistics.
    pub fn batch_norm1d(&mut self, store: &ParamStore, x: Var, gamma: Var, beta: Var, spec: BatchNormSpec) -> Result<Var> {
        let running = BatchNormStats {
            mean: store.value(spec.running_mean).clone(),
            var: store.value(spec.running_var).clone(),
        };
        let train = self.mode == Mode::Train;
        let out = norm::batch_norm1d(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            spec.eps,
            spec.momentum,
            train,
            &running,
        )?;
        if let Some(updated) = out.updated {
            self.buffer_updates.push((spec.running_mean, updated.mean));
            self.buffer_updates.push((spec.running_var, updated.var));
        }
        self.push(out.output, Op::BatchNorm1d { x, gamma, beta, cache: out.cache })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let y = activation::sigmoid(self.value(x));
        self.push(y, Op::Sigmoid { x })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let y = activation::relu(self.value(x));
        self.push(y, Op::Relu { x })
    }

    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        let y = activation::softmax_lastdim(self.value(x))?;
        self.push(y, Op::SoftmaxLastDim { x })
    }

    pub fn per_channel_affine(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let y = linalg::per_channel_affine(self.value(x), self.value(w), self.value(bias))?;
        self.push(y, Op::PerChannelAffine { x, w, bias })
    }

    pub fn batched_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = linalg::batched_matmul(self.value(a), self.value(b))?;
        self.push(y, Op::BatchedMatmul { a, b })
    }

    pub fn linear(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let y = linalg::linear(self.value(x), self.value(w), self.value(bias))?;
        self.push(y, Op::Linear { x, w, bias })
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let y = self.value(x).scale(factor);
        self.push(y, Op::Scale { x, factor })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).add(self.value(b))?;
        self.push(y, Op::Add { a, b })
    }

    pub fn broadcast_mul3(&mut self, x: Var, along_w: Var, along_h: Var) -> Result<Var> {
        let y = gating::broadcast_mul3(self.value(x), self.value(along_w), self.value(along_h))?;
        self.push(y, Op::BroadcastMul3 { x, along_w, along_h })
    }

    pub fn channel_gate(&mut self, x: Var, gate: Var) -> Result<Var> {
        let y = gating::channel_gate(self.value(x), self.value(gate))?;
        self.push(y, Op::ChannelGate { x, gate })
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = loss::softmax_cross_entropy(self.value(logits), labels)?;
        self.push(loss, Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec(), probs })
    }

    /// Reverse pass from `out` seeded with the cotangent `seed`.
    pub fn backward(&self, out: Var, seed: Tensor) -> Result<Gradients> {
        seed.expect_shape(self.shape(out), "backward seed")?;
        let mut grads: Vec<Option<Tensor>> = vec![None; out.0 + 1];
        grads[out.0] = Some(seed);
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let kind = OpKind::from(&node.op);
            let mut contributions = self.input_grads(node, &g)?;
            if let Some((bad, factor)) = self.corruption {
                if bad == kind {
                    for (_, t) in &mut contributions {
                        *t = t.scale(factor);
                    }
                }
            }
            for (v, t) in contributions {
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Reverse pass from a scalar (single-element) output.
    pub fn backward_scalar(&self, out: Var) -> Result<Gradients> {
        if self.value(out).numel() != 1 {
            return Err(shape_err!("backward_scalar on non-scalar {:?}", self.shape(out)));
        }
        self.backward(out, Tensor::ones(self.shape(out))?)
    }

    fn input_grads(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| self.value(v);
        let shape_of = |v: Var| self.shape(v).to_vec();
        Ok(match &node.op {
            Op::Leaf | Op::Param(_) => vec![],
            Op::AvgPoolOverHeight { x } => vec![(*x, pool::avg_pool_over_height_backward(g, &shape_of(*x)))],
            Op::AvgPoolOverWidth { x } => vec![(*x, pool::avg_pool_over_width_backward(g, &shape_of(*x)))],
            Op::AdaptiveAvgPool2d { x, windows } | Op::AvgPool2d { x, windows } => {
                vec![(*x, pool::pool2d_backward(g, windows, &shape_of(*x)))]
            }
            Op::MeanLastDim { x } => vec![(*x, pool::mean_lastdim_backward(g, &shape_of(*x)))],
            Op::SliceChannels { x, start } => {
                vec![(*x, layout::slice_channels_backward(g, *start, &shape_of(*x)))]
            }
            Op::ConcatChannels { parts } => {
                let mut start = 0;
                let mut out = Vec::with_capacity(parts.len());
                for &p in parts {
                    let width = self.shape(p)[1];
                    out.push((p, layout::slice_channels(g, start, start + width)?));
                    start += width;
                }
                out
            }
            Op::ChannelShuffle { x, groups } => vec![(*x, ops::channel_unshuffle(g, *groups)?)],
            Op::Reshape { x } => vec![(*x, g.reshape(self.shape(*x))?)],
            Op::TransposeLast2 { x } => vec![(*x, linalg::transpose_last2(g)?)],
            Op::DwConv1d { x, w, bias } => {
                let (gx, gw, gb) = conv::dwconv1d_backward(g, val(*x), val(*w));
                let mut out = vec![(*x, gx), (*w, gw)];
                out.extend(bias.map(|b| (b, gb)));
                out
            }
            Op::Conv2d { x, w, bias, geometry } => {
                let (gx, gw, gb) = conv::conv2d_backward(g, val(*x), val(*w), *geometry)?;
                let mut out = vec![(*x, gx), (*w, gw)];
                out.extend(bias.map(|b| (b, gb)));
                out
            }
            Op::GroupNorm { x, gamma, beta, cache } => {
                let (gx, gg, gb) = norm::group_norm_backward(g, cache, val(*gamma));
                vec![(*x, gx), (*gamma, gg), (*beta, gb)]
            }
            Op::BatchNorm1d { x, gamma, beta, cache } => {
                let (gx, gg, gb) = norm::batch_norm1d_backward(g, cache, val(*gamma));
                vec![(*x, gx), (*gamma, gg), (*beta, gb)]
            }
            Op::Sigmoid { x } => vec![(*x, activation::sigmoid_backward(g, &node.value))],
            Op::Relu { x } => vec![(*x, activation::relu_backward(g, val(*x)))],
            Op::SoftmaxLastDim { x } => vec![(*x, activation::softmax_lastdim_backward(g, &node.value))],
            Op::PerChannelAffine { x, w, bias } => {
                let (gx, gw, gb) = linalg::per_channel_affine_backward(g, val(*x), val(*w));
                vec![(*x, gx), (*w, gw), (*bias, gb)]
            }
            Op::BatchedMatmul { a, b } => {
                let (ga, gb) = linalg::batched_matmul_backward(g, val(*a), val(*b))?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Linear { x, w, bias } => {
                let (gx, gw, gb) = linalg::linear_backward(g, val(*x), val(*w));
                vec![(*x, gx), (*w, gw), (*bias, gb)]
            }
            Op::Scale { x, factor } => vec![(*x, g.scale(*factor))],
            Op::Add { a, b } => vec![(*a, g.clone()), (*b, g.clone())],
            Op::BroadcastMul3 { x, along_w, along_h } => {
                let (gx, gw, gh) = gating::broadcast_mul3_backward(g, val(*x), val(*along_w), val(*along_h));
                vec![(*x, gx), (*along_w, gw), (*along_h, gh)]
            }
            Op::ChannelGate { x, gate } => {
                let (gx, gg) = gating::channel_gate_backward(g, val(*x), val(*gate));
                vec![(*x, gx), (*gate, gg)]
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                vec![(*logits, loss::softmax_cross_entropy_backward(g, probs, labels))]
            }
        })
    }

    /// Parameter a var was read from, if it is a parameter leaf.
    pub fn param_of(&self, v: Var) -> Option<ParamId> {
        match self.nodes.get(v.0)?.op {
            Op::Param(id) => Some(id),
            _ => None,
        }
    }

    /// Var bound to a parameter on this tape, if it was used.
    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.param_vars.get(&id).copied()
    }
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds the gradient of every trainable parameter used on `tape` into the
    /// store's accumulators.
    pub fn accumulate_into(&self, tape: &Tape, store: &mut ParamStore) {
        for (&id, &v) in &tape.param_vars {
            if !store.get(id).trainable {
                continue;
            }
            if let Some(g) = self.get(v) {
                store.get_mut(id).grad.add_assign(g);
            }
        }
    }
}
