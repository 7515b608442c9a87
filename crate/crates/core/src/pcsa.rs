//! Progressive channel-wise self-attention.
//!
//! The spatially gated map is pooled to a small token grid, flattened to
//! `[B, C, N]` and projected per channel into queries, keys and values.
//! Attention runs between channels: `softmax(Q K^T / scale) V` gives a
//! `[B, C, N]` result whose token mean, through a sigmoid, gates each channel
//! of the input.

use crate::config::{PcsaConfig, PoolingMode, ScaleMode};
use crate::error::{config_err, Result};
use crate::param::{ParamId, ParamStore};
use crate::smsa::join;
use crate::tape::{Mode, Tape, Var};
use crate::tensor::Tensor;

/// Above this many multiply-accumulates in the `C^2 N` attention product an
/// uncompressed evaluation logs a warning.
pub const UNCOMPRESSED_ATTENTION_BUDGET: usize = 1 << 28;

#[derive(Clone, Copy, Debug)]
struct Projection {
    weight: ParamId,
    bias: ParamId,
}

impl Projection {
    fn new(store: &mut ParamStore, prefix: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            weight: store.add(&format!("{prefix}.weight"), Tensor::ones(&[channels])?)?,
            bias: store.add(&format!("{prefix}.bias"), Tensor::zeros(&[channels])?)?,
        })
    }

    fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(store, self.weight), tape.param(store, self.bias));
        tape.per_channel_affine(x, w, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PcsaTrace {
    /// Post-softmax attention, `[B*heads, C/heads, C/heads]`.
    pub attention: Var,
    /// Per-channel gate `[B, C]` in (0, 1).
    pub gate: Var,
    pub output: Var,
}

#[derive(Clone, Debug)]
pub struct Pcsa {
    cfg: PcsaConfig,
    channels: usize,
    query: Projection,
    key: Projection,
    value: Projection,
}

impl Pcsa {
    /// Registers `{prefix}.q.weight` ... `{prefix}.v.bias`. Projections start
    /// as the identity (weight 1, bias 0).
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, cfg: &PcsaConfig) -> Result<Self> {
        cfg.validate(Some(channels))?;
        Ok(Self {
            cfg: cfg.clone(),
            channels,
            query: Projection::new(store, &join(prefix, "q"), channels)?,
            key: Projection::new(store, &join(prefix, "k"), channels)?,
            value: Projection::new(store, &join(prefix, "v"), channels)?,
        })
    }

    pub fn config(&self) -> &PcsaConfig {
        &self.cfg
    }

    pub fn value_weight(&self) -> ParamId {
        self.value.weight
    }

    pub fn value_bias(&self) -> ParamId {
        self.value.bias
    }

    pub fn query_weight(&self) -> ParamId {
        self.query.weight
    }

    pub fn key_weight(&self) -> ParamId {
        self.key.weight
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        Ok(self.trace(tape, store, x)?.output)
    }

    pub fn trace(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<PcsaTrace> {
        let (b, c, h, w) = tape.value(x).dims4()?;
        if c != self.channels {
            return Err(config_err!("pcsa built for {} channels, input has {c}", self.channels));
        }
        let pooled = self.compress(tape, x, h, w)?;
        let (_, _, ph, pw) = tape.value(pooled).dims4()?;
        let n = ph * pw;
        if !self.cfg.progressive_compression && c * c * n > UNCOMPRESSED_ATTENTION_BUDGET {
            log::warn!("uncompressed channel attention over {n} tokens and {c} channels: {} MACs", c * c * n);
        }
        let tokens = tape.reshape(pooled, &[b, c, n])?;
        let heads = self.cfg.heads;
        let per_head = [b * heads, c / heads, n];
        let q = self.query.apply(tape, store, tokens)?;
        let k = self.key.apply(tape, store, tokens)?;
        let v = self.value.apply(tape, store, tokens)?;
        let (q, k, v) = if heads > 1 {
            (tape.reshape(q, &per_head)?, tape.reshape(k, &per_head)?, tape.reshape(v, &per_head)?)
        } else {
            (q, k, v)
        };
        let kt = tape.transpose_last2(k)?;
        let logits = tape.batched_matmul(q, kt)?;
        let scale = match self.cfg.scale_mode {
            ScaleMode::SqrtC => c as f64,
            ScaleMode::SqrtHw => n as f64,
        }
        .sqrt();
        let logits = tape.scale(logits, 1.0 / scale)?;
        let attention = tape.softmax_lastdim(logits)?;
        let mut mixed = tape.batched_matmul(attention, v)?;
        if heads > 1 {
            mixed = tape.reshape(mixed, &[b, c, n])?;
        }
        if self.cfg.shuffle {
            mixed = tape.channel_shuffle(mixed, heads)?;
        }
        let pooled_attn = tape.mean_lastdim(mixed)?;
        let gate = tape.sigmoid(pooled_attn)?;
        let output = tape.channel_gate(x, gate)?;
        Ok(PcsaTrace { attention, gate, output })
    }

    fn compress(&self, tape: &mut Tape, x: Var, h: usize, w: usize) -> Result<Var> {
        if !self.cfg.progressive_compression {
            return Ok(x);
        }
        let (ph, pw) = (self.cfg.pooled_h.min(h), self.cfg.pooled_w.min(w));
        match self.cfg.pooling {
            PoolingMode::Adaptive => tape.adaptive_avg_pool2d(x, ph, pw),
            PoolingMode::Window => tape.avg_pool2d(x, (ph, pw), (ph, pw)),
        }
    }

    /// Post-softmax channel attention: `[B, C, C]` for one head, otherwise
    /// `[B, heads, C/heads, C/heads]`.
    pub fn channel_attention_matrix(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let (b, c, _, _) = x.dims4()?;
        let mut tape = Tape::with_mode(Mode::Eval);
        let xv = tape.leaf(x.clone());
        let t = self.trace(&mut tape, store, xv)?;
        let a = tape.value(t.attention);
        let heads = self.cfg.heads;
        if heads == 1 {
            Ok(a.clone())
        } else {
            a.reshape(&[b, heads, c / heads, c / heads])
        }
    }
}
