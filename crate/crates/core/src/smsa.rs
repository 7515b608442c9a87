//! Shareable multi-semantic spatial attention.
//!
//! The input `[B, C, H, W]` is averaged along H and along W into two 1D
//! sequences (`[B, C, W]` and `[B, C, H]`). Each sequence is split into
//! `K` channel sub-features, each sub-feature goes through a depth-wise 1D
//! convolution with its own kernel size, the results are concatenated,
//! normalized with `K` groups and squashed by a sigmoid. The two maps then
//! gate the input: the `[B, C, W]` map broadcasts over H, the `[B, C, H]`
//! map over W.
//!
//! With shared convolutions both sequences use the same kernels, so the
//! kernel gradient is the sum of both branch contributions.

use rand::Rng;

use crate::config::{ConvSharing, NormKind, NormPosition, SmsaConfig};
use crate::error::{config_err, Result};
use crate::param::{ParamId, ParamStore};
use crate::tape::{BatchNormSpec, Tape, Var};
use crate::tensor::Tensor;

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Clone, Debug)]
enum NormParams {
    Group { gamma: ParamId, beta: ParamId },
    Batch { gamma: ParamId, beta: ParamId, running_mean: ParamId, running_var: ParamId },
}

impl NormParams {
    fn new(store: &mut ParamStore, prefix: &str, branch: &str, kind: NormKind, channels: usize) -> Result<Self> {
        let ones = Tensor::ones(&[channels])?;
        let zeros = Tensor::zeros(&[channels])?;
        Ok(match kind {
            NormKind::Gn => {
                let base = join(prefix, &format!("gn_{branch}"));
                NormParams::Group {
                    gamma: store.add(&format!("{base}.gamma"), ones)?,
                    beta: store.add(&format!("{base}.beta"), zeros)?,
                }
            }
            NormKind::Bn => {
                let base = join(prefix, &format!("bn_{branch}"));
                NormParams::Batch {
                    gamma: store.add(&format!("{base}.gamma"), ones.clone())?,
                    beta: store.add(&format!("{base}.beta"), zeros.clone())?,
                    running_mean: store.add_buffer(&format!("{base}.running_mean"), zeros)?,
                    running_var: store.add_buffer(&format!("{base}.running_var"), ones)?,
                }
            }
        })
    }
}

/// Convolution kernels of one branch, one per sub-feature.
#[derive(Clone, Debug)]
struct BranchConvs {
    weights: Vec<ParamId>,
    biases: Vec<Option<ParamId>>,
}

impl BranchConvs {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &SmsaConfig,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (i, &k) in cfg.kernel_sizes.iter().enumerate() {
            let bound = 1.0 / (k as f64).sqrt();
            let w = Tensor::uniform(&[width, k], -bound, bound, rng)?;
            weights.push(store.add(&format!("{prefix}.{i}.weight"), w)?);
            biases.push(if cfg.conv_bias {
                Some(store.add(&format!("{prefix}.{i}.bias"), Tensor::zeros(&[width])?)?)
            } else {
                None
            });
        }
        Ok(Self { weights, biases })
    }
}

/// Intermediate values of one SMSA evaluation.
#[derive(Clone, Copy, Debug)]
pub struct SmsaTrace {
    /// Sigmoid map from the H-averaged sequence, `[B, C, W]`.
    pub attn_h: Var,
    /// Sigmoid map from the W-averaged sequence, `[B, C, H]`.
    pub attn_w: Var,
    /// Normalization outputs of the two branches (pre-sigmoid).
    pub norm_h: Var,
    pub norm_w: Var,
    pub output: Var,
}

#[derive(Clone, Debug)]
pub struct Smsa {
    cfg: SmsaConfig,
    channels: usize,
    convs_h: BranchConvs,
    convs_w: BranchConvs,
    norm_h: NormParams,
    norm_w: NormParams,
}

impl Smsa {
    /// Registers parameters under `prefix` (e.g. `"smsa"`).
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        cfg: &SmsaConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate(Some(channels))?;
        let width = channels / cfg.k_groups;
        let convs_h = BranchConvs::new(store, &join(prefix, "conv"), cfg, width, rng)?;
        let convs_w = match cfg.conv_sharing {
            ConvSharing::Shared => convs_h.clone(),
            ConvSharing::Unshared => BranchConvs::new(store, &join(prefix, "conv_w"), cfg, width, rng)?,
        };
        let norm_h = NormParams::new(store, prefix, "h", cfg.norm, channels)?;
        let norm_w = NormParams::new(store, prefix, "w", cfg.norm, channels)?;
        Ok(Self { cfg: cfg.clone(), channels, convs_h, convs_w, norm_h, norm_w })
    }

    pub fn config(&self) -> &SmsaConfig {
        &self.cfg
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        Ok(self.trace(tape, store, x)?.output)
    }

    pub fn trace(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<SmsaTrace> {
        let (_, c, _, _) = tape.value(x).dims4()?;
        if c != self.channels {
            return Err(config_err!("smsa built for {} channels, input has {c}", self.channels));
        }
        let seq_h = tape.avg_pool_over_height(x)?;
        let seq_w = tape.avg_pool_over_width(x)?;
        let (attn_h, norm_h) = self.branch(tape, store, seq_h, &self.convs_h, &self.norm_h)?;
        let (attn_w, norm_w) = self.branch(tape, store, seq_w, &self.convs_w, &self.norm_w)?;
        let output = tape.broadcast_mul3(x, attn_h, attn_w)?;
        Ok(SmsaTrace { attn_h, attn_w, norm_h, norm_w, output })
    }

    /// The two sigmoid maps `(attn_h [B,C,W], attn_w [B,C,H])` for an input.
    pub fn attention_maps(&self, store: &ParamStore, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::with_mode(crate::tape::Mode::Eval);
        let xv = tape.leaf(x.clone());
        let t = self.trace(&mut tape, store, xv)?;
        Ok((tape.value(t.attn_h).clone(), tape.value(t.attn_w).clone()))
    }

    fn branch(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        seq: Var,
        convs: &BranchConvs,
        norm: &NormParams,
    ) -> Result<(Var, Var)> {
        let (y, normed) = match self.cfg.gn_position {
            NormPosition::PostConv => {
                let conv = self.convolve(tape, store, seq, convs)?;
                let n = self.normalize(tape, store, conv, norm)?;
                (n, n)
            }
            NormPosition::PreConv => {
                let n = self.normalize(tape, store, seq, norm)?;
                (self.convolve(tape, store, n, convs)?, n)
            }
        };
        Ok((tape.sigmoid(y)?, normed))
    }

    fn convolve(&self, tape: &mut Tape, store: &ParamStore, seq: Var, convs: &BranchConvs) -> Result<Var> {
        let parts = tape.channel_split(seq, self.cfg.k_groups)?;
        let mut outs = Vec::with_capacity(parts.len());
        for ((part, &w), bias) in parts.into_iter().zip(&convs.weights).zip(&convs.biases) {
            let wv = tape.param(store, w);
            let bv = bias.map(|b| tape.param(store, b));
            outs.push(tape.dwconv1d(part, wv, bv)?);
        }
        if outs.len() == 1 {
            return Ok(outs[0]);
        }
        tape.concat_channels(&outs)
    }

    fn normalize(&self, tape: &mut Tape, store: &ParamStore, seq: Var, norm: &NormParams) -> Result<Var> {
        match *norm {
            NormParams::Group { gamma, beta } => {
                let (g, b) = (tape.param(store, gamma), tape.param(store, beta));
                tape.group_norm(seq, self.cfg.k_groups, g, b, self.cfg.eps)
            }
            NormParams::Batch { gamma, beta, running_mean, running_var } => {
                let (g, b) = (tape.param(store, gamma), tape.param(store, beta));
                let spec = BatchNormSpec { eps: self.cfg.eps, momentum: self.cfg.bn_momentum, running_mean, running_var };
                tape.batch_norm1d(store, seq, g, b, spec)
            }
        }
    }
}
