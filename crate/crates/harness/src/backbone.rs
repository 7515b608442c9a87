//! A small residual network for the synthetic task.
//!
//! Layout: 3x3 stride-2 stem, then stages of basic residual blocks
//! (conv-GN-ReLU-conv-GN), global average pooling and a linear head. When
//! attention is enabled, an SCSA module is applied to each block's residual
//! branch after its last normalization and before the shortcut is added.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use scsa_core::ops::conv::Conv2dGeometry;
use scsa_core::{Error, ParamId, ParamStore, Result, Scsa, ScsaConfig, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attention {
    None,
    Scsa(ScsaConfig),
}

impl Default for Attention {
    fn default() -> Self {
        Attention::Scsa(ScsaConfig::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneSpec {
    pub in_channels: usize,
    pub stem_channels: usize,
    /// Channel count of each stage; every stage after the first halves the
    /// spatial extent.
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: usize,
    pub gn_groups: usize,
    pub num_classes: usize,
    /// Not part of the serialized form; front ends set it from their own
    /// attention switch.
    #[serde(skip)]
    pub attention: Attention,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        Self {
            in_channels: 3,
            stem_channels: 16,
            stage_channels: vec![16, 32],
            blocks_per_stage: 2,
            gn_groups: 4,
            num_classes: 4,
            attention: Attention::Scsa(ScsaConfig::default()),
        }
    }
}

impl BackboneSpec {
    pub fn without_attention(mut self) -> Self {
        self.attention = Attention::None;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.stage_channels.is_empty() || self.blocks_per_stage == 0 {
            return err("backbone.stage_channels and backbone.blocks_per_stage must be non-empty".into());
        }
        let all = std::iter::once(self.stem_channels).chain(self.stage_channels.iter().copied());
        for c in all {
            if self.gn_groups == 0 || c % self.gn_groups != 0 {
                return err(format!("backbone.gn_groups = {} does not divide {c} channels", self.gn_groups));
            }
        }
        if let Attention::Scsa(cfg) = &self.attention {
            for &c in &self.stage_channels {
                cfg.validate(Some(c)).map_err(|e| Error::Config(format!("backbone.attention.scsa: {e}")))?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Clone, Debug)]
struct Block {
    conv1: ParamId,
    norm1: Norm,
    conv2: ParamId,
    norm2: Norm,
    stride: usize,
    attention: Option<Scsa>,
    /// 1x1 projection when the shortcut changes shape.
    proj: Option<(ParamId, Norm)>,
}

#[derive(Clone, Debug)]
pub struct Backbone {
    spec: BackboneSpec,
    stem: ParamId,
    stem_norm: Norm,
    blocks: Vec<Block>,
    head_w: ParamId,
    head_b: ParamId,
}

fn he_normal<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Result<Tensor> {
    let fan_in: usize = shape[1..].iter().product();
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).map_err(|e| Error::Config(e.to_string()))?;
    Tensor::from_fn(shape, |_| normal.sample(rng))
}

fn norm(store: &mut ParamStore, prefix: &str, c: usize) -> Result<Norm> {
    Ok(Norm {
        gamma: store.add(&format!("{prefix}.gamma"), Tensor::ones(&[c])?)?,
        beta: store.add(&format!("{prefix}.beta"), Tensor::zeros(&[c])?)?,
    })
}

impl Backbone {
    pub fn new(store: &mut ParamStore, spec: &BackboneSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem = store.add("stem.conv.weight", he_normal(&[spec.stem_channels, spec.in_channels, 3, 3], &mut rng)?)?;
        let stem_norm = norm(store, "stem.gn", spec.stem_channels)?;
        let mut blocks = Vec::new();
        let mut cin = spec.stem_channels;
        for (s, &cout) in spec.stage_channels.iter().enumerate() {
            for b in 0..spec.blocks_per_stage {
                let p = format!("stage{s}.block{b}");
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let conv1 = store.add(&format!("{p}.conv1.weight"), he_normal(&[cout, cin, 3, 3], &mut rng)?)?;
                let norm1 = norm(store, &format!("{p}.gn1"), cout)?;
                let conv2 = store.add(&format!("{p}.conv2.weight"), he_normal(&[cout, cout, 3, 3], &mut rng)?)?;
                let norm2 = norm(store, &format!("{p}.gn2"), cout)?;
                let attention = match &spec.attention {
                    Attention::None => None,
                    Attention::Scsa(cfg) => Some(Scsa::new(store, &format!("{p}.scsa"), cout, cfg, &mut rng)?),
                };
                let proj = if stride != 1 || cin != cout {
                    let w = store.add(&format!("{p}.proj.weight"), he_normal(&[cout, cin, 1, 1], &mut rng)?)?;
                    Some((w, norm(store, &format!("{p}.proj_gn"), cout)?))
                } else {
                    None
                };
                blocks.push(Block { conv1, norm1, conv2, norm2, stride, attention, proj });
                cin = cout;
            }
        }
        let bound = 1.0 / (cin as f64).sqrt();
        let head_w = store.add("head.weight", Tensor::uniform(&[spec.num_classes, cin], -bound, bound, &mut rng)?)?;
        let head_b = store.add("head.bias", Tensor::zeros(&[spec.num_classes])?)?;
        Ok(Self { spec: spec.clone(), stem, stem_norm, blocks, head_w, head_b })
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    fn conv(&self, tape: &mut Tape, store: &ParamStore, x: Var, w: ParamId, stride: usize) -> Result<Var> {
        let wv = tape.param(store, w);
        let k = store.value(w).shape()[2];
        tape.conv2d(x, wv, None, Conv2dGeometry { stride, padding: k / 2 })
    }

    fn group_norm(&self, tape: &mut Tape, store: &ParamStore, x: Var, n: Norm) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let flat = tape.reshape(x, &[shape[0], shape[1], shape[2] * shape[3]])?;
        let (g, b) = (tape.param(store, n.gamma), tape.param(store, n.beta));
        let y = tape.group_norm(flat, self.spec.gn_groups, g, b, 1e-5)?;
        tape.reshape(y, &shape)
    }

    /// Class logits `[B, num_classes]` for images `[B, C, H, W]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = self.conv(tape, store, x, self.stem, 2)?;
        h = self.group_norm(tape, store, h, self.stem_norm)?;
        h = tape.relu(h)?;
        for blk in &self.blocks {
            let mut r = self.conv(tape, store, h, blk.conv1, blk.stride)?;
            r = self.group_norm(tape, store, r, blk.norm1)?;
            r = tape.relu(r)?;
            r = self.conv(tape, store, r, blk.conv2, 1)?;
            r = self.group_norm(tape, store, r, blk.norm2)?;
            if let Some(att) = &blk.attention {
                r = att.forward(tape, store, r)?;
            }
            let shortcut = match blk.proj {
                Some((w, n)) => {
                    let s = self.conv(tape, store, h, w, blk.stride)?;
                    self.group_norm(tape, store, s, n)?
                }
                None => h,
            };
            let sum = tape.add(r, shortcut)?;
            h = tape.relu(sum)?;
        }
        let shape = tape.shape(h).to_vec();
        let flat = tape.reshape(h, &[shape[0], shape[1], shape[2] * shape[3]])?;
        let pooled = tape.mean_lastdim(flat)?;
        let (w, b) = (tape.param(store, self.head_w), tape.param(store, self.head_b));
        tape.linear(pooled, w, b)
    }
}
