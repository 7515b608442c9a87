//! Hyperparameters and ablation toggles of the attention modules.
//!
//! All structs deserialize from partial JSON: missing fields take the
//! defaults below and unknown fields are rejected.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    #[default]
    Gn,
    Bn,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvSharing {
    #[default]
    Shared,
    Unshared,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPosition {
    #[default]
    PostConv,
    PreConv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmsaConfig {
    /// Number of sub-features; also the group count of the normalization.
    pub k_groups: usize,
    /// One odd kernel size per sub-feature.
    pub kernel_sizes: Vec<usize>,
    pub norm: NormKind,
    pub conv_sharing: ConvSharing,
    pub gn_position: NormPosition,
    pub eps: f64,
    pub bn_momentum: f64,
    pub conv_bias: bool,
}

impl Default for SmsaConfig {
    fn default() -> Self {
        Self {
            k_groups: 4,
            kernel_sizes: vec![3, 5, 7, 9],
            norm: NormKind::Gn,
            conv_sharing: ConvSharing::Shared,
            gn_position: NormPosition::PostConv,
            eps: 1e-5,
            bn_momentum: 0.1,
            conv_bias: false,
        }
    }
}

impl SmsaConfig {
    /// Branch layout with one sub-feature per kernel size.
    pub fn with_kernels(kernels: &[usize]) -> Self {
        Self { k_groups: kernels.len(), kernel_sizes: kernels.to_vec(), ..Self::default() }
    }

    pub fn validate(&self, channels: Option<usize>) -> Result<()> {
        if self.k_groups == 0 {
            return Err(config_err!("smsa.k_groups must be >= 1"));
        }
        if self.kernel_sizes.len() != self.k_groups {
            return Err(config_err!(
                "smsa.kernel_sizes has {} entries but smsa.k_groups is {}",
                self.kernel_sizes.len(),
                self.k_groups
            ));
        }
        if let Some(k) = self.kernel_sizes.iter().find(|&&k| k % 2 == 0) {
            return Err(config_err!("smsa.kernel_sizes: kernel {k} is not odd"));
        }
        if self.eps <= 0.0 {
            return Err(config_err!("smsa.eps must be positive"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(config_err!("smsa.bn_momentum must lie in [0, 1]"));
        }
        if let Some(c) = channels {
            if c % self.k_groups != 0 {
                return Err(config_err!("smsa.k_groups = {} does not divide {c} channels", self.k_groups));
            }
        }
        Ok(())
    }
}

/// How the spatial plane is compressed before channel attention.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingMode {
    /// Adaptive average pooling to `pooled_h x pooled_w`.
    #[default]
    Adaptive,
    /// Kernel `pooled_h x pooled_w` with equal stride, no padding.
    Window,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// Divide logits by the square root of the channel count.
    #[default]
    SqrtC,
    /// Divide logits by the square root of the token count.
    SqrtHw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcsaConfig {
    pub pooled_h: usize,
    pub pooled_w: usize,
    pub pooling: PoolingMode,
    pub scale_mode: ScaleMode,
    pub heads: usize,
    pub shuffle: bool,
    pub progressive_compression: bool,
}

impl Default for PcsaConfig {
    fn default() -> Self {
        Self {
            pooled_h: 7,
            pooled_w: 7,
            pooling: PoolingMode::Adaptive,
            scale_mode: ScaleMode::SqrtC,
            heads: 1,
            shuffle: false,
            progressive_compression: true,
        }
    }
}

impl PcsaConfig {
    pub fn validate(&self, channels: Option<usize>) -> Result<()> {
        if self.pooled_h == 0 || self.pooled_w == 0 {
            return Err(config_err!("pcsa.pooled_h and pcsa.pooled_w must be >= 1"));
        }
        if self.heads == 0 {
            return Err(config_err!("pcsa.heads must be >= 1"));
        }
        if self.shuffle && self.heads < 2 {
            return Err(config_err!("pcsa.shuffle requires pcsa.heads > 1"));
        }
        if let Some(c) = channels {
            if c % self.heads != 0 {
                return Err(config_err!("pcsa.heads = {} does not divide {c} channels", self.heads));
            }
        }
        Ok(())
    }

    /// Compressed token grid for an `h x w` input; pooled extents clamp to
    /// the input when the map is smaller than the target.
    pub fn pooled_extent(&self, h: usize, w: usize) -> (usize, usize) {
        if !self.progressive_compression {
            return (h, w);
        }
        let (ph, pw) = (self.pooled_h.min(h), self.pooled_w.min(w));
        match self.pooling {
            PoolingMode::Adaptive => (ph, pw),
            PoolingMode::Window => (h / ph, w / pw),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    #[default]
    SmsaFirst,
    PcsaFirst,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScsaConfig {
    pub smsa: SmsaConfig,
    pub pcsa: PcsaConfig,
    pub ordering: Ordering,
    pub enable_smsa: bool,
    pub enable_pcsa: bool,
}

impl Default for ScsaConfig {
    fn default() -> Self {
        Self {
            smsa: SmsaConfig::default(),
            pcsa: PcsaConfig::default(),
            ordering: Ordering::SmsaFirst,
            enable_smsa: true,
            enable_pcsa: true,
        }
    }
}

impl ScsaConfig {
    pub fn validate(&self, channels: Option<usize>) -> Result<()> {
        if !self.enable_smsa && !self.enable_pcsa {
            return Err(config_err!("enable_smsa and enable_pcsa cannot both be false"));
        }
        if self.enable_smsa {
            self.smsa.validate(channels)?;
        }
        if self.enable_pcsa {
            self.pcsa.validate(channels)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ScsaConfig::default().validate(Some(64)).unwrap();
    }

    #[test]
    fn error_messages_name_keys() {
        let mut c = SmsaConfig::default();
        c.kernel_sizes = vec![3, 5];
        assert!(c.validate(None).unwrap_err().to_string().contains("smsa.kernel_sizes"));
        c.kernel_sizes = vec![3, 5, 7, 8];
        assert!(c.validate(None).unwrap_err().to_string().contains("not odd"));
        let c = SmsaConfig::default();
        assert!(c.validate(Some(6)).unwrap_err().to_string().contains("smsa.k_groups"));
        let p = PcsaConfig { shuffle: true, ..PcsaConfig::default() };
        assert!(p.validate(None).unwrap_err().to_string().contains("pcsa.shuffle"));
    }

    #[test]
    fn both_disabled_rejected() {
        let c = ScsaConfig { enable_smsa: false, enable_pcsa: false, ..ScsaConfig::default() };
        assert!(c.validate(Some(8)).is_err());
    }

    #[test]
    fn pooled_extent_clamps() {
        let p = PcsaConfig::default();
        assert_eq!(p.pooled_extent(56, 56), (7, 7));
        assert_eq!(p.pooled_extent(4, 9), (4, 7));
        let w = PcsaConfig { pooling: PoolingMode::Window, ..PcsaConfig::default() };
        assert_eq!(w.pooled_extent(56, 16), (8, 2));
        assert_eq!(w.pooled_extent(4, 4), (1, 1));
        let off = PcsaConfig { progressive_compression: false, ..PcsaConfig::default() };
        assert_eq!(off.pooled_extent(12, 10), (12, 10));
    }
}
