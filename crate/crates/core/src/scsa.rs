//! Serial composition of the spatial and channel modules, and the named
//! ablation presets.

use rand::Rng;

use crate::config::{ConvSharing, NormKind, NormPosition, Ordering, PcsaConfig, ScaleMode, ScsaConfig, SmsaConfig};
use crate::error::{config_err, Result};
use crate::param::ParamStore;
use crate::pcsa::Pcsa;
use crate::smsa::{join, Smsa};
use crate::tape::{Tape, Var};

#[derive(Clone, Debug)]
pub struct Scsa {
    cfg: ScsaConfig,
    smsa: Option<Smsa>,
    pcsa: Option<Pcsa>,
}

impl Scsa {
    /// Registers `{prefix}.smsa.*` and `{prefix}.pcsa.*` for the enabled
    /// sub-modules.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        cfg: &ScsaConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate(Some(channels))?;
        let smsa = if cfg.enable_smsa {
            Some(Smsa::new(store, &join(prefix, "smsa"), channels, &cfg.smsa, rng)?)
        } else {
            None
        };
        let pcsa = if cfg.enable_pcsa {
            Some(Pcsa::new(store, &join(prefix, "pcsa"), channels, &cfg.pcsa)?)
        } else {
            None
        };
        Ok(Self { cfg: cfg.clone(), smsa, pcsa })
    }

    pub fn config(&self) -> &ScsaConfig {
        &self.cfg
    }

    pub fn smsa(&self) -> Option<&Smsa> {
        self.smsa.as_ref()
    }

    pub fn pcsa(&self) -> Option<&Pcsa> {
        self.pcsa.as_ref()
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let spatial = |tape: &mut Tape, v: Var| match &self.smsa {
            Some(m) => m.forward(tape, store, v),
            None => Ok(v),
        };
        let channel = |tape: &mut Tape, v: Var| match &self.pcsa {
            Some(m) => m.forward(tape, store, v),
            None => Ok(v),
        };
        match self.cfg.ordering {
            Ordering::SmsaFirst => {
                let s = spatial(tape, x)?;
                channel(tape, s)
            }
            Ordering::PcsaFirst => {
                let c = channel(tape, x)?;
                spatial(tape, c)
            }
        }
    }
}

/// A named configuration reproducing one ablation row.
#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub config: ScsaConfig,
}

/// Heads used by the multi-head ablation.
pub const ABLATION_HEADS: usize = 2;

pub fn ablation_registry() -> Vec<Preset> {
    let base = ScsaConfig::default;
    let with_smsa = |smsa: SmsaConfig| ScsaConfig { smsa, ..base() };
    let with_pcsa = |pcsa: PcsaConfig| ScsaConfig { pcsa, ..base() };
    vec![
        Preset { name: "baseline", description: "SMSA then PCSA, all defaults", config: base() },
        Preset {
            name: "wo-smsa",
            description: "channel attention only",
            config: ScsaConfig { enable_smsa: false, ..base() },
        },
        Preset {
            name: "wo-pcsa",
            description: "spatial attention only",
            config: ScsaConfig { enable_pcsa: false, ..base() },
        },
        Preset {
            name: "wo-pc",
            description: "channel attention over all H*W tokens",
            config: with_pcsa(PcsaConfig { progressive_compression: false, ..PcsaConfig::default() }),
        },
        Preset {
            name: "multihead-shuffle",
            description: "multi-head channel attention followed by channel shuffle",
            config: with_pcsa(PcsaConfig { heads: ABLATION_HEADS, shuffle: true, ..PcsaConfig::default() }),
        },
        Preset {
            name: "pcsa-prior",
            description: "PCSA applied before SMSA",
            config: ScsaConfig { ordering: Ordering::PcsaFirst, ..base() },
        },
        Preset {
            name: "gn-prior",
            description: "group norm before the 1D convolutions",
            config: with_smsa(SmsaConfig { gn_position: NormPosition::PreConv, ..SmsaConfig::default() }),
        },
        Preset {
            name: "gn-to-bn",
            description: "batch norm instead of group norm",
            config: with_smsa(SmsaConfig { norm: NormKind::Bn, ..SmsaConfig::default() }),
        },
        Preset {
            name: "unshared",
            description: "separate convolutions for the H and W branches",
            config: with_smsa(SmsaConfig { conv_sharing: ConvSharing::Unshared, ..SmsaConfig::default() }),
        },
        Preset {
            name: "scale-sqrt-hw",
            description: "attention logits scaled by sqrt(H'*W')",
            config: with_pcsa(PcsaConfig { scale_mode: ScaleMode::SqrtHw, ..PcsaConfig::default() }),
        },
        Preset { name: "g1-3", description: "one sub-feature, kernel 3", config: with_smsa(SmsaConfig::with_kernels(&[3])) },
        Preset { name: "g1-7", description: "one sub-feature, kernel 7", config: with_smsa(SmsaConfig::with_kernels(&[7])) },
        Preset {
            name: "g2-3-7",
            description: "two sub-features, kernels 3 and 7",
            config: with_smsa(SmsaConfig::with_kernels(&[3, 7])),
        },
    ]
}

pub fn preset(name: &str) -> Result<ScsaConfig> {
    let all = ablation_registry();
    match all.iter().find(|p| p.name == name) {
        Some(p) => Ok(p.config.clone()),
        None => {
            let names: Vec<_> = all.iter().map(|p| p.name).collect();
            Err(config_err!("unknown preset {name:?}; valid presets: {}", names.join(", ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn registry_shape() {
        let r = ablation_registry();
        assert_eq!(r.len(), 13);
        let names: HashSet<_> = r.iter().map(|p| p.name).collect();
        assert_eq!(names.len(), 13);
        assert_eq!(r[0].config, ScsaConfig::default());
        for p in &r {
            p.config.validate(Some(64)).unwrap_or_else(|e| panic!("{}: {e}", p.name));
        }
    }

    #[test]
    fn unknown_preset_lists_names() {
        let err = preset("nope").unwrap_err().to_string();
        assert!(err.contains("g2-3-7") && err.contains("baseline"));
        assert_eq!(preset("g1-7").unwrap().smsa.kernel_sizes, vec![7]);
    }
}
