//! Multiply-accumulate counts for one SCSA evaluation on a single image.
//!
//! Conventions: every term counts one MAC per element-level multiply or
//! accumulate of the corresponding loop nest, with the following constant
//! factors dropped.
//!
//! * decouple: one accumulate per element of each averaged sequence, `(H + W) C`.
//! * conv: `sum_i k_i (H + W) C / K`; unshared kernels cost the same.
//! * gating: `H W C` for each gate applied to the full map (SMSA and PCSA each
//!   contribute one when enabled).
//! * compression: `P^2 H' W' C` window reads plus `H' W' C` divides, where
//!   `P^2 H' W'` is the summed window area actually visited.
//! * attention: `H' W' C` for the projections and token mean plus the
//!   `C^2 N / heads` query-key product.
//!
//! Normalization, sigmoid and softmax costs are linear in `(H + W) C` or
//! `C^2 / heads` and are left out.

use crate::config::{PoolingMode, ScsaConfig};
use crate::ops::pool::PoolWindows;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlopBreakdown {
    pub decouple_terms: u64,
    pub conv_terms: u64,
    pub gating_term: u64,
    pub compression_term: u64,
    pub attention_terms: u64,
    pub total: u64,
}

impl FlopBreakdown {
    fn finish(mut self) -> Self {
        self.total =
            self.decouple_terms + self.conv_terms + self.gating_term + self.compression_term + self.attention_terms;
        self
    }
}

/// Counts for an input of `c x h x w` under `cfg`.
pub fn flop_estimate(c: usize, h: usize, w: usize, cfg: &ScsaConfig) -> FlopBreakdown {
    let (c, hu, wu) = (c as u64, h as u64, w as u64);
    let mut f = FlopBreakdown::default();
    if cfg.enable_smsa {
        let k = cfg.smsa.k_groups.max(1) as u64;
        let ksum: u64 = cfg.smsa.kernel_sizes.iter().map(|&k| k as u64).sum();
        f.decouple_terms = (hu + wu) * c;
        f.conv_terms = ksum * (hu + wu) * (c / k);
        f.gating_term += hu * wu * c;
    }
    if cfg.enable_pcsa {
        let p = &cfg.pcsa;
        let (n, visited) = if p.progressive_compression {
            let (ph, pw) = (p.pooled_h.min(h).max(1), p.pooled_w.min(w).max(1));
            let windows = match p.pooling {
                PoolingMode::Adaptive => PoolWindows::adaptive(h, w, ph, pw),
                PoolingMode::Window => PoolWindows::strided(h, w, (ph, pw), (ph, pw)),
            };
            match windows {
                Ok(win) => ((win.out_h() * win.out_w()) as u64, win.total_area() as u64),
                Err(_) => ((h * w) as u64, 0),
            }
        } else {
            ((h * w) as u64, 0)
        };
        if p.progressive_compression {
            f.compression_term = visited * c + n * c;
        }
        f.attention_terms = n * c + c * c * n / p.heads.max(1) as u64;
        f.gating_term += hu * wu * c;
    }
    f.finish()
}

/// Counts under both readings of the pooling stage: adaptive pooling to the
/// configured grid, and a fixed window of that size with equal stride.
pub fn flop_estimate_both_poolings(c: usize, h: usize, w: usize, cfg: &ScsaConfig) -> (FlopBreakdown, FlopBreakdown) {
    let mut adaptive = cfg.clone();
    adaptive.pcsa.pooling = PoolingMode::Adaptive;
    let mut window = cfg.clone();
    window.pcsa.pooling = PoolingMode::Window;
    (flop_estimate(c, h, w, &adaptive), flop_estimate(c, h, w, &window))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluated_terms() {
        let f = flop_estimate(64, 56, 56, &ScsaConfig::default());
        assert_eq!(f.decouple_terms, 7_168);
        assert_eq!(f.attention_terms - 49 * 64, 200_704);
        assert_eq!(f.conv_terms, 24 * 112 * 16);
        assert_eq!(f.gating_term, 2 * 56 * 56 * 64);
        assert_eq!(f.compression_term, 56 * 56 * 64 + 49 * 64);
    }

    #[test]
    fn pcsa_off_drops_terms() {
        let cfg = ScsaConfig { enable_pcsa: false, ..ScsaConfig::default() };
        let f = flop_estimate(16, 28, 28, &cfg);
        assert_eq!((f.compression_term, f.attention_terms), (0, 0));
    }

    #[test]
    fn window_reading_differs() {
        let (a, w) = flop_estimate_both_poolings(16, 56, 56, &ScsaConfig::default());
        // the window reading keeps 8x8 tokens at 56x56
        assert_eq!(w.attention_terms, 64 * 16 + 16 * 16 * 64);
        assert!(w.total > a.total);
    }
}
