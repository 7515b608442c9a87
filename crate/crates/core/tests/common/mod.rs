#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scsa_core::{NormKind, NormPosition, ParamStore, PcsaConfig, PoolingMode, ScaleMode, SmsaConfig, Tensor};
use scsa_oracle::{Array, OraclePooling, PcsaParams, SmsaParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, &mut rng(seed)).unwrap()
}

pub fn array(t: &Tensor) -> Array {
    Array::new(t.shape(), t.data().to_vec())
}

fn lookup(store: &ParamStore) -> impl Fn(&str) -> Vec<f64> + '_ {
    move |name: &str| store.by_name(name).unwrap_or_else(|| panic!("missing {name}")).value.data().to_vec()
}

pub fn smsa_params(store: &ParamStore, prefix: &str, cfg: &SmsaConfig) -> SmsaParams {
    SmsaParams::from_lookup(
        &lookup(store),
        prefix,
        &cfg.kernel_sizes,
        cfg.conv_sharing == scsa_core::ConvSharing::Unshared,
        cfg.norm == NormKind::Bn,
        cfg.gn_position == NormPosition::PreConv,
        cfg.eps,
    )
}

pub fn pcsa_params(store: &ParamStore, prefix: &str, cfg: &PcsaConfig) -> PcsaParams {
    let pooling = match (cfg.progressive_compression, cfg.pooling) {
        (false, _) => OraclePooling::None,
        (true, PoolingMode::Adaptive) => OraclePooling::Adaptive(cfg.pooled_h, cfg.pooled_w),
        (true, PoolingMode::Window) => OraclePooling::Window(cfg.pooled_h, cfg.pooled_w),
    };
    PcsaParams::from_lookup(&lookup(store), prefix, pooling, cfg.heads, cfg.shuffle, cfg.scale_mode == ScaleMode::SqrtHw)
}

/// Moves every parameter away from its structured initial value so the
/// oracles see generic numbers.
pub fn jitter(store: &mut ParamStore, seed: u64) {
    let mut r = rng(seed);
    let ids = store.trainable_ids();
    for id in ids {
        let v = store.value(id).clone();
        let noise = Tensor::uniform(v.shape(), -0.3, 0.3, &mut r).unwrap();
        store.set_value(id, v.add(&noise).unwrap()).unwrap();
    }
}
