//! Spatial and channel synergistic attention on a small reverse-mode
//! autodiff engine.
//!
//! [`Smsa`] gates a feature map with multi-scale 1D spatial attention,
//! [`Pcsa`] gates its channels with self-attention over a pooled token grid,
//! and [`Scsa`] runs the two in sequence. All of them record onto a [`Tape`]
//! whose backward pass is checked by [`gradcheck`](gradcheck::gradcheck).

pub mod config;
pub mod error;
pub mod flops;
pub mod gradcheck;
pub mod io;
pub mod ops;
pub mod param;
pub mod pcsa;
pub mod scsa;
pub mod smsa;
pub mod tape;
pub mod tensor;

pub use config::{
    ConvSharing, NormKind, NormPosition, Ordering, PcsaConfig, PoolingMode, ScaleMode, ScsaConfig, SmsaConfig,
};
pub use error::{Error, Result};
pub use flops::{flop_estimate, flop_estimate_both_poolings, FlopBreakdown};
pub use gradcheck::{gradcheck, GradcheckConfig, GradcheckReport};
pub use param::{ParamId, ParamStore, Parameter};
pub use pcsa::{Pcsa, PcsaTrace};
pub use scsa::{ablation_registry, preset, Preset, Scsa};
pub use smsa::{Smsa, SmsaTrace};
pub use tape::{Gradients, Mode, OpKind, Tape, Var};
pub use tensor::{DType, Tensor};
