//! Forward and backward kernels on plain tensors.
//!
//! Every kernel here is a pure function. The [`Tape`](crate::tape::Tape)
//! wraps them to record the graph; tests and oracles can call them directly.

pub mod activation;
pub mod conv;
pub mod gating;
pub mod layout;
pub mod linalg;
pub mod loss;
pub mod norm;
pub mod pool;

pub use activation::{relu, sigmoid, softmax_lastdim};
pub use conv::{conv2d, dwconv1d};
pub use gating::{broadcast_mul3, channel_gate};
pub use layout::{channel_shuffle, channel_split, channel_unshuffle, concat_channels, slice_channels};
pub use linalg::{batched_matmul, linear, per_channel_affine, transpose_last2};
pub use loss::softmax_cross_entropy;
pub use norm::{batch_norm1d, group_norm, BatchNormStats};
pub use pool::{adaptive_avg_pool2d, avg_pool2d, avg_pool_over_height, avg_pool_over_width, mean_lastdim};
