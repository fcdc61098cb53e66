// Negated float comparisons are how NaN is rejected; index loops mirror the
// formulas in numeric kernels.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adversary;
pub mod channel;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod objective;
pub mod params;
pub mod trainer;

pub use jscc_tensor as tensor;

/// Single-precision aliases used by the command-line tool.
pub type Codec32 = codec::Codec<f32>;
pub type Adversary32 = adversary::Adversary<f32>;
pub type TrainState32 = trainer::TrainState<f32>;
