pub mod basic;
pub mod conv;
pub mod norm;

pub use basic::softmax_in_place;
pub use conv::{conv_out_len, ConvGeometry};
