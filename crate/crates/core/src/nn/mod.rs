//! Differentiable building blocks on top of candle tensors (f64, CPU).
//!
//! Parameters live in a [`ParamStore`] keyed by dotted path names. Layers
//! hold handles to the store's variables, so optimiser updates through
//! [`candle_core::Var::set`] are visible to every layer that shares them.

mod attention;
mod layers;
pub mod ops;
mod params;
mod rnn;
mod transformer;

pub use attention::MultiHeadAttention;
pub use layers::{Conv1d, Embedding, LayerNorm, Linear};
pub use params::{Init, ParamStore};
pub use rnn::{BiGru, Lstm};
pub use transformer::{sinusoid_positions, FftBlock, FftStack};

use candle_core::{DType, Device};

pub const DTYPE: DType = DType::F64;

pub fn device() -> Device {
    Device::Cpu
}

/// `prefix.name`, or `name` when the prefix is empty.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
