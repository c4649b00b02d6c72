//! Hierarchical multi-scale prosody TTS: feature extraction, acoustic model,
//! variational prosody encoder, adversarial training, sampling and
//! prosody-diversity evaluation.

pub mod array_io;
pub mod audio;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod model;
pub mod nn;
pub mod toy;
pub mod training;

pub use config::TrainingConfig;
pub use error::{Error, Result};
pub use inference::{SamplingMode, SamplingSpec};
pub use model::{TtsModel, Variant};
