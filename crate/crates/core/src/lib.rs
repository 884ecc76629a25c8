//! Sequence-to-one lane segmentation: a UNet encoder/decoder with a
//! spatial-temporal attention module wrapped around an embedded LSTM or GRU.

pub mod attention;
pub mod backbone;
pub mod checkpoint;
pub mod complexity;
pub mod config;
pub mod data;
pub mod error;
pub mod loss;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod recurrent;
pub mod tensor;
pub mod trainer;
pub mod viz;

pub use config::{AttentionVariant, ExtractorKind, ModelConfig};
pub use error::{Error, Result};
pub use mask::LaneMask;
pub use model::SequenceModel;
pub use tensor::{Real, Tensor};
