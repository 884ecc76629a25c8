//! Differentiable primitives with explicit forward/backward pairs.

pub mod activation;
pub mod conv;
pub mod init;
pub mod linear;
pub mod param;
pub mod pool;
pub mod upsample;

pub use activation::{sigmoid, softmax, softmax_slice, softmax_slice_backward};
pub use conv::{conv2d, conv2d_backward, Activation, ConvGrads, ConvSpec};
pub use init::init_parameters;
pub use linear::{linear, linear_backward, LinearGrads};
pub use param::{ParamStore, Parameter};
pub use pool::{maxpool2x2, maxpool2x2_backward};
pub use upsample::{upsample_bilinear_2x, upsample_bilinear_2x_backward};
