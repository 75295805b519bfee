//! Vector-neuron layers and the dual-output point encoder.

pub mod encoder;
pub mod feature;
pub mod layers;

pub use encoder::{centered_input, centroid, encode, EncoderConfig, EncoderOutput, VnEncoder, VnEncoderCache};
pub use feature::{InvFeature, VnFeature};
pub use layers::{
    invariantize, max_norm_pool, vn_edge_conv, vn_linear, vn_linear_backward, vn_nonlinearity,
    vn_nonlinearity_backward, EdgeConv, Invariantizer,
};
