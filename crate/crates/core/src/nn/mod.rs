//! Minimal differentiable layers with hand-written backward passes.

pub mod activation;
pub mod conv;
pub mod gradcheck;
pub mod init;
pub mod loss;
pub mod pool;

pub use activation::{gated_activation, gated_activation_backward, relu, relu_backward, sigmoid};
pub use conv::{ConvGrads, ConvParams, ConvSpec};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use init::{glorot_bound, glorot_uniform};
pub use loss::{softmax, softmax_cross_entropy};
pub use pool::{adaptive_avg_pool1d, adaptive_avg_pool1d_backward, maxpool1d, maxpool1d_backward, MaxPoolOutput};
