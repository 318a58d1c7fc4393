//! Layer primitives: forward passes and their reverse-mode gradients.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod init;
pub mod loss;
pub mod pool;
pub mod shape;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward, softmax, softmax_backward};
pub use conv::{
    conv1x1, conv1x1_backward, conv2d, conv2d_backward, conv2d_same, conv2d_same_backward,
};
pub use dense::{dense, dense_backward};
pub use init::xavier_uniform_init;
pub use loss::{
    binary_cross_entropy_mean, binary_cross_entropy_mean_backward, categorical_cross_entropy,
    categorical_cross_entropy_backward, LOG_CLAMP_EPS,
};
pub use pool::{maxpool2d, maxpool2d_backward, upsample_nearest_2x, upsample_nearest_2x_backward};
pub use shape::{
    concat, concat_backward, concat_channels, concat_channels_backward, flatten, flatten_backward,
};
