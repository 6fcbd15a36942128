//! Differentiable tensor primitives with explicit forward/backward pairs.
//!
//! Layout conventions: image batches are `(batch, channels, height, width)`,
//! volumetric batches are `(batch, channels, depth, height, width)`, dense
//! activations are `(batch, features)`. Backward functions take the same
//! inputs the forward saw plus the upstream gradient and return input and
//! parameter gradients.

mod activation;
mod conv2d;
mod conv3d;
mod dense;
mod dropout;
mod norm;
mod pool;
mod resize;

pub use activation::{leaky_relu, leaky_relu_backward, sigmoid, sigmoid_backward, LEAKY_SLOPE};
pub use conv2d::{conv2d_backward, conv2d_forward, conv2d_output_shape, Conv2dGrads, Padding};
pub use conv3d::{conv3d_backward, conv3d_forward, conv3d_output_shape, Conv3dGrads};
pub use dense::{dense_backward, dense_forward, DenseGrads};
pub use dropout::{dropout_backward, dropout_forward};
pub use norm::{l2_normalize_rows, l2_normalize_rows_backward};
pub use pool::{maxpool2d_backward, maxpool2d_forward, maxpool2d_output_shape, PoolCache};
pub use resize::{bilinear_resize_backward, bilinear_resize_batch, bilinear_resize_forward};
