//! Forward and backward kernels for every primitive the model uses.
//!
//! Kernels are pure functions of their inputs. Every reduction runs in a
//! fixed order, so results do not depend on the rayon thread count.

mod activation;
mod conv;
mod linalg;
mod loss;
mod norm;
mod pool;
mod shape;

pub use activation::{
    gelu, gelu_backward, hardswish, hardswish_backward, hardswish_kink_distance, sigmoid, sigmoid_backward, softmax_rows,
    softmax_rows_backward,
};
pub use conv::{conv2d, conv2d_backward, ConvGrads};
pub use linalg::{bmm, bmm_backward, matmul, matmul_backward, transpose_last2};
pub use loss::{cross_entropy, cross_entropy_backward};
pub use norm::{
    batch_norm_eval, batch_norm_eval_backward, batch_norm_train, batch_norm_train_backward,
    BatchNormGrads, BatchNormState, BatchNormTrainOutput, BN_EPSILON, BN_MOMENTUM,
};
pub use pool::{
    adaptive_avg_pool, adaptive_avg_pool_backward, pool_window, upsample_bilinear,
    upsample_bilinear_backward,
};
pub use shape::{concat, concat_channels, slice_axis, slice_axis_backward, split, split_channels};
