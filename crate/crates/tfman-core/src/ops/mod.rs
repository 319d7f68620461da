//! Forward kernels and their adjoints.
//!
//! Everything here is a pure function over immutable tensors. Parallel loops
//! split only over independent output slices and every reduction runs in a
//! fixed order, so results are bitwise identical at any thread count. The
//! tape in [`crate::tape`] records these ops and replays the adjoints.

mod activations;
mod conv;
mod linalg;
mod reduce;
mod resize;
mod shape_ops;

pub use activations::{prelu, prelu_grad_input, prelu_grad_slope, softmax, softmax_grad};
pub use conv::{
    conv2d, conv2d_grad_input, conv2d_grad_kernel, conv_out_extent, conv_transpose2d,
    conv_transpose2d_grad_input, conv_transpose2d_grad_kernel,
};
pub use linalg::{matmul, matmul_grad_a, matmul_grad_b, transpose2};
pub use reduce::{
    global_avg_pool, global_avg_pool_grad, l1_loss, l1_loss_grad, sum_all, weighted_sum,
};
pub use resize::{bilinear_resize, bilinear_resize_grad};
pub use shape_ops::{
    add_channel_bias, channel_bias_grad, concat_channels, cover_winners, crop3, crop3_grad,
    div_const_map, div_const_map_grad, mul_channels, mul_channels_grad_factors,
    mul_channels_grad_input, paste_seq, paste_seq_grad_block, zip_elementwise, Rect,
};
