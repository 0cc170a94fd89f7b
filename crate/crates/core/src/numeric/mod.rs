//! Dense `f64` tensors and the primitive operators the synchronized layers
//! are built from.

mod attention;
mod conv;
mod norm;
mod sample;
mod tensor;

pub use attention::{attention, attention_raw, attention_raw_backward};
pub use conv::{conv2d_valid, conv2d_valid_backward_raw, conv2d_valid_raw, zero_pad, Conv2dKernel};
pub use norm::{
    group_norm, group_norm_mchw, group_norm_mchw_backward, GroupNormCache, GroupNormSpec, DEFAULT_EPS,
};
pub use sample::{bilinear_at, bilinear_sample, BilinearTaps};
pub use tensor::Tensor;
