//! Forward and backward kernels on raw NCHW buffers.
//!
//! These are the numerical primitives behind the autograd graph. Each
//! backward routine accumulates into caller-provided gradient buffers.

pub mod conv;
pub mod deform;
pub mod resample;
pub mod sobel;

pub use conv::{conv2d_backward, conv2d_forward, ConvGeometry};
pub use deform::{deform_conv2d_backward, deform_conv2d_forward, DeformGradients};
pub use resample::{bilinear_sample, depth_to_space, depth_to_space_backward, resize_bilinear, resize_bilinear_backward};
