//! Forward numeric primitives.
//!
//! The kernels here are generic over [`crate::Real`] so the single-precision
//! model path and the double-precision differentiation path share one
//! implementation. Per-element computation order is fixed, which makes every
//! result bitwise deterministic.

mod conv;
mod dense;
mod resample;

pub use conv::{conv3d, depthwise_compress, depthwise_compress_ceil, DepthwiseKernel2D, Kernel3D};
pub use dense::{
    layer_norm_rows, matmul, mlp_forward, sigmoid64, silu, sin_encode, softmax, softmax_rows,
    LayerNorm, Mlp2,
};
pub use resample::bilinear_resample;

pub(crate) use conv::{conv3d_raw, depthwise_compress_raw};
pub(crate) use dense::{dot, dot4, silu_scalar, softmax_slice};
pub(crate) use resample::{bilinear_resample_raw, sample_axis};
