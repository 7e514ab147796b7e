//! Numeric core for hierarchical global-local window attention over video
//! latents.
//!
//! A video latent is a dense 5-axis array `(B, T, H, W, D)`. Full
//! self-attention over all `T*H*W` tokens is quadratic in spatial size; this
//! crate implements a three-branch decomposition that attends
//!
//! * locally, inside a `K x K` spatial window grid (windows alternate with a
//!   `(K+1) x (K+1)` grid on odd layers so adjacent layers' boundaries
//!   interleave),
//! * hierarchically, inside `K/2 x K/2` coarse windows whose contents are
//!   compressed 2x before attention, and
//! * globally, over a `k`-fold spatially compressed copy of the whole latent,
//!
//! and blends the branches with timestep-conditioned sigmoid gates. Shared
//! base projection weights serve all branches; the global and hierarchical
//! branches specialize them with low-rank residual adapters.
//!
//! The crate is `no_std` + `alloc`: every operation is a pure function over
//! immutable inputs, and all float math is pure Rust ([`libm`] plus a
//! deterministic polynomial exponential on the softmax hot path), so results
//! are bitwise identical for a given input on every platform.
//!
//! Supporting machinery lives alongside the model itself:
//!
//! * [`oracle`] — a full-attention reference block plus brute-force
//!   resampling, used to validate the decomposition end to end,
//! * [`grad`] — a minimal reverse-mode tape over the operation set, checked
//!   against central finite differences,
//! * [`cost`] — exact integer attention-map cost accounting, the closed-form
//!   speedup ratio `4K^4 / (5K^2 + 4)`, and instrumented FLOP counters,
//! * [`metrics`] — the detail-loss metric summing reconstruction MSE over
//!   downsample factors 8/16/32.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod attention;
pub mod block;
pub mod cost;
mod error;
pub mod grad;
pub mod latent;
mod mat;
pub mod metrics;
pub mod ops;
pub mod oracle;
mod real;
pub mod rng;

pub use error::{Error, Result};
pub use latent::{aggregate, make_partition, partition, random_latent, PartitionSpec, VideoLatent};
pub use mat::Mat;
pub use real::Real;
