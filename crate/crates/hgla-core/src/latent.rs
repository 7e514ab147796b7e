//! Video latent arrays and spatial window partitioning.
//!
//! A [`VideoLatent`] is a dense row-major array over the axes
//! `(B, T, H, W, D)`: batch, frames, height, width, channels. That axis
//! order is fixed for the whole crate. [`PartitionSpec`] tiles the `(H, W)`
//! plane with a `P x P` grid of near-equal windows; [`partition`] and
//! [`aggregate`] move between the full latent and its windows without loss.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape_err};
use crate::rng::SplitMix64;
use crate::Result;

/// Dense 5-axis array `(B, T, H, W, D)`, row-major, single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoLatent {
    dims: [usize; 5],
    data: Vec<f32>,
}

impl VideoLatent {
    /// Builds a latent from raw data; the length must match the dims product
    /// and every element must be finite.
    pub fn new(dims: [usize; 5], data: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(invalid!("all dims must be >= 1, got {dims:?}"));
        }
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(shape_err!(
                "dims {dims:?} need {len} elements, got {}",
                data.len()
            ));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(crate::Error::NonFinite(String::from(
                "latent data contains NaN or infinity",
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 5]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(invalid!("all dims must be >= 1, got {dims:?}"));
        }
        let len = dims.iter().product();
        Ok(Self {
            dims,
            data: vec![0.0; len],
        })
    }

    pub fn dims(&self) -> [usize; 5] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn frames(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    pub fn channels(&self) -> usize {
        self.dims[4]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, b: usize, t: usize, h: usize, w: usize, d: usize) -> usize {
        let [_, tt, hh, ww, dd] = self.dims;
        (((b * tt + t) * hh + h) * ww + w) * dd + d
    }

    #[inline]
    pub fn get(&self, b: usize, t: usize, h: usize, w: usize, d: usize) -> f32 {
        self.data[self.index(b, t, h, w, d)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, t: usize, h: usize, w: usize, d: usize, v: f32) {
        let i = self.index(b, t, h, w, d);
        self.data[i] = v;
    }

    /// Tokens of one batch item as a contiguous `(T*H*W) x D` slice.
    pub fn batch_tokens(&self, b: usize) -> &[f32] {
        let stride = self.len() / self.batch();
        &self.data[b * stride..(b + 1) * stride]
    }

    pub fn batch_tokens_mut(&mut self, b: usize) -> &mut [f32] {
        let stride = self.len() / self.batch();
        &mut self.data[b * stride..(b + 1) * stride]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference to another latent of the same
    /// shape.
    pub fn max_abs_diff(&self, other: &VideoLatent) -> Result<f32> {
        if self.dims != other.dims {
            return Err(shape_err!(
                "cannot compare latents of dims {:?} and {:?}",
                self.dims,
                other.dims
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }
}

/// Decomposition of `(H, W)` into a `P x P` grid of integer windows.
///
/// Boundaries follow the floor rule `bound[i] = floor(i * extent / P)`, so
/// window extents along an axis differ by at most one and tile the axis
/// exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionSpec {
    parts: usize,
    row_bounds: Vec<usize>,
    col_bounds: Vec<usize>,
}

impl PartitionSpec {
    pub fn parts(&self) -> usize {
        self.parts
    }

    pub fn row_bounds(&self) -> &[usize] {
        &self.row_bounds
    }

    pub fn col_bounds(&self) -> &[usize] {
        &self.col_bounds
    }

    pub fn height(&self) -> usize {
        *self.row_bounds.last().unwrap()
    }

    pub fn width(&self) -> usize {
        *self.col_bounds.last().unwrap()
    }

    /// Row range of window row `i`.
    pub fn row_range(&self, i: usize) -> core::ops::Range<usize> {
        self.row_bounds[i]..self.row_bounds[i + 1]
    }

    /// Column range of window column `j`.
    pub fn col_range(&self, j: usize) -> core::ops::Range<usize> {
        self.col_bounds[j]..self.col_bounds[j + 1]
    }
}

/// Builds the `P x P` partition of an `H x W` plane.
///
/// Boundaries are `floor(i * H / P)` for rows and `floor(j * W / P)` for
/// columns, which spreads any remainder across the later windows.
pub fn make_partition(height: usize, width: usize, parts: usize) -> Result<PartitionSpec> {
    let limit = height.min(width);
    if parts < 1 || parts > limit {
        return Err(invalid!(
            "parts must satisfy 1 <= parts <= min(H, W) = {limit}, got {parts}"
        ));
    }
    let bounds =
        |extent: usize| -> Vec<usize> { (0..=parts).map(|i| i * extent / parts).collect() };
    Ok(PartitionSpec {
        parts,
        row_bounds: bounds(height),
        col_bounds: bounds(width),
    })
}

/// Splits a latent into the spec's `P^2` windows, in row-major window order.
/// Each window keeps the full batch, frame and channel extents.
pub fn partition(z: &VideoLatent, spec: &PartitionSpec) -> Result<Vec<VideoLatent>> {
    if spec.height() != z.height() || spec.width() != z.width() {
        return Err(shape_err!(
            "partition built for {}x{} cannot slice a latent of {}x{}",
            spec.height(),
            spec.width(),
            z.height(),
            z.width()
        ));
    }
    let [b_n, t_n, _, _, d_n] = z.dims();
    let p = spec.parts();
    let mut windows = Vec::with_capacity(p * p);
    for wi in 0..p {
        for wj in 0..p {
            let rows = spec.row_range(wi);
            let cols = spec.col_range(wj);
            let (wh, ww) = (rows.len(), cols.len());
            let mut data = Vec::with_capacity(b_n * t_n * wh * ww * d_n);
            for b in 0..b_n {
                for t in 0..t_n {
                    for h in rows.clone() {
                        let start = z.index(b, t, h, cols.start, 0);
                        data.extend_from_slice(&z.data()[start..start + ww * d_n]);
                    }
                }
            }
            windows.push(VideoLatent {
                dims: [b_n, t_n, wh, ww, d_n],
                data,
            });
        }
    }
    Ok(windows)
}

/// Reassembles windows produced by [`partition`]; the exact inverse.
pub fn aggregate(windows: &[VideoLatent], spec: &PartitionSpec) -> Result<VideoLatent> {
    let p = spec.parts();
    if windows.len() != p * p {
        return Err(shape_err!(
            "expected {} windows for a {p}x{p} partition, got {}",
            p * p,
            windows.len()
        ));
    }
    let [b_n, t_n, _, _, d_n] = windows[0].dims();
    let mut out = VideoLatent::zeros([b_n, t_n, spec.height(), spec.width(), d_n])?;
    for wi in 0..p {
        for wj in 0..p {
            let win = &windows[wi * p + wj];
            let rows = spec.row_range(wi);
            let cols = spec.col_range(wj);
            let expect = [b_n, t_n, rows.len(), cols.len(), d_n];
            if win.dims() != expect {
                return Err(shape_err!(
                    "window ({wi},{wj}) has dims {:?}, expected {expect:?}",
                    win.dims()
                ));
            }
            let ww = cols.len();
            for b in 0..b_n {
                for t in 0..t_n {
                    for (local_h, h) in rows.clone().enumerate() {
                        let src = win.index(b, t, local_h, 0, 0);
                        let dst = out.index(b, t, h, cols.start, 0);
                        out.data[dst..dst + ww * d_n]
                            .copy_from_slice(&win.data()[src..src + ww * d_n]);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Deterministic random latent: values uniform in `[-1, 1)` drawn from a
/// [`SplitMix64`] stream seeded with `seed`, filled in row-major order. Same
/// `(dims, seed)` gives bitwise-identical output on every platform.
pub fn random_latent(dims: [usize; 5], seed: u64) -> Result<VideoLatent> {
    if dims.contains(&0) {
        return Err(invalid!("all dims must be >= 1, got {dims:?}"));
    }
    let mut rng = SplitMix64::new(seed);
    let len = dims.iter().product();
    let data = (0..len).map(|_| rng.next_f32()).collect();
    Ok(VideoLatent { dims, data })
}
