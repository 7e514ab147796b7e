use alloc::vec;
use alloc::vec::Vec;

use crate::error::invalid;
use crate::latent::VideoLatent;
use crate::real::Real;
use crate::Result;

/// Half-pixel source coordinate for output index `d` when resampling an axis
/// of `len_in` samples to `len_out`: `s = (d + 0.5) * in/out - 0.5`, clamped
/// to `[0, in - 1]`. Returns the two neighbor indices and the blend fraction.
#[inline]
pub(crate) fn sample_axis(d: usize, len_in: usize, len_out: usize) -> (usize, usize, f64) {
    let scale = len_in as f64 / len_out as f64;
    let mut s = (d as f64 + 0.5) * scale - 0.5;
    let max = (len_in - 1) as f64;
    if s < 0.0 {
        s = 0.0;
    } else if s > max {
        s = max;
    }
    let i0 = s as usize;
    let i1 = (i0 + 1).min(len_in - 1);
    (i0, i1, s - i0 as f64)
}

/// Per-frame, per-channel bilinear resampling of the spatial plane to
/// `(h_out, w_out)` with half-pixel centers and edge clamping.
///
/// Each output sample blends its four neighbors as
/// `a + f*(b - a)` along columns and then rows, which reproduces constants
/// exactly and makes same-size resampling the identity.
pub fn bilinear_resample(z: &VideoLatent, h_out: usize, w_out: usize) -> Result<VideoLatent> {
    if h_out == 0 || w_out == 0 {
        return Err(invalid!("output dims must be >= 1, got {h_out}x{w_out}"));
    }
    let (data, dims) = bilinear_resample_raw(z.data(), z.dims(), h_out, w_out);
    VideoLatent::new(dims, data)
}

pub(crate) fn bilinear_resample_raw<R: Real>(
    x: &[R],
    dims: [usize; 5],
    h_out: usize,
    w_out: usize,
) -> (Vec<R>, [usize; 5]) {
    let [b_n, t_n, h_in, w_in, d_n] = dims;
    let rows: Vec<(usize, usize, R)> = (0..h_out)
        .map(|d| {
            let (i0, i1, f) = sample_axis(d, h_in, h_out);
            (i0, i1, R::from_f64(f))
        })
        .collect();
    let cols: Vec<(usize, usize, R)> = (0..w_out)
        .map(|d| {
            let (i0, i1, f) = sample_axis(d, w_in, w_out);
            (i0, i1, R::from_f64(f))
        })
        .collect();

    let frame_in = h_in * w_in * d_n;
    let frame_out = h_out * w_out * d_n;
    let mut out = vec![R::ZERO; b_n * t_n * frame_out];
    for bt in 0..b_n * t_n {
        let src = &x[bt * frame_in..(bt + 1) * frame_in];
        let dst = &mut out[bt * frame_out..(bt + 1) * frame_out];
        for (ho, &(h0, h1, fh)) in rows.iter().enumerate() {
            for (wo, &(w0, w1, fw)) in cols.iter().enumerate() {
                let base00 = (h0 * w_in + w0) * d_n;
                let base01 = (h0 * w_in + w1) * d_n;
                let base10 = (h1 * w_in + w0) * d_n;
                let base11 = (h1 * w_in + w1) * d_n;
                let o = (ho * w_out + wo) * d_n;
                for c in 0..d_n {
                    let x00 = src[base00 + c];
                    let x01 = src[base01 + c];
                    let x10 = src[base10 + c];
                    let x11 = src[base11 + c];
                    let top = x00 + fw * (x01 - x00);
                    let bot = x10 + fw * (x11 - x10);
                    dst[o + c] = top + fh * (bot - top);
                }
            }
        }
    }
    (out, [b_n, t_n, h_out, w_out, d_n])
}
