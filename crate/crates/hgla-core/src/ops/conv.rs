use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape_err};
use crate::latent::VideoLatent;
use crate::real::Real;
use crate::Result;

/// Channel-wise `k x k` convolution with stride `k`: one kernel per channel,
/// no cross-channel mixing. Weight layout is `[channel][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseKernel2D {
    k: usize,
    channels: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl DepthwiseKernel2D {
    /// Default construction: every weight `1/(k*k)` and zero bias, so the
    /// kernel is exactly `k x k` average pooling.
    pub fn averaging(k: usize, channels: usize) -> Result<Self> {
        if k == 0 || channels == 0 {
            return Err(invalid!(
                "kernel size and channels must be >= 1, got k={k}, channels={channels}"
            ));
        }
        let w = 1.0 / (k * k) as f32;
        Ok(Self {
            k,
            channels,
            weights: vec![w; channels * k * k],
            bias: vec![0.0; channels],
        })
    }

    pub fn new(k: usize, channels: usize, weights: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if k == 0 || channels == 0 {
            return Err(invalid!(
                "kernel size and channels must be >= 1, got k={k}, channels={channels}"
            ));
        }
        if weights.len() != channels * k * k || bias.len() != channels {
            return Err(shape_err!(
                "depthwise kernel k={k}, channels={channels} needs {} weights and {channels} biases, got {}/{}",
                channels * k * k,
                weights.len(),
                bias.len()
            ));
        }
        Ok(Self {
            k,
            channels,
            weights,
            bias,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }
}

/// Strided depthwise compression of the spatial plane, frame by frame.
/// Requires `k | H` and `k | W`; output dims are `(B, T, H/k, W/k, D)`.
pub fn depthwise_compress(z: &VideoLatent, kern: &DepthwiseKernel2D) -> Result<VideoLatent> {
    check_channels(z, kern.channels)?;
    let k = kern.k;
    if !z.height().is_multiple_of(k) {
        return Err(invalid!(
            "height {} is not divisible by compression factor {k}",
            z.height()
        ));
    }
    if !z.width().is_multiple_of(k) {
        return Err(invalid!(
            "width {} is not divisible by compression factor {k}",
            z.width()
        ));
    }
    let (data, dims) =
        depthwise_compress_raw(z.data(), z.dims(), &kern.weights, &kern.bias, k, false);
    VideoLatent::new(dims, data)
}

/// Strided depthwise compression with ceiling output size: windows that run
/// past the edge replicate the border samples. Used for the odd-sized coarse
/// windows produced by shifted partitions.
pub fn depthwise_compress_ceil(z: &VideoLatent, kern: &DepthwiseKernel2D) -> Result<VideoLatent> {
    check_channels(z, kern.channels)?;
    let (data, dims) =
        depthwise_compress_raw(z.data(), z.dims(), &kern.weights, &kern.bias, kern.k, true);
    VideoLatent::new(dims, data)
}

fn check_channels(z: &VideoLatent, channels: usize) -> Result<()> {
    if z.channels() != channels {
        return Err(shape_err!(
            "kernel has {channels} channels but latent has {}",
            z.channels()
        ));
    }
    Ok(())
}

pub(crate) fn depthwise_compress_raw<R: Real>(
    x: &[R],
    dims: [usize; 5],
    weights: &[R],
    bias: &[R],
    k: usize,
    ceil_mode: bool,
) -> (Vec<R>, [usize; 5]) {
    let [b_n, t_n, h_in, w_in, d_n] = dims;
    let (h_out, w_out) = if ceil_mode {
        (h_in.div_ceil(k), w_in.div_ceil(k))
    } else {
        (h_in / k, w_in / k)
    };
    let mut out = vec![R::ZERO; b_n * t_n * h_out * w_out * d_n];
    let frame_in = h_in * w_in * d_n;
    let frame_out = h_out * w_out * d_n;
    for bt in 0..b_n * t_n {
        let src = &x[bt * frame_in..(bt + 1) * frame_in];
        let dst = &mut out[bt * frame_out..(bt + 1) * frame_out];
        for ho in 0..h_out {
            for wo in 0..w_out {
                for c in 0..d_n {
                    let kern = &weights[c * k * k..(c + 1) * k * k];
                    let mut acc = R::ZERO;
                    for i in 0..k {
                        let h = (ho * k + i).min(h_in - 1);
                        for j in 0..k {
                            let w = (wo * k + j).min(w_in - 1);
                            acc += kern[i * k + j] * src[(h * w_in + w) * d_n + c];
                        }
                    }
                    dst[(ho * w_out + wo) * d_n + c] = acc + bias[c];
                }
            }
        }
    }
    (out, [b_n, t_n, h_out, w_out, d_n])
}

/// Per-channel 3D convolution kernel over `(T, H, W)` with odd extents.
/// Weight layout is `[channel][t][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel3D {
    kt: usize,
    kh: usize,
    kw: usize,
    channels: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl Kernel3D {
    /// Identity initialization: the center tap of every channel is one, all
    /// other taps and the bias are zero, so convolution reproduces its input
    /// exactly.
    pub fn identity(kt: usize, kh: usize, kw: usize, channels: usize) -> Result<Self> {
        let mut kern = Self::zeros(kt, kh, kw, channels)?;
        let volume = kt * kh * kw;
        let center = (kt / 2) * kh * kw + (kh / 2) * kw + kw / 2;
        for c in 0..channels {
            kern.weights[c * volume + center] = 1.0;
        }
        Ok(kern)
    }

    pub fn zeros(kt: usize, kh: usize, kw: usize, channels: usize) -> Result<Self> {
        Self::validate_extents(kt, kh, kw)?;
        if channels == 0 {
            return Err(invalid!("channels must be >= 1"));
        }
        Ok(Self {
            kt,
            kh,
            kw,
            channels,
            weights: vec![0.0; channels * kt * kh * kw],
            bias: vec![0.0; channels],
        })
    }

    pub fn new(
        kt: usize,
        kh: usize,
        kw: usize,
        channels: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        Self::validate_extents(kt, kh, kw)?;
        if weights.len() != channels * kt * kh * kw || bias.len() != channels {
            return Err(shape_err!(
                "3D kernel {kt}x{kh}x{kw}, channels={channels} needs {} weights and {channels} biases, got {}/{}",
                channels * kt * kh * kw,
                weights.len(),
                bias.len()
            ));
        }
        Ok(Self {
            kt,
            kh,
            kw,
            channels,
            weights,
            bias,
        })
    }

    fn validate_extents(kt: usize, kh: usize, kw: usize) -> Result<()> {
        for (name, e) in [("kt", kt), ("kh", kh), ("kw", kw)] {
            if e % 2 == 0 || e == 0 {
                return Err(invalid!("kernel extent {name}={e} must be odd"));
            }
        }
        Ok(())
    }

    pub fn extents(&self) -> (usize, usize, usize) {
        (self.kt, self.kh, self.kw)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f32] {
        &mut self.weights
    }
}

/// Per-channel 3D convolution over `(T, H, W)` with stride 1 and zero
/// padding; output dims equal input dims.
pub fn conv3d(z: &VideoLatent, kern: &Kernel3D) -> Result<VideoLatent> {
    if z.channels() != kern.channels {
        return Err(shape_err!(
            "kernel has {} channels but latent has {}",
            kern.channels,
            z.channels()
        ));
    }
    let data = conv3d_raw(
        z.data(),
        z.dims(),
        &kern.weights,
        &kern.bias,
        kern.kt,
        kern.kh,
        kern.kw,
    );
    VideoLatent::new(z.dims(), data)
}

pub(crate) fn conv3d_raw<R: Real>(
    x: &[R],
    dims: [usize; 5],
    weights: &[R],
    bias: &[R],
    kt: usize,
    kh: usize,
    kw: usize,
) -> Vec<R> {
    let [b_n, t_n, h_n, w_n, d_n] = dims;
    let (rt, rh, rw) = (kt / 2, kh / 2, kw / 2);
    let volume = kt * kh * kw;
    let mut out = vec![R::ZERO; x.len()];
    let item = t_n * h_n * w_n * d_n;
    for b in 0..b_n {
        let src = &x[b * item..(b + 1) * item];
        let dst = &mut out[b * item..(b + 1) * item];
        for t in 0..t_n {
            for h in 0..h_n {
                for w in 0..w_n {
                    for c in 0..d_n {
                        let kern = &weights[c * volume..(c + 1) * volume];
                        let mut acc = R::ZERO;
                        for dt in 0..kt {
                            let Some(ts) = (t + dt).checked_sub(rt) else {
                                continue;
                            };
                            if ts >= t_n {
                                continue;
                            }
                            for dh in 0..kh {
                                let Some(hs) = (h + dh).checked_sub(rh) else {
                                    continue;
                                };
                                if hs >= h_n {
                                    continue;
                                }
                                for dw in 0..kw {
                                    let Some(ws) = (w + dw).checked_sub(rw) else {
                                        continue;
                                    };
                                    if ws >= w_n {
                                        continue;
                                    }
                                    acc += kern[(dt * kh + dh) * kw + dw]
                                        * src[((ts * h_n + hs) * w_n + ws) * d_n + c];
                                }
                            }
                        }
                        dst[((t * h_n + h) * w_n + w) * d_n + c] = acc + bias[c];
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::random_latent;

    #[test]
    fn averaging_kernel_block_means() {
        // 4x4 single-channel frame 1..16, k=2 -> 2x2 block means.
        let data: Vec<f32> = (1..=16).map(|v| v as f32).collect();
        let z = VideoLatent::new([1, 1, 4, 4, 1], data).unwrap();
        let kern = DepthwiseKernel2D::averaging(2, 1).unwrap();
        let out = depthwise_compress(&z, &kern).unwrap();
        assert_eq!(out.dims(), [1, 1, 2, 2, 1]);
        assert_eq!(out.data(), &[3.5, 5.5, 11.5, 13.5]);
    }

    #[test]
    fn averaging_preserves_constants() {
        for k in [1usize, 2, 3] {
            let z = VideoLatent::new([1, 2, 6, 6, 2], vec![0.75; 2 * 36 * 2]).unwrap();
            let kern = DepthwiseKernel2D::averaging(k, 2).unwrap();
            let out = depthwise_compress(&z, &kern).unwrap();
            for &v in out.data() {
                assert!((v - 0.75).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn unit_kernel_is_identity() {
        let z = random_latent([1, 2, 3, 3, 2], 11).unwrap();
        let kern = DepthwiseKernel2D::averaging(1, 2).unwrap();
        let out = depthwise_compress(&z, &kern).unwrap();
        assert_eq!(out.data(), z.data());
    }

    #[test]
    fn compress_names_failing_axis() {
        let z = random_latent([1, 1, 5, 4, 1], 0).unwrap();
        let kern = DepthwiseKernel2D::averaging(2, 1).unwrap();
        let err = depthwise_compress(&z, &kern).unwrap_err();
        assert!(err.to_string().contains("height 5"));
    }

    #[test]
    fn ceil_mode_replicates_edges() {
        // 3x3 frame, k=2: output 2x2; the out-of-range taps reuse the border.
        let data: Vec<f32> = (1..=9).map(|v| v as f32).collect();
        let z = VideoLatent::new([1, 1, 3, 3, 1], data).unwrap();
        let kern = DepthwiseKernel2D::averaging(2, 1).unwrap();
        let out = depthwise_compress_ceil(&z, &kern).unwrap();
        assert_eq!(out.dims(), [1, 1, 2, 2, 1]);
        // Window at (1,1) covers rows {2,2}, cols {2,2} -> mean of 9.
        assert_eq!(out.get(0, 0, 1, 1, 0), 9.0);
        // Window at (0,1) covers cols {2,2}, rows {0,1} -> mean of 3,3,6,6.
        assert_eq!(out.get(0, 0, 0, 1, 0), 4.5);
    }

    #[test]
    fn conv3d_identity_init() {
        let z = random_latent([2, 3, 4, 5, 3], 21).unwrap();
        let kern = Kernel3D::identity(3, 3, 3, 3).unwrap();
        let out = conv3d(&z, &kern).unwrap();
        assert_eq!(out.data(), z.data());
    }

    #[test]
    fn conv3d_zero_kernel_annihilates() {
        let z = random_latent([1, 2, 3, 3, 2], 4).unwrap();
        let kern = Kernel3D::zeros(3, 3, 3, 2).unwrap();
        let out = conv3d(&z, &kern).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv3d_averaging_border_attenuates() {
        let volume = 27;
        let kern = Kernel3D::new(3, 3, 3, 1, vec![1.0 / volume as f32; volume], vec![0.0]).unwrap();
        let z = VideoLatent::new([1, 3, 5, 5, 1], vec![1.0; 75]).unwrap();
        let out = conv3d(&z, &kern).unwrap();
        // Interior sees every tap, borders lose taps to zero padding.
        assert!((out.get(0, 1, 2, 2, 0) - 1.0).abs() < 1e-6);
        assert!(out.get(0, 0, 0, 0, 0) < 1.0 - 1e-3);
    }

    #[test]
    fn conv3d_rejects_even_extent() {
        assert!(Kernel3D::identity(2, 3, 3, 1).is_err());
        assert!(Kernel3D::identity(3, 3, 4, 1).is_err());
    }
}
