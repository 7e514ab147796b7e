use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape_err};
use crate::real::Real;
use crate::Result;

/// Numerically stable softmax: subtracts the maximum before exponentiating,
/// then normalizes by the sum.
pub fn softmax<R: Real>(x: &[R]) -> Result<Vec<R>> {
    if x.is_empty() {
        return Err(invalid!("softmax input must not be empty"));
    }
    let mut out = x.to_vec();
    softmax_slice(&mut out);
    Ok(out)
}

/// In-place softmax over a slice; the hot path shared by every attention row.
/// Exponentiation and summation run in separate passes so the exp loop has
/// no cross-iteration dependency.
#[inline]
pub(crate) fn softmax_slice<R: Real>(x: &mut [R]) {
    let mut max = x[0];
    for &v in x.iter().skip(1) {
        max = max.max(v);
    }
    for v in x.iter_mut() {
        *v = (*v - max).exp_nonpos();
    }
    let mut acc = [R::ZERO; 8];
    let mut chunks = x.chunks_exact(8);
    for c in &mut chunks {
        for i in 0..8 {
            acc[i] += c[i];
        }
    }
    for (i, &v) in chunks.remainder().iter().enumerate() {
        acc[i] += v;
    }
    let s0 = (acc[0] + acc[4]) + (acc[1] + acc[5]);
    let s1 = (acc[2] + acc[6]) + (acc[3] + acc[7]);
    let inv = R::ONE / (s0 + s1);
    for v in x.iter_mut() {
        *v = *v * inv;
    }
}

/// Row-wise softmax over an `rows x cols` row-major buffer.
pub fn softmax_rows<R: Real>(x: &mut [R], rows: usize, cols: usize) -> Result<()> {
    if cols == 0 || x.len() != rows * cols {
        return Err(shape_err!(
            "softmax_rows over {rows}x{cols} needs {} elements, got {}",
            rows * cols,
            x.len()
        ));
    }
    for r in 0..rows {
        softmax_slice(&mut x[r * cols..(r + 1) * cols]);
    }
    Ok(())
}

/// Row-major matrix product `a (m x k) * b (k x n)`.
pub fn matmul<R: Real>(a: &[R], b: &[R], m: usize, k: usize, n: usize) -> Result<Vec<R>> {
    if a.len() != m * k || b.len() != k * n {
        return Err(shape_err!(
            "matmul ({m}x{k})*({k}x{n}) needs {}/{} elements, got {}/{}",
            m * k,
            k * n,
            a.len(),
            b.len()
        ));
    }
    let mut out = vec![R::ZERO; m * n];
    matmul_into(a, b, &mut out, m, k, n);
    Ok(out)
}

/// Accumulation order is `k` ascending for every output element (the i-k-j
/// loop nest), identical on every call.
#[inline]
pub(crate) fn matmul_into<R: Real>(a: &[R], b: &[R], out: &mut [R], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Dot product with eight-lane partial sums and a fixed reduction tree;
/// deterministic and wide enough to vectorize.
#[inline]
pub(crate) fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    let mut acc = [R::ZERO; 8];
    let mut chunks_a = a.chunks_exact(8);
    let mut chunks_b = b.chunks_exact(8);
    for (ca, cb) in (&mut chunks_a).zip(&mut chunks_b) {
        for i in 0..8 {
            acc[i] += ca[i] * cb[i];
        }
    }
    for (i, (&x, &y)) in chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .enumerate()
    {
        acc[i] += x * y;
    }
    let s0 = (acc[0] + acc[4]) + (acc[1] + acc[5]);
    let s1 = (acc[2] + acc[6]) + (acc[3] + acc[7]);
    s0 + s1
}

/// Four dot products against one shared right-hand side. Each output follows
/// [`dot`]'s exact accumulation pattern, so mixing `dot4` and `dot` never
/// changes a result; the shared `k` row is loaded once per lane instead of
/// four times.
#[inline]
pub(crate) fn dot4<R: Real>(rows: [&[R]; 4], k: &[R]) -> [R; 4] {
    let len = k.len();
    let full = len - len % 8;
    let mut acc = [[R::ZERO; 8]; 4];
    let mut c = 0;
    while c < full {
        let kb: &[R; 8] = k[c..c + 8].try_into().expect("eight-wide chunk");
        for r in 0..4 {
            let qb: &[R; 8] = rows[r][c..c + 8].try_into().expect("rows match k length");
            for l in 0..8 {
                acc[r][l] += qb[l] * kb[l];
            }
        }
        c += 8;
    }
    for (i, c) in (full..len).enumerate() {
        for r in 0..4 {
            acc[r][i] += rows[r][c] * k[c];
        }
    }
    let red = |a: [R; 8]| ((a[0] + a[4]) + (a[1] + a[5])) + ((a[2] + a[6]) + (a[3] + a[7]));
    [red(acc[0]), red(acc[1]), red(acc[2]), red(acc[3])]
}

/// Sigmoid-weighted linear unit `x * sigmoid(x)`, the smooth activation used
/// by every feed-forward layer in the crate.
pub fn silu<R: Real>(x: &[R]) -> Vec<R> {
    x.iter().map(|&v| silu_scalar(v)).collect()
}

#[inline]
pub(crate) fn silu_scalar<R: Real>(x: R) -> R {
    x / (R::ONE + (-x).exp())
}

/// Double-precision logistic sigmoid; the fusion gates squash with this.
#[inline]
pub fn sigmoid64(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Sinusoidal encoding of a scalar: `dim/2` sine components followed by
/// `dim/2` cosine components at log-spaced frequencies
/// `w_j = 10000^(-2j/dim)`.
pub fn sin_encode(t: f32, dim: usize) -> Result<Vec<f32>> {
    if dim < 2 || !dim.is_multiple_of(2) {
        return Err(invalid!("encoding dim must be even and >= 2, got {dim}"));
    }
    let half = dim / 2;
    let mut out = vec![0.0f32; dim];
    for j in 0..half {
        let omega = libm::pow(10_000.0, -2.0 * j as f64 / dim as f64);
        let arg = (t as f64 * omega) as f32;
        out[j] = libm::sinf(arg);
        out[half + j] = libm::cosf(arg);
    }
    Ok(out)
}

/// Two-layer perceptron `x -> silu(x*W1 + b1)*W2 + b2`, with `W1` stored
/// `in x hidden` and `W2` stored `hidden x out`, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp2 {
    pub dim_in: usize,
    pub dim_hidden: usize,
    pub dim_out: usize,
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
}

impl Mlp2 {
    pub fn new(
        dim_in: usize,
        dim_hidden: usize,
        dim_out: usize,
        w1: Vec<f32>,
        b1: Vec<f32>,
        w2: Vec<f32>,
        b2: Vec<f32>,
    ) -> Result<Self> {
        if w1.len() != dim_in * dim_hidden
            || b1.len() != dim_hidden
            || w2.len() != dim_hidden * dim_out
            || b2.len() != dim_out
        {
            return Err(shape_err!(
                "MLP {dim_in}->{dim_hidden}->{dim_out} has inconsistent weight lengths"
            ));
        }
        let all = w1.iter().chain(&b1).chain(&w2).chain(&b2);
        if !all.clone().all(|v| v.is_finite()) {
            return Err(crate::Error::NonFinite(alloc::string::String::from(
                "MLP weights contain NaN or infinity",
            )));
        }
        Ok(Self {
            dim_in,
            dim_hidden,
            dim_out,
            w1,
            b1,
            w2,
            b2,
        })
    }

    /// All-zero parameters; the output is `b2 = 0` for every input.
    pub fn zeros(dim_in: usize, dim_hidden: usize, dim_out: usize) -> Self {
        Self {
            dim_in,
            dim_hidden,
            dim_out,
            w1: vec![0.0; dim_in * dim_hidden],
            b1: vec![0.0; dim_hidden],
            w2: vec![0.0; dim_hidden * dim_out],
            b2: vec![0.0; dim_out],
        }
    }
}

/// Evaluates [`Mlp2`] on a single vector.
pub fn mlp_forward(x: &[f32], mlp: &Mlp2) -> Result<Vec<f32>> {
    if x.len() != mlp.dim_in {
        return Err(shape_err!(
            "MLP expects input of length {}, got {}",
            mlp.dim_in,
            x.len()
        ));
    }
    let mut hidden = matmul(x, &mlp.w1, 1, mlp.dim_in, mlp.dim_hidden)?;
    for (h, b) in hidden.iter_mut().zip(&mlp.b1) {
        *h = silu_scalar(*h + *b);
    }
    let mut out = matmul(&hidden, &mlp.w2, 1, mlp.dim_hidden, mlp.dim_out)?;
    for (o, b) in out.iter_mut().zip(&mlp.b2) {
        *o += *b;
    }
    Ok(out)
}

/// Per-token normalization over the channel axis with learned scale/shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f32>,
    pub bias: Vec<f32>,
    pub eps: f32,
}

impl LayerNorm {
    pub fn identity(dim: usize) -> Self {
        Self {
            gain: vec![1.0; dim],
            bias: vec![0.0; dim],
            eps: 1e-5,
        }
    }

    pub fn dim(&self) -> usize {
        self.gain.len()
    }
}

/// Normalizes each row of an `rows x dim` buffer to zero mean and unit
/// variance over `dim`, then applies the per-channel scale and shift.
pub fn layer_norm_rows(x: &[f32], rows: usize, norm: &LayerNorm) -> Result<Vec<f32>> {
    let dim = norm.dim();
    if norm.bias.len() != dim || x.len() != rows * dim || dim == 0 {
        return Err(shape_err!(
            "layer_norm over {rows}x{dim} needs {} elements, got {}",
            rows * dim,
            x.len()
        ));
    }
    let mut out = vec![0.0f32; x.len()];
    let inv_n = 1.0 / dim as f32;
    for r in 0..rows {
        let row = &x[r * dim..(r + 1) * dim];
        let mut mean = 0.0f32;
        for &v in row {
            mean += v;
        }
        mean *= inv_n;
        let mut var = 0.0f32;
        for &v in row {
            let c = v - mean;
            var += c * c;
        }
        var *= inv_n;
        let inv_std = 1.0 / libm::sqrtf(var + norm.eps);
        let orow = &mut out[r * dim..(r + 1) * dim];
        for (c, (&v, (&g, &b))) in row.iter().zip(norm.gain.iter().zip(&norm.bias)).enumerate() {
            orow[c] = (v - mean) * inv_std * g + b;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetry_and_singleton() {
        assert_eq!(softmax(&[0.0f32, 0.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(softmax(&[123.4f32]).unwrap(), vec![1.0]);
        assert_eq!(softmax(&[-3.0f64]).unwrap(), vec![1.0]);
    }

    #[test]
    fn softmax_analytic_ln3() {
        let out = softmax(&[0.0f64, libm::log(3.0)]).unwrap();
        assert!((out[0] - 0.25).abs() < 1e-12);
        assert!((out[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_empty() {
        assert!(softmax::<f32>(&[]).is_err());
    }

    #[test]
    fn softmax_sums_to_one_under_extremes() {
        let out = softmax(&[1000.0f32, 999.0, -1000.0]).unwrap();
        let sum: f32 = out.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(out.iter().all(|p| *p >= 0.0));
    }

    #[test]
    fn matmul_small_case() {
        // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
        let out = matmul(&[1.0f32, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0], 2, 2, 2).unwrap();
        assert_eq!(out, vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64) * 0.25 - 3.0).collect();
        let b: Vec<f64> = (0..37).map(|i| 1.0 - (i as f64) * 0.125).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-9);
    }

    #[test]
    fn sin_encode_zero_argument() {
        let enc = sin_encode(0.0, 8).unwrap();
        assert_eq!(&enc[..4], &[0.0; 4]);
        assert_eq!(&enc[4..], &[1.0; 4]);
    }

    #[test]
    fn sin_encode_bounded_and_periodic() {
        for &t in &[0.0f32, 1.0, 499.5, 999.0] {
            let enc = sin_encode(t, 256).unwrap();
            assert!(enc.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        let a = sin_encode(1.0, 4).unwrap();
        let b = sin_encode(1.0 + core::f32::consts::TAU, 4).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-5);
    }

    #[test]
    fn sin_encode_rejects_odd_dim() {
        assert!(sin_encode(1.0, 5).is_err());
        assert!(sin_encode(1.0, 0).is_err());
    }

    #[test]
    fn mlp_zero_paths() {
        let mut mlp = Mlp2::zeros(2, 3, 2);
        assert_eq!(mlp_forward(&[5.0, -2.0], &mlp).unwrap(), vec![0.0, 0.0]);
        mlp.b2 = vec![0.25, -0.5];
        assert_eq!(mlp_forward(&[5.0, -2.0], &mlp).unwrap(), vec![0.25, -0.5]);
    }

    #[test]
    fn mlp_hand_computed_fixture() {
        // W1 = [[1, 0], [0, 1]], b1 = [1, -1], W2 = [[2, 0], [0, 3]], b2 = [0.5, 0].
        // x = [1, 2] -> pre-act [2, 1] -> silu [2*sig(2), 1*sig(1)]
        //   -> out [2*sig(2)*2 + 0.5, 1*sig(1)*3].
        let mlp = Mlp2::new(
            2,
            2,
            2,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![1.0, -1.0],
            vec![2.0, 0.0, 0.0, 3.0],
            vec![0.5, 0.0],
        )
        .unwrap();
        let out = mlp_forward(&[1.0, 2.0], &mlp).unwrap();
        let sig = |x: f32| 1.0 / (1.0 + (-x).exp());
        assert!((out[0] - (2.0 * sig(2.0) * 2.0 + 0.5)).abs() < 1e-6);
        assert!((out[1] - (1.0 * sig(1.0) * 3.0)).abs() < 1e-6);
    }

    #[test]
    fn mlp_rejects_shape_mismatch() {
        let mlp = Mlp2::zeros(2, 3, 2);
        assert!(mlp_forward(&[1.0; 3], &mlp).is_err());
    }

    #[test]
    fn layer_norm_normalizes() {
        let norm = LayerNorm::identity(4);
        let out = layer_norm_rows(&[1.0, 2.0, 3.0, 4.0], 1, &norm).unwrap();
        let mean: f32 = out.iter().sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-6);
        let var: f32 = out.iter().map(|v| v * v).sum::<f32>() / 4.0;
        assert!((var - 1.0).abs() < 1e-3);
    }

    #[test]
    fn silu_known_values() {
        let out = silu(&[0.0f64, 1.0]);
        assert_eq!(out[0], 0.0);
        assert!((out[1] - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
    }
}
