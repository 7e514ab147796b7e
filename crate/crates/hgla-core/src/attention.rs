//! Scaled dot-product self-attention, the per-sub-block weight container,
//! and low-rank residual adaptation of shared base weights.

use alloc::vec;
use alloc::vec::Vec;

use crate::cost::FlopCounter;
use crate::error::{invalid, shape_err};
use crate::mat::Mat;
use crate::ops::{dot, dot4, matmul, silu_scalar, softmax_slice};
use crate::rng::SplitMix64;
use crate::Result;

/// Projection and feed-forward weights for one attention sub-block.
///
/// `W_Q`, `W_K`, `W_V`, `W_O` are `D x D`; the feed-forward pair is
/// `D x D_ff` and `D_ff x D` with per-channel biases. `heads` must divide
/// `D`; each head attends over its own `D/heads` column slice.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    dim: usize,
    dim_ff: usize,
    heads: usize,
    pub w_q: Mat,
    pub w_k: Mat,
    pub w_v: Mat,
    pub w_o: Mat,
    pub ffn_w1: Mat,
    pub ffn_b1: Vec<f32>,
    pub ffn_w2: Mat,
    pub ffn_b2: Vec<f32>,
}

impl AttentionWeights {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        heads: usize,
        w_q: Mat,
        w_k: Mat,
        w_v: Mat,
        w_o: Mat,
        ffn_w1: Mat,
        ffn_b1: Vec<f32>,
        ffn_w2: Mat,
        ffn_b2: Vec<f32>,
    ) -> Result<Self> {
        let dim = w_q.rows();
        let dim_ff = ffn_w1.cols();
        for (name, m, rows, cols) in [
            ("W_Q", &w_q, dim, dim),
            ("W_K", &w_k, dim, dim),
            ("W_V", &w_v, dim, dim),
            ("W_O", &w_o, dim, dim),
            ("FFN-in", &ffn_w1, dim, dim_ff),
            ("FFN-out", &ffn_w2, dim_ff, dim),
        ] {
            if m.rows() != rows || m.cols() != cols {
                return Err(shape_err!(
                    "{name} must be {rows}x{cols}, got {}x{}",
                    m.rows(),
                    m.cols()
                ));
            }
            if !m.is_finite() {
                return Err(crate::Error::NonFinite(alloc::format!(
                    "{name} contains NaN or infinity"
                )));
            }
        }
        if ffn_b1.len() != dim_ff || ffn_b2.len() != dim {
            return Err(shape_err!(
                "FFN biases must have lengths {dim_ff}/{dim}, got {}/{}",
                ffn_b1.len(),
                ffn_b2.len()
            ));
        }
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(invalid!("heads ({heads}) must divide D ({dim})"));
        }
        Ok(Self {
            dim,
            dim_ff,
            heads,
            w_q,
            w_k,
            w_v,
            w_o,
            ffn_w1,
            ffn_b1,
            ffn_w2,
            ffn_b2,
        })
    }

    /// Random initialization: uniform entries scaled by `1/sqrt(D)` so token
    /// magnitudes stay near one through a forward pass.
    pub fn random(dim: usize, dim_ff: usize, heads: usize, seed: u64) -> Result<Self> {
        let root = SplitMix64::new(seed);
        let fill = |stream: u64, rows: usize, cols: usize, scale: f32| -> Mat {
            let mut rng = root.derive(stream);
            let data = (0..rows * cols).map(|_| rng.next_f32() * scale).collect();
            Mat::new(rows, cols, data).expect("length matches by construction")
        };
        let s = 1.0 / libm::sqrtf(dim as f32);
        let s_ff = 1.0 / libm::sqrtf(dim_ff as f32);
        Self::new(
            heads,
            fill(1, dim, dim, s),
            fill(2, dim, dim, s),
            fill(3, dim, dim, s),
            fill(4, dim, dim, s),
            fill(5, dim, dim_ff, s),
            vec![0.0; dim_ff],
            fill(6, dim_ff, dim, s_ff),
            vec![0.0; dim],
        )
    }

    /// Identity projections with an all-zero feed-forward network; attention
    /// passes tokens through untouched and the FFN contributes nothing.
    pub fn identity(dim: usize, dim_ff: usize, heads: usize) -> Result<Self> {
        Self::new(
            heads,
            Mat::identity(dim),
            Mat::identity(dim),
            Mat::identity(dim),
            Mat::identity(dim),
            Mat::zeros(dim, dim_ff),
            vec![0.0; dim_ff],
            Mat::zeros(dim_ff, dim),
            vec![0.0; dim],
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dim_ff(&self) -> usize {
        self.dim_ff
    }

    pub fn heads(&self) -> usize {
        self.heads
    }
}

/// One low-rank factor pair `A (rows x r)`, `B (r x cols)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraPair {
    pub a: Mat,
    pub b: Mat,
}

impl LoraPair {
    fn delta(&self) -> Result<Vec<f32>> {
        matmul(
            self.a.data(),
            self.b.data(),
            self.a.rows(),
            self.a.cols(),
            self.b.cols(),
        )
    }
}

/// Low-rank adapters for one attention domain: residual factors for
/// `W_Q`, `W_K`, `W_V` and both feed-forward matrices. `W_O` is never
/// adapted.
#[derive(Debug, Clone, PartialEq)]
pub struct LoRAAdapter {
    rank: usize,
    pub q: LoraPair,
    pub k: LoraPair,
    pub v: LoraPair,
    pub ffn1: LoraPair,
    pub ffn2: LoraPair,
}

impl LoRAAdapter {
    /// Default initialization: `A` small random, `B` zero, so the residual
    /// `A*B` vanishes at construction and adapted weights start identical to
    /// the base weights.
    pub fn init(dim: usize, dim_ff: usize, rank: usize, seed: u64) -> Result<Self> {
        Self::check_rank(dim, dim_ff, rank)?;
        let root = SplitMix64::new(seed);
        let small = |stream: u64, rows: usize, cols: usize| -> Mat {
            let mut rng = root.derive(stream);
            let scale = 0.1 / libm::sqrtf(rows as f32);
            let data = (0..rows * cols).map(|_| rng.next_f32() * scale).collect();
            Mat::new(rows, cols, data).expect("length matches by construction")
        };
        let pair = |stream: u64, rows: usize, cols: usize| LoraPair {
            a: small(stream, rows, rank),
            b: Mat::zeros(rank, cols),
        };
        Ok(Self {
            rank,
            q: pair(1, dim, dim),
            k: pair(2, dim, dim),
            v: pair(3, dim, dim),
            ffn1: pair(4, dim, dim_ff),
            ffn2: pair(5, dim_ff, dim),
        })
    }

    /// Fully trained-looking adapter with random factors on both sides; used
    /// by tests and demos that need a nonzero residual.
    pub fn random(dim: usize, dim_ff: usize, rank: usize, seed: u64) -> Result<Self> {
        let mut adapter = Self::init(dim, dim_ff, rank, seed)?;
        let root = SplitMix64::new(seed ^ 0x5EED_B00C);
        let fill = |pair: &mut LoraPair, stream: u64| {
            let mut rng = root.derive(stream);
            let scale = 0.1 / libm::sqrtf(pair.b.rows() as f32);
            for v in pair.b.data_mut() {
                *v = rng.next_f32() * scale;
            }
        };
        fill(&mut adapter.q, 1);
        fill(&mut adapter.k, 2);
        fill(&mut adapter.v, 3);
        fill(&mut adapter.ffn1, 4);
        fill(&mut adapter.ffn2, 5);
        Ok(adapter)
    }

    /// Rebuilds an adapter from explicit factor pairs, as loaded from disk.
    /// All pairs must share one rank, which must satisfy the rank bound for
    /// the dimensions the pairs encode.
    pub fn from_pairs(
        q: LoraPair,
        k: LoraPair,
        v: LoraPair,
        ffn1: LoraPair,
        ffn2: LoraPair,
    ) -> Result<Self> {
        let rank = q.a.cols();
        let dim = q.a.rows();
        let dim_ff = ffn1.b.cols();
        for (name, pair, rows, cols) in [
            ("q", &q, dim, dim),
            ("k", &k, dim, dim),
            ("v", &v, dim, dim),
            ("ffn1", &ffn1, dim, dim_ff),
            ("ffn2", &ffn2, dim_ff, dim),
        ] {
            if pair.a.rows() != rows
                || pair.a.cols() != rank
                || pair.b.rows() != rank
                || pair.b.cols() != cols
            {
                return Err(shape_err!(
                    "adapter pair {name} has shapes {}x{} / {}x{}, expected {rows}x{rank} / {rank}x{cols}",
                    pair.a.rows(),
                    pair.a.cols(),
                    pair.b.rows(),
                    pair.b.cols()
                ));
            }
        }
        Self::check_rank(dim, dim_ff, rank)?;
        Ok(Self {
            rank,
            q,
            k,
            v,
            ffn1,
            ffn2,
        })
    }

    fn check_rank(dim: usize, dim_ff: usize, rank: usize) -> Result<()> {
        let limit = dim.min(dim_ff) / 4;
        if rank == 0 || rank > limit {
            return Err(invalid!(
                "rank must satisfy 1 <= r <= min(D, D_ff)/4 = {limit}, got {rank}"
            ));
        }
        Ok(())
    }

    pub fn rank(&self) -> usize {
        self.rank
    }
}

/// Applies the adapter residuals: every adapted matrix becomes `W + A*B`;
/// `W_O` passes through unchanged.
pub fn apply_lora(w: &AttentionWeights, adapter: &LoRAAdapter) -> Result<AttentionWeights> {
    let adapt = |base: &Mat, pair: &LoraPair, name: &str| -> Result<Mat> {
        if pair.a.rows() != base.rows()
            || pair.b.cols() != base.cols()
            || pair.a.cols() != pair.b.rows()
        {
            return Err(shape_err!(
                "adapter for {name} has shapes {}x{} / {}x{}, base is {}x{}",
                pair.a.rows(),
                pair.a.cols(),
                pair.b.rows(),
                pair.b.cols(),
                base.rows(),
                base.cols()
            ));
        }
        let delta = pair.delta()?;
        let data = base.data().iter().zip(&delta).map(|(w, d)| w + d).collect();
        Mat::new(base.rows(), base.cols(), data)
    };
    AttentionWeights::new(
        w.heads,
        adapt(&w.w_q, &adapter.q, "W_Q")?,
        adapt(&w.w_k, &adapter.k, "W_K")?,
        adapt(&w.w_v, &adapter.v, "W_V")?,
        w.w_o.clone(),
        adapt(&w.ffn_w1, &adapter.ffn1, "FFN-in")?,
        w.ffn_b1.clone(),
        adapt(&w.ffn_w2, &adapter.ffn2, "FFN-out")?,
        w.ffn_b2.clone(),
    )
}

/// Multi-head scaled dot-product self-attention over an `N x D` token set.
///
/// Per head: `softmax(Q Kᵀ / sqrt(D/heads)) V`; head outputs are
/// concatenated and projected by `W_O`. No residual, no normalization and no
/// positional encoding happen here.
pub fn self_attention(tokens: &Mat, w: &AttentionWeights) -> Result<Mat> {
    self_attention_counted(tokens, w, None)
}

/// [`self_attention`] with instrumented matrix-multiply FLOP counting.
pub fn self_attention_counted(
    tokens: &Mat,
    w: &AttentionWeights,
    counter: Option<&FlopCounter>,
) -> Result<Mat> {
    if tokens.cols() != w.dim {
        return Err(shape_err!(
            "tokens have {} channels, weights expect {}",
            tokens.cols(),
            w.dim
        ));
    }
    let out = attention_tokens(tokens.data(), tokens.rows(), w, counter)?;
    Mat::new(tokens.rows(), w.dim, out)
}

/// Internal slice-level attention; `x` is an `n x D` row-major buffer.
///
/// The score and apply loops are tiled over queries and keys for cache
/// reuse. Tiling only regroups iterations: every score is still one [`dot`]
/// and every output element still accumulates values in ascending key order,
/// so results are bitwise independent of the tile sizes.
pub(crate) fn attention_tokens(
    x: &[f32],
    n: usize,
    w: &AttentionWeights,
    counter: Option<&FlopCounter>,
) -> Result<Vec<f32>> {
    const TILE_Q: usize = 16;
    const TILE_K: usize = 512;

    let d = w.dim;
    let q = matmul(x, w.w_q.data(), n, d, d)?;
    let k = matmul(x, w.w_k.data(), n, d, d)?;
    let v = matmul(x, w.w_v.data(), n, d, d)?;
    if let Some(c) = counter {
        c.add_proj(3 * flops(n, d, d));
    }

    let dh = d / w.heads;
    let scale = 1.0 / libm::sqrtf(dh as f32);
    let mut ctx = vec![0.0f32; n * d];
    let mut qh = vec![0.0f32; n * dh];
    let mut kh = vec![0.0f32; n * dh];
    let mut vh = vec![0.0f32; n * dh];
    let mut scores: Vec<Vec<f32>> = vec![vec![0.0f32; n]; TILE_Q.min(n)];
    for head in 0..w.heads {
        let off = head * dh;
        for row in 0..n {
            qh[row * dh..(row + 1) * dh].copy_from_slice(&q[row * d + off..row * d + off + dh]);
            kh[row * dh..(row + 1) * dh].copy_from_slice(&k[row * d + off..row * d + off + dh]);
            vh[row * dh..(row + 1) * dh].copy_from_slice(&v[row * d + off..row * d + off + dh]);
        }
        for i0 in (0..n).step_by(TILE_Q) {
            let i_n = (n - i0).min(TILE_Q);
            for j0 in (0..n).step_by(TILE_K) {
                let j_n = (n - j0).min(TILE_K);
                let ktile = &kh[j0 * dh..(j0 + j_n) * dh];
                let mut i = 0;
                while i + 4 <= i_n {
                    let rows = [
                        &qh[(i0 + i) * dh..(i0 + i + 1) * dh],
                        &qh[(i0 + i + 1) * dh..(i0 + i + 2) * dh],
                        &qh[(i0 + i + 2) * dh..(i0 + i + 3) * dh],
                        &qh[(i0 + i + 3) * dh..(i0 + i + 4) * dh],
                    ];
                    let [s0, s1, s2, s3] = &mut scores[i..i + 4] else {
                        unreachable!("four score rows");
                    };
                    let (r0, r1) = (&mut s0[j0..j0 + j_n], &mut s1[j0..j0 + j_n]);
                    let (r2, r3) = (&mut s2[j0..j0 + j_n], &mut s3[j0..j0 + j_n]);
                    for j in 0..j_n {
                        let s = dot4(rows, &ktile[j * dh..(j + 1) * dh]);
                        r0[j] = s[0] * scale;
                        r1[j] = s[1] * scale;
                        r2[j] = s[2] * scale;
                        r3[j] = s[3] * scale;
                    }
                    i += 4;
                }
                while i < i_n {
                    let qi = &qh[(i0 + i) * dh..(i0 + i + 1) * dh];
                    let srow = &mut scores[i][j0..j0 + j_n];
                    for (j, s) in srow.iter_mut().enumerate() {
                        *s = dot(qi, &ktile[j * dh..(j + 1) * dh]) * scale;
                    }
                    i += 1;
                }
            }
            for row in scores.iter_mut().take(i_n) {
                softmax_slice(&mut row[..n]);
            }
            // Weighted value accumulation, register-blocked over 32 output
            // lanes; per output element the key order stays ascending.
            for j0 in (0..n).step_by(TILE_K) {
                let j_n = (n - j0).min(TILE_K);
                let vtile = &vh[j0 * dh..(j0 + j_n) * dh];
                for i in 0..i_n {
                    let srow = &scores[i][j0..j0 + j_n];
                    let out = &mut ctx[(i0 + i) * d + off..(i0 + i) * d + off + dh];
                    let mut c0 = 0;
                    while c0 + 32 <= dh {
                        let mut acc = [0.0f32; 32];
                        for (j, &p) in srow.iter().enumerate() {
                            let vb: &[f32; 32] = vtile[j * dh + c0..j * dh + c0 + 32]
                                .try_into()
                                .expect("32-wide chunk");
                            for l in 0..32 {
                                acc[l] += p * vb[l];
                            }
                        }
                        for (o, a) in out[c0..c0 + 32].iter_mut().zip(&acc) {
                            *o += a;
                        }
                        c0 += 32;
                    }
                    if c0 < dh {
                        let cw = dh - c0;
                        let mut acc = [0.0f32; 32];
                        for (j, &p) in srow.iter().enumerate() {
                            let vj = &vtile[j * dh + c0..j * dh + c0 + cw];
                            for (a, &vv) in acc[..cw].iter_mut().zip(vj) {
                                *a += p * vv;
                            }
                        }
                        for (o, a) in out[c0..c0 + cw].iter_mut().zip(&acc[..cw]) {
                            *o += a;
                        }
                    }
                }
            }
        }
    }
    if let Some(c) = counter {
        // Score and apply matmuls over the attention map.
        c.add_map(2 * flops(n, d, n));
    }

    let out = matmul(&ctx, w.w_o.data(), n, d, d)?;
    if let Some(c) = counter {
        c.add_proj(flops(n, d, d));
    }
    Ok(out)
}

/// Two-layer feed-forward applied row-wise: `silu(x W1 + b1) W2 + b2`.
pub fn ffn(tokens: &Mat, w: &AttentionWeights) -> Result<Mat> {
    if tokens.cols() != w.dim {
        return Err(shape_err!(
            "tokens have {} channels, weights expect {}",
            tokens.cols(),
            w.dim
        ));
    }
    let out = ffn_tokens(tokens.data(), tokens.rows(), w, None)?;
    Mat::new(tokens.rows(), w.dim, out)
}

pub(crate) fn ffn_tokens(
    x: &[f32],
    n: usize,
    w: &AttentionWeights,
    counter: Option<&FlopCounter>,
) -> Result<Vec<f32>> {
    let (d, d_ff) = (w.dim, w.dim_ff);
    let mut hidden = matmul(x, w.ffn_w1.data(), n, d, d_ff)?;
    for row in hidden.chunks_exact_mut(d_ff) {
        for (h, b) in row.iter_mut().zip(&w.ffn_b1) {
            *h = silu_scalar(*h + *b);
        }
    }
    let mut out = matmul(&hidden, w.ffn_w2.data(), n, d_ff, d)?;
    for row in out.chunks_exact_mut(d) {
        for (o, b) in row.iter_mut().zip(&w.ffn_b2) {
            *o += *b;
        }
    }
    if let Some(c) = counter {
        c.add_ffn(flops(n, d, d_ff) + flops(n, d_ff, d));
    }
    Ok(out)
}

/// FLOPs of an `(rows x inner) * (inner x cols)` product under the
/// multiply-add = 2 convention.
#[inline]
fn flops(rows: usize, inner: usize, cols: usize) -> u64 {
    2 * rows as u64 * inner as u64 * cols as u64
}
