//! Ground-truth references: a full-attention block over all `T*H*W` tokens,
//! a brute-force resampler, and the degenerate-equivalence harness that
//! checks the decomposed block against full attention.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::attention::AttentionWeights;
use crate::block::{block_forward, sub_block_tokens, BlockConfig, BlockParams};
use crate::cost::FlopCounter;
use crate::error::invalid;
use crate::latent::{random_latent, VideoLatent};
use crate::ops::LayerNorm;
use crate::{Error, Result};

/// Token guard for oracle runs; keeps reference computations at desk scale.
pub const ORACLE_TOKEN_LIMIT: usize = 16_384;

/// Outcome of one decomposed-vs-oracle comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub description: String,
    pub max_abs_diff: f64,
    pub max_rel_diff: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Full self-attention over every `T*H*W` token of each batch item: the same
/// pre-norm attention + FFN sub-block the branches run, with no windowing.
/// Guarded to [`ORACLE_TOKEN_LIMIT`] tokens.
pub fn full_attention_block(
    z: &VideoLatent,
    w: &AttentionWeights,
    norm_attn: &LayerNorm,
    norm_ffn: &LayerNorm,
) -> Result<VideoLatent> {
    full_attention_counted(z, w, norm_attn, norm_ffn, None)
}

/// [`full_attention_block`] with instrumented FLOP counting.
pub fn full_attention_counted(
    z: &VideoLatent,
    w: &AttentionWeights,
    norm_attn: &LayerNorm,
    norm_ffn: &LayerNorm,
    counter: Option<&FlopCounter>,
) -> Result<VideoLatent> {
    let tokens = z.frames() * z.height() * z.width();
    if tokens > ORACLE_TOKEN_LIMIT {
        return Err(Error::ResourceLimit(format!(
            "oracle guard: {tokens} tokens exceed the limit of {ORACLE_TOKEN_LIMIT}"
        )));
    }
    full_attention_unguarded_counted(z, w, norm_attn, norm_ffn, counter)
}

/// Full attention without the token guard, for timing harnesses that need
/// sizes beyond the verification scale. Memory stays linear in the token
/// count (the attention map is never materialized whole).
pub fn full_attention_unguarded(
    z: &VideoLatent,
    w: &AttentionWeights,
    norm_attn: &LayerNorm,
    norm_ffn: &LayerNorm,
) -> Result<VideoLatent> {
    full_attention_unguarded_counted(z, w, norm_attn, norm_ffn, None)
}

fn full_attention_unguarded_counted(
    z: &VideoLatent,
    w: &AttentionWeights,
    norm_attn: &LayerNorm,
    norm_ffn: &LayerNorm,
    counter: Option<&FlopCounter>,
) -> Result<VideoLatent> {
    if z.channels() != w.dim() {
        return Err(crate::error::shape_err!(
            "latent has {} channels, weights expect {}",
            z.channels(),
            w.dim()
        ));
    }
    if norm_attn.dim() != w.dim() || norm_ffn.dim() != w.dim() {
        return Err(crate::error::shape_err!(
            "norm parameters have {}/{} channels, weights expect {}",
            norm_attn.dim(),
            norm_ffn.dim(),
            w.dim()
        ));
    }
    let tokens = z.frames() * z.height() * z.width();
    let mut out = z.clone();
    for b in 0..z.batch() {
        sub_block_tokens(
            out.batch_tokens_mut(b),
            tokens,
            w,
            norm_attn,
            norm_ffn,
            counter,
        );
    }
    if !out.is_finite() {
        return Err(Error::NonFinite(String::from(
            "full attention output contains NaN or infinity",
        )));
    }
    Ok(out)
}

/// Builds the degenerate configuration whose block forward must replicate
/// full attention: a single local window, no compression anywhere, identity
/// decompression, zero adapter residuals and neutral gates.
pub fn degenerate_setup(
    seed: u64,
    dims: [usize; 5],
) -> Result<(BlockConfig, BlockParams, VideoLatent)> {
    let d = dims[4];
    if d < 4 {
        return Err(invalid!(
            "degenerate setup needs D >= 4 for a valid adapter rank, got {d}"
        ));
    }
    let cfg = BlockConfig::degenerate(1, d, 2 * d, 1, 0)?;
    let params = BlockParams::init(&cfg, seed)?;
    let z = random_latent(dims, seed)?;
    Ok((cfg, params, z))
}

/// Runs `block_forward` and the full-attention oracle on the same input and
/// reports the difference. Failures are reported, never thrown.
pub fn compare_block_to_oracle(
    z: &VideoLatent,
    t: f32,
    cfg: &BlockConfig,
    params: &BlockParams,
    tolerance: f64,
) -> Result<EquivalenceReport> {
    let decomposed = block_forward(z, t, cfg, params)?;
    let reference = full_attention_block(z, &params.base, &params.norm_attn, &params.norm_ffn)?;
    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    for (a, b) in decomposed.data().iter().zip(reference.data()) {
        let abs = (*a as f64 - *b as f64).abs();
        max_abs = max_abs.max(abs);
        max_rel = max_rel.max(abs / (*b as f64).abs().max(1.0));
    }
    Ok(EquivalenceReport {
        description: format!(
            "degenerate block vs full attention, dims {:?}, t = {t}",
            z.dims()
        ),
        max_abs_diff: max_abs,
        max_rel_diff: max_rel,
        tolerance,
        pass: max_abs <= tolerance,
    })
}

/// End-to-end degenerate equivalence check: deterministic in `(seed, dims)`.
pub fn assert_degenerate_equivalence(
    seed: u64,
    dims: [usize; 5],
    tolerance: f64,
) -> Result<EquivalenceReport> {
    let (cfg, params, z) = degenerate_setup(seed, dims)?;
    compare_block_to_oracle(&z, 500.0, &cfg, &params, tolerance)
}

/// Literal per-pixel evaluation of half-pixel bilinear resampling on one
/// `h_in x w_in` frame, with the four neighbor weights written out longhand.
/// Reference for the production resampler; keep free of shortcuts.
pub fn brute_force_resample(
    frame: &[f32],
    h_in: usize,
    w_in: usize,
    h_out: usize,
    w_out: usize,
) -> Result<Vec<f32>> {
    if h_in == 0 || w_in == 0 || h_out == 0 || w_out == 0 {
        return Err(invalid!(
            "frame and output dims must be >= 1, got {h_in}x{w_in} -> {h_out}x{w_out}"
        ));
    }
    if frame.len() != h_in * w_in {
        return Err(crate::error::shape_err!(
            "frame of {h_in}x{w_in} needs {} samples, got {}",
            h_in * w_in,
            frame.len()
        ));
    }
    let mut out = Vec::with_capacity(h_out * w_out);
    for ho in 0..h_out {
        let mut sh = (ho as f64 + 0.5) * (h_in as f64 / h_out as f64) - 0.5;
        if sh < 0.0 {
            sh = 0.0;
        }
        if sh > (h_in - 1) as f64 {
            sh = (h_in - 1) as f64;
        }
        let h0 = sh as usize;
        let h1 = if h0 + 1 < h_in { h0 + 1 } else { h_in - 1 };
        let fh = sh - h0 as f64;
        for wo in 0..w_out {
            let mut sw = (wo as f64 + 0.5) * (w_in as f64 / w_out as f64) - 0.5;
            if sw < 0.0 {
                sw = 0.0;
            }
            if sw > (w_in - 1) as f64 {
                sw = (w_in - 1) as f64;
            }
            let w0 = sw as usize;
            let w1 = if w0 + 1 < w_in { w0 + 1 } else { w_in - 1 };
            let fw = sw - w0 as f64;

            let x00 = frame[h0 * w_in + w0] as f64;
            let x01 = frame[h0 * w_in + w1] as f64;
            let x10 = frame[h1 * w_in + w0] as f64;
            let x11 = frame[h1 * w_in + w1] as f64;
            let v = x00 * (1.0 - fh) * (1.0 - fw)
                + x01 * (1.0 - fh) * fw
                + x10 * fh * (1.0 - fw)
                + x11 * fh * fw;
            out.push(v as f32);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::local_branch;
    use crate::latent::random_latent;
    use crate::ops::bilinear_resample;
    use crate::rng::SplitMix64;

    #[test]
    fn guard_rejects_oversized_latents() {
        let w = AttentionWeights::identity(1, 2, 1).unwrap();
        let z = VideoLatent::zeros([1, 1, 129, 128, 1]).unwrap();
        let err = full_attention_block(&z, &w, &LayerNorm::identity(1), &LayerNorm::identity(1))
            .unwrap_err();
        assert!(matches!(err, Error::ResourceLimit(_)));
    }

    #[test]
    fn single_token_runs() {
        let w = AttentionWeights::random(4, 8, 1, 0).unwrap();
        let z = random_latent([1, 1, 1, 1, 4], 1).unwrap();
        let out =
            full_attention_block(&z, &w, &LayerNorm::identity(4), &LayerNorm::identity(4)).unwrap();
        assert_eq!(out.dims(), z.dims());
    }

    #[test]
    fn spatial_permutation_equivariance() {
        // With one frame there is no positional structure: permuting (h, w)
        // sites permutes outputs identically.
        let w = AttentionWeights::random(4, 8, 1, 7).unwrap();
        let na = LayerNorm::identity(4);
        let nf = LayerNorm::identity(4);
        let z = random_latent([1, 1, 2, 2, 4], 9).unwrap();
        let out = full_attention_block(&z, &w, &na, &nf).unwrap();

        // Swap sites (0,0) and (1,1).
        let mut swapped = z.clone();
        for d in 0..4 {
            let a = z.get(0, 0, 0, 0, d);
            let b = z.get(0, 0, 1, 1, d);
            swapped.set(0, 0, 0, 0, d, b);
            swapped.set(0, 0, 1, 1, d, a);
        }
        let out_sw = full_attention_block(&swapped, &w, &na, &nf).unwrap();
        // Exact in real arithmetic; the permuted reduction order moves the
        // last float bits.
        let close = |a: f32, b: f32| (a - b).abs() < 1e-6;
        for d in 0..4 {
            assert!(close(out_sw.get(0, 0, 0, 0, d), out.get(0, 0, 1, 1, d)));
            assert!(close(out_sw.get(0, 0, 1, 1, d), out.get(0, 0, 0, 0, d)));
            assert!(close(out_sw.get(0, 0, 0, 1, d), out.get(0, 0, 0, 1, d)));
        }
    }

    #[test]
    fn oracle_matches_single_window_local_branch_bitwise() {
        let (cfg, params, z) = degenerate_setup(3, [1, 2, 4, 4, 4]).unwrap();
        let via_branch = local_branch(&z, &cfg, &params).unwrap();
        let via_oracle =
            full_attention_block(&z, &params.base, &params.norm_attn, &params.norm_ffn).unwrap();
        assert_eq!(via_branch.data(), via_oracle.data());
    }

    #[test]
    fn degenerate_equivalence_passes_and_is_deterministic() {
        let a = assert_degenerate_equivalence(0, [1, 2, 8, 8, 8], 1e-5).unwrap();
        assert!(a.pass, "max abs diff {}", a.max_abs_diff);
        let b = assert_degenerate_equivalence(0, [1, 2, 8, 8, 8], 1e-5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn perturbed_weight_fails_equivalence() {
        let (cfg, mut params, z) = degenerate_setup(0, [1, 2, 8, 8, 8]).unwrap();
        // Poke a decomposed-path weight: the global compression tap.
        let mut w = params.global_compress.weights().to_vec();
        w[0] += 1e-2;
        params.global_compress =
            crate::ops::DepthwiseKernel2D::new(1, 8, w, params.global_compress.bias().to_vec())
                .unwrap();
        let report = compare_block_to_oracle(&z, 500.0, &cfg, &params, 1e-5).unwrap();
        assert!(!report.pass);
        assert!(report.max_abs_diff > 1e-5);
    }

    #[test]
    fn infinite_tolerance_always_passes() {
        let (cfg, params, z) = degenerate_setup(1, [1, 1, 4, 4, 4]).unwrap();
        let report = compare_block_to_oracle(&z, 0.0, &cfg, &params, f64::INFINITY).unwrap();
        assert!(report.pass);
    }

    #[test]
    fn brute_force_matches_production_resampler() {
        let mut rng = SplitMix64::new(17);
        for case in 0..50 {
            let h_in = 1 + (rng.next_u64() % 9) as usize;
            let w_in = 1 + (rng.next_u64() % 9) as usize;
            let h_out = 1 + (rng.next_u64() % 12) as usize;
            let w_out = 1 + (rng.next_u64() % 12) as usize;
            let frame: Vec<f32> = (0..h_in * w_in).map(|_| rng.next_f32()).collect();
            let z = VideoLatent::new([1, 1, h_in, w_in, 1], frame.clone()).unwrap();
            let fast = bilinear_resample(&z, h_out, w_out).unwrap();
            let slow = brute_force_resample(&frame, h_in, w_in, h_out, w_out).unwrap();
            for (a, b) in fast.data().iter().zip(&slow) {
                assert!(
                    (a - b).abs() <= 1e-6,
                    "case {case}: {h_in}x{w_in} -> {h_out}x{w_out} diverged: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn brute_force_hand_values() {
        let out = brute_force_resample(&[0.0, 2.0], 1, 2, 1, 4).unwrap();
        assert_eq!(out, vec![0.0, 0.5, 1.5, 2.0]);
        let constant = brute_force_resample(&[0.7; 6], 2, 3, 5, 4).unwrap();
        assert!(constant.iter().all(|&v| (v - 0.7).abs() < 1e-7));
    }
}
