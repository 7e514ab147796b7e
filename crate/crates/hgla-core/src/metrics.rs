//! Detail-loss metric: for each downsample factor `2^k`, `k = 3..=5`, the
//! video is bilinearly downsampled and upsampled back, and the mean squared
//! error against the original is recorded. Smooth videos lose nothing in the
//! round trip; high-frequency detail shows up as reconstruction error, so a
//! larger value means more fine detail was present.

use alloc::vec::Vec;

use crate::error::invalid;
use crate::latent::VideoLatent;
use crate::ops::bilinear_resample;
use crate::Result;

/// The enumerated exponents and their downsample factors 8, 16, 32.
pub const FACTOR_EXPONENTS: [u32; 3] = [3, 4, 5];

/// Per-factor reconstruction errors and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct HdMseResult {
    /// `(factor, mse)` pairs in factor order 8, 16, 32.
    pub per_factor: Vec<(usize, f64)>,
    pub total: f64,
}

/// Computes the metric for a latent whose channels are treated as color
/// planes. Requires `H >= 32` and `W >= 32` so the strongest factor still
/// produces at least one sample per axis.
pub fn hd_mse(v: &VideoLatent) -> Result<HdMseResult> {
    let (h, w) = (v.height(), v.width());
    let min_size = 1usize << FACTOR_EXPONENTS[FACTOR_EXPONENTS.len() - 1];
    if h < min_size || w < min_size {
        return Err(invalid!(
            "frames must be at least {min_size}x{min_size}, got {h}x{w}"
        ));
    }
    let mut per_factor = Vec::with_capacity(FACTOR_EXPONENTS.len());
    let mut total = 0.0;
    for exp in FACTOR_EXPONENTS {
        let factor = 1usize << exp;
        let down = bilinear_resample(v, h.div_ceil(factor), w.div_ceil(factor))?;
        let rec = bilinear_resample(&down, h, w)?;
        let mut sum = 0.0f64;
        for (a, b) in v.data().iter().zip(rec.data()) {
            let d = (*a - *b) as f64;
            sum += d * d;
        }
        let mse = sum / v.len() as f64;
        per_factor.push((factor, mse));
        total += mse;
    }
    Ok(HdMseResult { per_factor, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::random_latent;
    use crate::oracle::brute_force_resample;

    #[test]
    fn constant_video_scores_zero() {
        let v = VideoLatent::new([1, 2, 32, 32, 3], alloc::vec![0.6; 2 * 32 * 32 * 3]).unwrap();
        let result = hd_mse(&v).unwrap();
        assert_eq!(result.total, 0.0);
        for (_, mse) in result.per_factor {
            assert_eq!(mse, 0.0);
        }
    }

    #[test]
    fn rejects_small_frames() {
        let v = random_latent([1, 1, 16, 16, 1], 0).unwrap();
        assert!(hd_mse(&v).is_err());
        let v = random_latent([1, 1, 32, 16, 1], 0).unwrap();
        assert!(hd_mse(&v).is_err());
    }

    #[test]
    fn matches_brute_force_oracle() {
        let v = random_latent([1, 2, 64, 64, 1], 42).unwrap();
        let result = hd_mse(&v).unwrap();
        for (i, exp) in FACTOR_EXPONENTS.iter().enumerate() {
            let factor = 1usize << exp;
            let (hd, wd) = (64usize.div_ceil(factor), 64usize.div_ceil(factor));
            let mut sum = 0.0f64;
            let mut count = 0usize;
            for t in 0..2 {
                let frame: Vec<f32> = (0..64 * 64).map(|i| v.data()[t * 64 * 64 + i]).collect();
                let down = brute_force_resample(&frame, 64, 64, hd, wd).unwrap();
                let rec = brute_force_resample(&down, hd, wd, 64, 64).unwrap();
                for (a, b) in frame.iter().zip(&rec) {
                    let d = (*a - *b) as f64;
                    sum += d * d;
                    count += 1;
                }
            }
            let oracle = sum / count as f64;
            let got = result.per_factor[i].1;
            assert!(
                (got - oracle).abs() < 1e-6,
                "factor {factor}: {got} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn scale_equivariance() {
        let v = random_latent([1, 1, 64, 64, 2], 7).unwrap();
        let c = 3.0f32;
        let scaled = VideoLatent::new(v.dims(), v.data().iter().map(|x| x * c).collect()).unwrap();
        let base = hd_mse(&v).unwrap();
        let big = hd_mse(&scaled).unwrap();
        for ((_, a), (_, b)) in base.per_factor.iter().zip(&big.per_factor) {
            let rel = (b - a * (c as f64) * (c as f64)).abs() / b.max(1e-30);
            assert!(rel < 1e-6, "scale equivariance violated: {a} vs {b}");
        }
    }

    #[test]
    fn offset_invariance() {
        let v = random_latent([1, 1, 64, 64, 1], 9).unwrap();
        let shifted =
            VideoLatent::new(v.dims(), v.data().iter().map(|x| x + 2.5).collect()).unwrap();
        let base = hd_mse(&v).unwrap();
        let moved = hd_mse(&shifted).unwrap();
        for ((_, a), (_, b)) in base.per_factor.iter().zip(&moved.per_factor) {
            assert!((a - b).abs() < 1e-6, "offset changed MSE: {a} vs {b}");
        }
    }

    #[test]
    fn stronger_factors_usually_lose_more() {
        // Monotone ordering needs content with spatial correlation, which
        // real videos have; white noise is featureless across scales and
        // orders factors near-randomly. Smooth fields come from upsampling
        // low-resolution noise.
        let mut wins = 0;
        for seed in 0..100 {
            let coarse = random_latent([1, 1, 16, 16, 1], seed).unwrap();
            let v = crate::ops::bilinear_resample(&coarse, 64, 64).unwrap();
            let result = hd_mse(&v).unwrap();
            if result.per_factor[2].1 >= result.per_factor[0].1 {
                wins += 1;
            }
        }
        assert!(
            wins >= 95,
            "monotone ordering held in only {wins}/100 trials"
        );
    }
}
