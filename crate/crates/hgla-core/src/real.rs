use core::fmt::Debug;
use core::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Scalar abstraction shared by the single-precision model path and the
/// double-precision differentiation path.
///
/// All transcendental functions route through [`libm`] so results are bitwise
/// identical across platforms; `std` float intrinsics are never used.
pub trait Real:
    Copy
    + Debug
    + PartialOrd
    + PartialEq
    + Add<Output = Self>
    + AddAssign
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    /// Exponential restricted to non-positive arguments, as produced by
    /// max-subtracted softmax. The `f32` implementation is branch-free so
    /// the softmax loop vectorizes; values agree with [`Real::exp`] on the
    /// shared domain.
    fn exp_nonpos(self) -> Self {
        self.exp()
    }
    fn abs(self) -> Self;
    fn max(self, other: Self) -> Self;
    fn is_finite(self) -> bool;
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn exp(self) -> Self {
        exp32(self)
    }

    #[inline]
    fn exp_nonpos(self) -> Self {
        exp32_nonpos(self)
    }

    #[inline]
    fn abs(self) -> Self {
        f32::from_bits(self.to_bits() & 0x7fff_ffff)
    }

    #[inline]
    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    #[inline]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }

    #[inline]
    fn exp(self) -> Self {
        libm::exp(self)
    }

    #[inline]
    fn abs(self) -> Self {
        f64::from_bits(self.to_bits() & 0x7fff_ffff_ffff_ffff)
    }

    #[inline]
    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Single-precision exponential.
///
/// Degree-5 polynomial over the reduced range `[-ln2/2, ln2/2]` with exact
/// power-of-two reconstruction. Relative error stays below 3e-7, and the
/// function is a pure deterministic `f32` computation, so softmax built on it
/// is reproducible bit for bit everywhere. It is also several times faster
/// than a correctly-rounded `expf`, which matters because attention maps call
/// it once per score entry.
#[inline]
#[allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x >= MIN)` must catch NaN
pub(crate) fn exp32(x: f32) -> f32 {
    const LOG2_E: f32 = core::f32::consts::LOG2_E;
    // ln(2) split into a coarse part (trailing mantissa zeros, so n * LN2_HI
    // is exact) and a correction part.
    const LN2_HI: f32 = 0.693_359_4; // bits 0x3F31_7000
    const LN2_LO: f32 = -2.121_944_4e-4;
    // Arguments below MIN_ARG flush to zero (the true result is at the edge
    // of the subnormal range); above MAX_ARG the result overflows.
    const MIN_ARG: f32 = -87.336_54;
    const MAX_ARG: f32 = 88.722_83;

    if !(x >= MIN_ARG) {
        // Catches x < MIN_ARG and NaN alike.
        return if x.is_nan() { x } else { 0.0 };
    }
    if x > MAX_ARG {
        return f32::INFINITY;
    }

    // x = n*ln2 + r with |r| <= ln2/2.
    let n = round_ties(x * LOG2_E);
    let r = x - n * LN2_HI - n * LN2_LO;

    // exp(r) - 1 - r via the Cephes minimax polynomial, then reassembled.
    let mut p = 1.987_569_2e-4f32;
    p = p * r + 1.398_199_9e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 1.666_666_5e-1;
    p = p * r + 5.000_000_3e-1;
    let p = p * r * r + r + 1.0;

    // Scale by 2^n through the exponent bits. The single-step path needs the
    // result exponent to stay normal (p sits in [0.70, 1.42], biased exponent
    // 126 or 127); near the subnormal edge, split the scaling in two so the
    // final multiply rounds into the subnormal range correctly.
    let n = n as i32;
    if n >= -124 {
        f32::from_bits((p.to_bits() as i32).wrapping_add(n << 23) as u32)
    } else {
        let partial = f32::from_bits((p.to_bits() as i32).wrapping_add((n + 64) << 23) as u32);
        partial * f32::from_bits(((-64 + 127) << 23) as u32)
    }
}

/// Branch-free variant of [`exp32`] for `x <= 0` (NaN-free input): arguments
/// are clamped into the representable band instead of branching on it, and
/// the exponent reconstruction always takes the two-step path, which is
/// exact wherever both paths apply. Agrees with [`exp32`] on
/// `[-87.33, 0]` bit for bit; below that it returns the clamp value
/// (~1.2e-38) where [`exp32`] flushes to zero, a difference no softmax can
/// see next to a unit-scale denominator.
#[inline]
pub(crate) fn exp32_nonpos(x: f32) -> f32 {
    const LOG2_E: f32 = core::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    const MIN_ARG: f32 = -87.336_54;

    let x = if x < MIN_ARG { MIN_ARG } else { x };
    let n = round_ties(x * LOG2_E);
    let r = x - n * LN2_HI - n * LN2_LO;

    let mut p = 1.987_569_2e-4f32;
    p = p * r + 1.398_199_9e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 1.666_666_5e-1;
    p = p * r + 5.000_000_3e-1;
    let p = p * r * r + r + 1.0;

    // n is in [-126, 1]; shift by +64 first so the intermediate exponent
    // stays normal, then scale down. Exact whenever the single-step scaling
    // would be.
    let n = n as i32;
    let partial = f32::from_bits((p.to_bits() as i32).wrapping_add((n + 64) << 23) as u32);
    partial * f32::from_bits(((-64 + 127) << 23) as u32)
}

#[inline]
fn round_ties(x: f32) -> f32 {
    // Round to nearest integer; |x| < 2^22 in every caller, so the
    // add-magic-subtract trick is exact.
    const MAGIC: f32 = 12_582_912.0; // 1.5 * 2^23
    if x >= 0.0 {
        (x + MAGIC) - MAGIC
    } else {
        (x - MAGIC) + MAGIC
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp32_matches_reference_over_working_range() {
        let mut worst = 0.0f64;
        let mut x = -60.0f32;
        while x < 60.0 {
            let got = exp32(x) as f64;
            let want = (x as f64).exp();
            let rel = ((got - want) / want).abs();
            if rel > worst {
                worst = rel;
            }
            x += 0.000_37;
        }
        assert!(worst < 3e-7, "worst relative error {worst}");
    }

    #[test]
    fn exp32_edge_cases() {
        assert_eq!(exp32(0.0), 1.0);
        assert_eq!(exp32(f32::NEG_INFINITY), 0.0);
        assert_eq!(exp32(-200.0), 0.0);
        assert_eq!(exp32(200.0), f32::INFINITY);
        assert!(exp32(f32::NAN).is_nan());
        // Deep negative arguments must not blow up even in the subnormal tail.
        let tiny = exp32(-100.0);
        assert!((0.0..1e-40).contains(&tiny));
    }

    #[test]
    fn f64_exp_is_libm() {
        assert_eq!(Real::exp(1.0f64), libm::exp(1.0));
    }
}
