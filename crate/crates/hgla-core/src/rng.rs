//! Deterministic pseudo-random generation.
//!
//! Everything random in this crate flows through [`SplitMix64`]: a 64-bit
//! state advanced by the golden-gamma constant and finalized with the
//! `xorshift`-multiply mix from Vigna's reference implementation. The
//! generator is seeded directly with the caller's `u64` seed, uses only
//! integer arithmetic, and therefore yields bit-identical streams on every
//! platform.

/// SplitMix64 stream. Seeding rule: `state = seed`, each draw advances the
/// state by `0x9E3779B97F4A7C15` and mixes the result.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform value in `[-1, 1)`: the top 24 bits of the draw scaled by
    /// 2^-23, shifted down by one. Exactly representable in `f32`.
    pub fn next_f32(&mut self) -> f32 {
        let bits = (self.next_u64() >> 40) as u32;
        bits as f32 * (1.0 / (1 << 23) as f32) - 1.0
    }

    /// Uniform value in `[-1, 1)` with 53 significant bits.
    pub fn next_f64(&mut self) -> f64 {
        let bits = self.next_u64() >> 11;
        bits as f64 * (1.0 / (1u64 << 52) as f64) - 1.0
    }

    /// Derives an independent stream for a named substream; used to give each
    /// parameter tensor its own seed from one root seed.
    pub fn derive(&self, stream: u64) -> SplitMix64 {
        let mut fork = SplitMix64::new(self.state ^ stream.wrapping_mul(0xA24B_AED4_963E_E407));
        fork.next_u64();
        fork
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_first_draws_for_seed_zero() {
        // Frozen from the reference SplitMix64 sequence for seed 0.
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(rng.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn floats_stay_in_range() {
        let mut rng = SplitMix64::new(12345);
        for _ in 0..10_000 {
            let x = rng.next_f32();
            assert!((-1.0..1.0).contains(&x));
            let y = rng.next_f64();
            assert!((-1.0..1.0).contains(&y));
        }
    }

    #[test]
    fn derived_streams_differ_from_parent() {
        let root = SplitMix64::new(7);
        let mut a = root.derive(1);
        let mut b = root.derive(2);
        assert_ne!(a.next_u64(), b.next_u64());
    }
}
