//! Deterministic pseudo-randomness shared by the partition and the sandbox.
//!
//! Everything that needs randomness in this crate draws from [`SplitMix64`]
//! and the helpers here. All floating-point paths go through `libm` so the
//! exact bit patterns are reproducible across platforms, not just across
//! runs on one machine.

/// SplitMix64 (Sebastiano Vigna). Fast, good diffusion, non-cryptographic.
///
/// The output sequence for a given seed is fixed forever; keyed projection
/// vectors and every synthetic artifact depend on it staying that way.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform double in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        const DEN: f64 = (1u64 << 53) as f64;
        ((self.next_u64() >> 11) as f64) / DEN
    }

    /// Uniform integer in [0, n). Rejection-free modulo is fine here; the
    /// bias for the n values used in this crate (< 2^32) is < 2^-32.
    #[inline]
    pub fn next_below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }

    /// One pair of independent standard normals via the Box-Muller transform.
    ///
    /// A zero uniform (probability 2^-53 per draw) is mapped to the smallest
    /// positive normal double so the logarithm stays finite.
    pub fn next_normal_pair(&mut self) -> (f64, f64) {
        let mut u1 = self.next_f64();
        let u2 = self.next_f64();
        if u1 == 0.0 {
            u1 = f64::MIN_POSITIVE;
        }
        let radius = libm::sqrt(-2.0 * libm::log(u1));
        let theta = std::f64::consts::TAU * u2;
        (radius * libm::cos(theta), radius * libm::sin(theta))
    }

    /// Index drawn from the discrete distribution proportional to `weights`.
    ///
    /// Weights must be non-negative with a positive sum; entries with zero
    /// weight are never selected.
    pub fn next_weighted(&mut self, weights: &[f64]) -> usize {
        debug_assert!(!weights.is_empty());
        let total: f64 = weights.iter().sum();
        debug_assert!(total > 0.0 && total.is_finite());
        let mut point = self.next_f64() * total;
        let mut last_positive = 0;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                last_positive = i;
                if point < w {
                    return i;
                }
                point -= w;
            }
        }
        // Rounding can push `point` past the final bucket; fall back to the
        // last selectable index.
        last_positive
    }
}
