//! Deterministic pseudo-random number generation.
//!
//! The generator is xoshiro256++ (Blackman & Vigna, 2019), seeded by expanding
//! a single 64-bit seed through SplitMix64. Both algorithms are fixed here so
//! that the draw sequence is identical across runs, platforms, and dependency
//! upgrades; every derived quantity (floats, ranges, Gaussians, shuffles) is
//! defined in terms of `next_u64` below.
//!
//! Derivations:
//! - `next_f64`: top 53 bits of `next_u64`, scaled by 2^-53, giving a uniform
//!   draw in [0, 1).
//! - `below(n)`: `(next_u64 * n) >> 64` in 128-bit arithmetic.
//! - `gaussian`: Box-Muller, `sqrt(-2 ln(1-u1)) * cos(2 pi u2)`, consuming two
//!   uniform draws per call (the sine branch is discarded).
//! - `shuffle`: Fisher-Yates from the back using `below`.

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(SPLITMIX_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded deterministic generator. Identical seeds produce identical draw
/// sequences; all randomized operations in this crate take an `Rng` explicitly.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    state: [u64; 4],
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let state = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng { seed, state }
    }

    /// Independent generator for a named substream of `seed` (fold indices,
    /// trial indices, ...). Defined as `Rng::new(mix(seed, stream))`.
    pub fn substream(seed: u64, stream: u64) -> Self {
        let mut sm = seed ^ stream.wrapping_mul(SPLITMIX_GAMMA);
        Rng::new(splitmix64(&mut sm))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform draw in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard-normal draw scaled to N(mu, sigma^2).
    pub fn gaussian(&mut self, mu: f64, sigma: f64) -> f64 {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        mu + sigma * r * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
