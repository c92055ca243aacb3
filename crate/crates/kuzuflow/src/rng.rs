//! Deterministic pseudo-random number generation.
//!
//! Every random decision in the crate (parameter init, epoch shuffles,
//! dropout masks, split assignment) flows from a single 64-bit master seed.
//! Purpose-specific streams are derived with [`split_seed`], so adding a new
//! consumer never perturbs the draws of an existing one. The generator is
//! xoshiro256++ seeded through SplitMix64, both fixed algorithms with
//! published reference outputs, so runs reproduce bit-for-bit across
//! platforms and crate versions.

/// SplitMix64 step: advances `state` and returns the next output.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a master seed.
///
/// Stream `index` is folded into the master seed with the golden-ratio
/// increment before one SplitMix64 scramble, the construction SplitMix64
/// itself uses for sub-stream splitting.
pub fn split_seed(master: u64, index: u64) -> u64 {
    let mut s = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    splitmix64(&mut s)
}

/// Fixed purpose indices for [`split_seed`]. Never reorder: the numbering is
/// part of the reproducibility contract.
pub mod stream {
    /// Parameter initialization.
    pub const INIT: u64 = 1;
    /// Per-epoch shuffle; epoch `e` uses `split_seed(split_seed(master, SHUFFLE), e)`.
    pub const SHUFFLE: u64 = 2;
    /// Dropout masks during training.
    pub const DROPOUT: u64 = 3;
    /// Stratified split; class `c` uses `split_seed(split_seed(master, SPLIT), c)`.
    pub const SPLIT: u64 = 4;
}

/// xoshiro256++ generator.
#[derive(Debug, Clone)]
pub struct Rng {
    s: [u64; 4],
}

impl Rng {
    /// Seeds the four state words from SplitMix64, per the reference seeding.
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng { s }
    }

    /// Convenience constructor for a derived purpose stream.
    pub fn for_stream(master: u64, purpose: u64) -> Self {
        Rng::new(split_seed(master, purpose))
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[0]
            .wrapping_add(self.s[3])
            .rotate_left(23)
            .wrapping_add(self.s[0]);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 24 bits of mantissa, exactly representable in f32.
    pub fn next_f32(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 * (1.0 / (1u32 << 24) as f32)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f32, hi: f32) -> f32 {
        lo + (hi - lo) * self.next_f32()
    }

    /// Uniform integer in [0, n) via Lemire's widening-multiply method
    /// (unbiased, no rejection loop in the common path).
    pub fn next_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        let n = n as u64;
        let mut x = self.next_u64();
        let mut m = (x as u128).wrapping_mul(n as u128);
        let mut l = m as u64;
        if l < n {
            let t = n.wrapping_neg() % n;
            while l < t {
                x = self.next_u64();
                m = (x as u128).wrapping_mul(n as u128);
                l = m as u64;
            }
        }
        (m >> 64) as usize
    }

    pub fn bernoulli(&mut self, p: f32) -> bool {
        self.next_f32() < p
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xoshiro_reference_vector() {
        // Reference sequence for xoshiro256++ with state seeded by SplitMix64(0),
        // cross-checked against the published C implementations of both.
        let mut rng = Rng::new(0);
        let first: Vec<u64> = (0..3).map(|_| rng.next_u64()).collect();
        assert_eq!(
            first,
            vec![
                0x53175d61490b23df,
                0x61da6f3dc380d507,
                0x5c0fdf91ec9a7bfc
            ]
        );
    }

    #[test]
    fn streams_are_independent_and_reproducible() {
        let a1 = Rng::for_stream(7, stream::INIT).next_u64();
        let a2 = Rng::for_stream(7, stream::INIT).next_u64();
        let b = Rng::for_stream(7, stream::SHUFFLE).next_u64();
        assert_eq!(a1, a2);
        assert_ne!(a1, b);
    }

    #[test]
    fn next_below_is_in_range() {
        let mut rng = Rng::new(42);
        for _ in 0..10_000 {
            assert!(rng.next_below(7) < 7);
        }
    }

    #[test]
    fn next_f32_is_in_unit_interval() {
        let mut rng = Rng::new(9);
        for _ in 0..10_000 {
            let v = rng.next_f32();
            assert!((0.0..1.0).contains(&v));
        }
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = Rng::new(3);
        let mut v: Vec<usize> = (0..100).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
    }
}
