use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Derive a child seed from a parent seed and a text label.
///
/// FNV-1a over the seed bytes followed by the label bytes; stable across
/// platforms and processes, unlike the std hasher.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in seed.to_le_bytes().into_iter().chain(label.bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Deterministic random stream keyed by a 64-bit seed.
///
/// `split` derives an independent child stream from a label, so any two
/// labels give unrelated streams regardless of how much the parent has
/// already drawn. Every stochastic operation in the crate takes one of
/// these explicitly.
#[derive(Clone, Debug)]
pub struct StreamRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl StreamRng {
    pub fn new(seed: u64) -> Self {
        StreamRng { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream for `label`; the parent is unaffected.
    pub fn split(&self, label: &str) -> StreamRng {
        StreamRng::new(derive_seed(self.seed, label))
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen()
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Uniform integer in [lo, hi].
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.gen_range(lo..=hi)
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        xs.shuffle(&mut self.inner);
    }
}
