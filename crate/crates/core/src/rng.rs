//! Seeded randomness shared by every generator in the crate.
//!
//! All draws come from xoshiro256++ seeded through SplitMix64
//! (`Xoshiro256PlusPlus::seed_from_u64`). Uniform reals use the top 53 bits of
//! each output; Gaussian samples use the Marsaglia polar method, caching the
//! second value of each accepted pair. Shuffles are Fisher-Yates from the last
//! index down with rejection-sampled bounded integers. Nothing here depends
//! on `rand` distribution code, so streams stay fixed across crate upgrades.

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: Xoshiro256PlusPlus,
    spare_normal: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..bound`.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % bound;
            }
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(v) = self.spare_normal.take() {
            return v;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let k = (-2.0 * s.ln() / s).sqrt();
                self.spare_normal = Some(v * k);
                return u * k;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// Stable 64-bit seed derived from a master seed and labels.
///
/// First eight bytes (little-endian) of SHA-256 over the master seed and each
/// label, every part length-prefixed.
pub fn derive_seed(master: u64, labels: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for label in labels {
        h.update((label.len() as u64).to_le_bytes());
        h.update(label);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_stream() {
        // Pinned outputs; a change here changes every dataset built so far.
        let mut rng = SeededRng::new(1);
        let first: Vec<u64> = (0..3).map(|_| rng.next_u64()).collect();
        let mut again = SeededRng::new(1);
        assert_eq!(first, (0..3).map(|_| again.next_u64()).collect::<Vec<_>>());
        assert_eq!(first, GOLDEN_U64);
        let mut rng = SeededRng::new(1);
        let normals: Vec<f64> = (0..2).map(|_| rng.standard_normal()).collect();
        for (a, b) in normals.iter().zip(GOLDEN_NORMAL) {
            assert!((a - b).abs() < 1e-15, "{normals:?}");
        }
    }

    const GOLDEN_U64: [u64; 3] = [14971601782005023387, 13781649495232077965, 1847458086238483744];
    const GOLDEN_NORMAL: [f64; 2] = [0.7497765692000015, 0.5945638545653684];

    #[test]
    fn below_is_in_range_and_shuffle_permutes() {
        let mut rng = SeededRng::new(3);
        assert!((0..1000).all(|_| rng.below(7) < 7));
        let mut v: Vec<u32> = (0..50).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }

    #[test]
    fn derived_seeds_depend_on_every_part() {
        let a = derive_seed(1, &[b"LJ001-0001", &1u32.to_le_bytes()]);
        assert_eq!(a, derive_seed(1, &[b"LJ001-0001", &1u32.to_le_bytes()]));
        assert_ne!(a, derive_seed(2, &[b"LJ001-0001", &1u32.to_le_bytes()]));
        assert_ne!(a, derive_seed(1, &[b"LJ001-0002", &1u32.to_le_bytes()]));
        assert_ne!(a, derive_seed(1, &[b"LJ001-0001", &2u32.to_le_bytes()]));
        // Length prefixing keeps label boundaries unambiguous.
        assert_ne!(derive_seed(0, &[b"ab", b"c"]), derive_seed(0, &[b"a", b"bc"]));
    }
}
