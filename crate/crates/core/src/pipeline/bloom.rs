//! Concurrent Bloom filter over 128-bit content digests.

use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;

const STRIPES: usize = 64;

pub struct DigestFilter {
    bits: Box<[AtomicU64]>,
    m: u64,
    k: u32,
    /// Serializes check-and-insert of equal digests, so two workers seeing
    /// the same page at once cannot both call it new.
    stripes: Box<[Mutex<()>]>,
}

impl DigestFilter {
    /// Sized for `expected` insertions at false-positive rate `fp_rate`.
    pub fn new(expected: u64, fp_rate: f64) -> Self {
        let n = expected.max(1) as f64;
        let ln2 = std::f64::consts::LN_2;
        let m = ((-n * fp_rate.ln()) / (ln2 * ln2)).ceil().max(64.0) as u64;
        let k = ((m as f64 / n) * ln2).round().clamp(1.0, 32.0) as u32;
        Self::with_shape(m, k)
    }

    pub fn with_shape(m: u64, k: u32) -> Self {
        let words = m.div_ceil(64) as usize;
        DigestFilter {
            bits: (0..words).map(|_| AtomicU64::new(0)).collect(),
            m: words as u64 * 64,
            k,
            stripes: (0..STRIPES).map(|_| Mutex::new(())).collect(),
        }
    }

    pub fn bits(&self) -> u64 {
        self.m
    }

    pub fn hashes(&self) -> u32 {
        self.k
    }

    fn positions(&self, digest: u128) -> impl Iterator<Item = u64> + '_ {
        let h1 = digest as u64;
        let h2 = ((digest >> 64) as u64) | 1;
        (0..self.k as u64).map(move |i| h1.wrapping_add(i.wrapping_mul(h2)) % self.m)
    }

    pub fn contains(&self, digest: u128) -> bool {
        self.positions(digest)
            .all(|p| self.bits[(p / 64) as usize].load(Ordering::Relaxed) & (1 << (p % 64)) != 0)
    }

    /// Inserts `digest`; returns true if it was (probably) present already.
    pub fn check_and_insert(&self, digest: u128) -> bool {
        let _guard = self.stripes[(digest as usize) % STRIPES].lock();
        let mut present = true;
        for p in self.positions(digest) {
            let mask = 1u64 << (p % 64);
            let old = self.bits[(p / 64) as usize].fetch_or(mask, Ordering::Relaxed);
            present &= old & mask != 0;
        }
        present
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_follows_target_rate() {
        let f = DigestFilter::new(1_000_000, 1e-6);
        // m = -n ln p / ln^2 2, k = m/n ln 2
        assert!((28_700_000..28_800_000).contains(&f.bits()), "{}", f.bits());
        assert_eq!(f.hashes(), 20);
    }

    #[test]
    fn no_false_negatives_and_few_false_positives() {
        let f = DigestFilter::new(10_000, 1e-3);
        let collisions = (0..10_000u128)
            .filter(|i| f.check_and_insert(xxhash_rust::xxh3::xxh3_128(&i.to_le_bytes())))
            .count();
        assert!(collisions < 30, "{collisions}");
        for i in 0..10_000u128 {
            assert!(f.contains(xxhash_rust::xxh3::xxh3_128(&i.to_le_bytes())));
        }
        let fps = (10_000..110_000u128)
            .filter(|i| f.contains(xxhash_rust::xxh3::xxh3_128(&i.to_le_bytes())))
            .count();
        assert!(fps < 300, "{fps} false positives in 100k");
    }
}
