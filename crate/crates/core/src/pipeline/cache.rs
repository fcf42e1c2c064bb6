//! Approximate LRU set of recently seen URL fingerprints.
//!
//! Set-associative: a fingerprint maps to one small set, kept in recency
//! order; a hit moves it to the front, a miss evicts the last way. Sets are
//! grouped into independently locked shards.

use parking_lot::Mutex;

const WAYS: usize = 8;
const SHARDS: usize = 64;

pub struct UrlCache {
    shards: Box<[Mutex<Box<[u128]>>]>,
    sets_per_shard: usize,
}

impl UrlCache {
    /// A cache holding roughly `capacity` fingerprints.
    pub fn new(capacity: usize) -> Self {
        let sets = capacity.div_ceil(WAYS).max(SHARDS);
        let sets_per_shard = sets.div_ceil(SHARDS);
        UrlCache {
            shards: (0..SHARDS)
                .map(|_| Mutex::new(vec![0u128; sets_per_shard * WAYS].into_boxed_slice()))
                .collect(),
            sets_per_shard,
        }
    }

    pub fn capacity(&self) -> usize {
        SHARDS * self.sets_per_shard * WAYS
    }

    /// Records `fp`; returns true if it was already cached.
    pub fn check_and_insert(&self, fp: u128) -> bool {
        // 0 marks an empty way.
        let fp = if fp == 0 { 1 } else { fp };
        let hi = (fp >> 64) as u64;
        let shard = (hi % SHARDS as u64) as usize;
        let set = ((hi / SHARDS as u64) % self.sets_per_shard as u64) as usize;
        let mut guard = self.shards[shard].lock();
        let ways = &mut guard[set * WAYS..(set + 1) * WAYS];
        match ways.iter().position(|&w| w == fp) {
            Some(i) => {
                ways[..=i].rotate_right(1);
                true
            }
            None => {
                ways.rotate_right(1);
                ways[0] = fp;
                false
            }
        }
    }
}
