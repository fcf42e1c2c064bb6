//! Fetching, parsing and name resolution around the lock-free queues.

pub mod bloom;
pub mod cache;
pub mod digest;
pub mod dns;
pub mod fetch;
pub mod fetch_data;
pub mod html;
pub mod http;
pub mod parse;
pub mod robots;

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

/// Counters shared by fetch and parse workers.
#[derive(Debug, Default)]
pub struct PipelineStats {
    pub fetched: AtomicU64,
    pub fetch_errors: AtomicU64,
    pub bytes_fetched: AtomicU64,
    pub robots_fetched: AtomicU64,
    pub robots_blocked: AtomicU64,
    pub fetch_filtered: AtomicU64,
    pub dropped_urls: AtomicU64,
    pub keepalive_reuses: AtomicU64,
    pub todo_waits: AtomicU64,
    pub parsed: AtomicU64,
    pub parse_errors: AtomicU64,
    pub links_found: AtomicU64,
    pub links_invalid: AtomicU64,
    pub links_filtered: AtomicU64,
    pub cache_hits: AtomicU64,
    pub cache_misses: AtomicU64,
    pub archetypes: AtomicU64,
    pub duplicates: AtomicU64,
    pub stored: AtomicU64,
    pub store_errors: AtomicU64,
}

impl PipelineStats {
    /// Every counter by name.
    pub fn snapshot(&self) -> Vec<(&'static str, u64)> {
        let get = |c: &AtomicU64| c.load(Ordering::Relaxed);
        vec![
            ("fetched", get(&self.fetched)),
            ("fetch_errors", get(&self.fetch_errors)),
            ("bytes_fetched", get(&self.bytes_fetched)),
            ("robots_fetched", get(&self.robots_fetched)),
            ("robots_blocked", get(&self.robots_blocked)),
            ("fetch_filtered", get(&self.fetch_filtered)),
            ("dropped_urls", get(&self.dropped_urls)),
            ("keepalive_reuses", get(&self.keepalive_reuses)),
            ("todo_waits", get(&self.todo_waits)),
            ("parsed", get(&self.parsed)),
            ("parse_errors", get(&self.parse_errors)),
            ("links_found", get(&self.links_found)),
            ("links_invalid", get(&self.links_invalid)),
            ("links_filtered", get(&self.links_filtered)),
            ("cache_hits", get(&self.cache_hits)),
            ("cache_misses", get(&self.cache_misses)),
            ("archetypes", get(&self.archetypes)),
            ("duplicates", get(&self.duplicates)),
            ("stored", get(&self.stored)),
            ("store_errors", get(&self.store_errors)),
        ]
    }
}

/// Exponential backoff for polling an empty queue: each wait doubles the
/// next one up to a cap; a successful poll resets it.
#[derive(Debug, Clone)]
pub struct Backoff {
    min: Duration,
    max: Duration,
    current: Duration,
}

impl Backoff {
    pub fn new(min: Duration, max: Duration) -> Self {
        Backoff { min, max, current: min }
    }

    /// The delay the next [`wait`](Self::wait) will sleep.
    pub fn current(&self) -> Duration {
        self.current
    }

    pub fn wait(&mut self) {
        std::thread::sleep(self.current);
        self.grow();
    }

    pub fn grow(&mut self) {
        self.current = (self.current * 2).min(self.max);
    }

    pub fn reset(&mut self) {
        self.current = self.min;
    }
}
