//! Process-wide monotonic clock in milliseconds.
//!
//! All scheduling instants are measured from the same origin, so timestamps
//! recorded by a test server in the same process are directly comparable.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

fn origin() -> Instant {
    static ORIGIN: OnceLock<Instant> = OnceLock::new();
    *ORIGIN.get_or_init(Instant::now)
}

/// Milliseconds since the clock origin, rounded down.
pub fn now_ms() -> u64 {
    origin().elapsed().as_millis() as u64
}

/// Microseconds since the clock origin, rounded down.
pub fn now_us() -> u64 {
    origin().elapsed().as_micros() as u64
}

/// An instant that is guaranteed not to precede the true current time once
/// rounded to milliseconds. Used for fetch end times, so that delays computed
/// from them are never shorter than configured.
pub fn now_ms_ceil() -> u64 {
    let elapsed = origin().elapsed();
    let ms = elapsed.as_millis() as u64;
    if elapsed > Duration::from_millis(ms) {
        ms + 1
    } else {
        ms
    }
}
