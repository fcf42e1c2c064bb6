//! Name resolution for newly discovered hosts.

use std::collections::HashMap;
use std::io;
use std::net::{IpAddr, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam::channel::{Receiver, RecvTimeoutError, Sender};

use crate::burl::host_of_scheme_authority;
use crate::distributor::Request;
use crate::workbench::{Released, VisitState, Workbench};

pub trait Resolver: Send + Sync {
    fn resolve(&self, host: &str) -> io::Result<IpAddr>;
}

/// The operating system's resolver.
#[derive(Debug, Default)]
pub struct SystemResolver;

impl Resolver for SystemResolver {
    fn resolve(&self, host: &str) -> io::Result<IpAddr> {
        let bare = host.trim_start_matches('[').trim_end_matches(']');
        if let Ok(ip) = bare.parse() {
            return Ok(ip);
        }
        (bare, 0)
            .to_socket_addrs()?
            .next()
            .map(|a| a.ip())
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("no address for {host}")))
    }
}

/// A fixed table, falling back to an optional function.
pub struct StaticResolver {
    table: HashMap<String, IpAddr>,
    fallback: Option<Box<dyn Fn(&str) -> Option<IpAddr> + Send + Sync>>,
}

impl StaticResolver {
    pub fn new(table: HashMap<String, IpAddr>) -> Self {
        StaticResolver { table, fallback: None }
    }

    pub fn from_fn(f: impl Fn(&str) -> Option<IpAddr> + Send + Sync + 'static) -> Self {
        StaticResolver {
            table: HashMap::new(),
            fallback: Some(Box::new(f)),
        }
    }
}

impl Resolver for StaticResolver {
    fn resolve(&self, host: &str) -> io::Result<IpAddr> {
        self.table
            .get(host)
            .copied()
            .or_else(|| self.fallback.as_ref().and_then(|f| f(host)))
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("unknown host {host}")))
    }
}

#[derive(Debug, Default)]
pub struct DnsStats {
    pub resolved: AtomicU64,
    pub failures: AtomicU64,
    pub discarded: AtomicU64,
}

pub struct DnsContext {
    pub rx: Receiver<Arc<VisitState>>,
    pub resolver: Arc<dyn Resolver>,
    pub workbench: Arc<Workbench>,
    pub requests: Sender<Request>,
    /// Hosts handed to DNS and not yet settled; shared with the distributor.
    pub resolving: Arc<AtomicU64>,
    pub max_attempts: u32,
    /// Delay before the first retry; doubles with each further attempt.
    pub retry_base: Duration,
    pub stats: Arc<DnsStats>,
}

struct Retry {
    due: Instant,
    attempts: u32,
    state: Arc<VisitState>,
}

/// Resolves hosts until `stop` is set.
pub fn dns_loop(ctx: &DnsContext, stop: &AtomicBool) {
    let mut retries: Vec<Retry> = Vec::new();
    while !stop.load(Ordering::Relaxed) {
        let now = Instant::now();
        if let Some(i) = retries.iter().position(|r| r.due <= now) {
            let r = retries.swap_remove(i);
            resolve_one(ctx, r.state, r.attempts, &mut retries);
            continue;
        }
        let wait = retries
            .iter()
            .map(|r| r.due - now)
            .min()
            .unwrap_or(Duration::from_millis(100))
            .min(Duration::from_millis(100));
        match ctx.rx.recv_timeout(wait) {
            Ok(state) => resolve_one(ctx, state, 0, &mut retries),
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) if retries.is_empty() => return,
            Err(RecvTimeoutError::Disconnected) => std::thread::sleep(wait),
        }
    }
}

fn resolve_one(ctx: &DnsContext, state: Arc<VisitState>, attempts: u32, retries: &mut Vec<Retry>) {
    let host = host_of_scheme_authority(state.scheme_authority()).to_string();
    match ctx.resolver.resolve(&host) {
        Ok(ip) => {
            ctx.stats.resolved.fetch_add(1, Ordering::Relaxed);
            let outcome = ctx.workbench.add(state, ip);
            ctx.resolving.fetch_sub(1, Ordering::Relaxed);
            if let Released::NeedsRefill(s) = outcome {
                let _ = ctx.requests.send(Request::Refill(s));
            }
        }
        Err(e) => {
            ctx.stats.failures.fetch_add(1, Ordering::Relaxed);
            let attempts = attempts + 1;
            if attempts >= ctx.max_attempts {
                log::debug!("giving up on {host}: {e}");
                ctx.stats.discarded.fetch_add(1, Ordering::Relaxed);
                ctx.workbench.retire(&state);
                ctx.resolving.fetch_sub(1, Ordering::Relaxed);
                let _ = ctx.requests.send(Request::Purge(state));
            } else {
                retries.push(Retry {
                    due: Instant::now() + ctx.retry_base * (1 << (attempts - 1).min(16)),
                    attempts,
                    state,
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workbench::Location;
    use crossbeam::channel::unbounded;
    use std::sync::atomic::AtomicUsize;

    struct Flaky {
        calls: AtomicUsize,
        fail_first: usize,
    }

    impl Resolver for Flaky {
        fn resolve(&self, host: &str) -> io::Result<IpAddr> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if host == "dead.test" || n < self.fail_first {
                return Err(io::Error::new(io::ErrorKind::NotFound, "nope"));
            }
            Ok("10.0.0.1".parse().unwrap())
        }
    }

    fn run(resolver: Flaky, host: &str) -> (Arc<VisitState>, Arc<DnsStats>, Receiver<Request>, Arc<AtomicU64>) {
        let wb = Arc::new(Workbench::new(1 << 20));
        let (tx, rx) = unbounded();
        let (req_tx, req_rx) = unbounded();
        let state = wb.new_visit_state(format!("http://{host}").as_bytes());
        wb.add_url(&state, b"/").unwrap();
        let resolving = Arc::new(AtomicU64::new(1));
        let ctx = DnsContext {
            rx,
            resolver: Arc::new(resolver),
            workbench: wb,
            requests: req_tx,
            resolving: resolving.clone(),
            max_attempts: 3,
            retry_base: Duration::from_millis(5),
            stats: Arc::default(),
        };
        tx.send(state.clone()).unwrap();
        drop(tx);
        let stop = AtomicBool::new(false);
        dns_loop(&ctx, &stop);
        (state, ctx.stats.clone(), req_rx, resolving)
    }

    #[test]
    fn retries_then_succeeds() {
        let (state, stats, _, resolving) = run(
            Flaky {
                calls: AtomicUsize::new(0),
                fail_first: 2,
            },
            "a.test",
        );
        assert_eq!(state.location(), Location::Queued);
        assert_eq!(stats.failures.load(Ordering::Relaxed), 2);
        assert_eq!(resolving.load(Ordering::Relaxed), 0);
    }

    #[test]
    fn gives_up_after_max_attempts() {
        let (state, stats, req_rx, resolving) = run(
            Flaky {
                calls: AtomicUsize::new(0),
                fail_first: 0,
            },
            "dead.test",
        );
        assert_eq!(state.location(), Location::Retired);
        assert_eq!(stats.discarded.load(Ordering::Relaxed), 1);
        assert!(matches!(req_rx.try_recv(), Ok(Request::Purge(_))));
        assert_eq!(resolving.load(Ordering::Relaxed), 0);
    }

    #[test]
    fn system_resolver_accepts_literals() {
        assert_eq!(SystemResolver.resolve("127.0.0.1").unwrap(), "127.0.0.1".parse::<IpAddr>().unwrap());
        assert_eq!(SystemResolver.resolve("[::1]").unwrap(), "::1".parse::<IpAddr>().unwrap());
    }
}
