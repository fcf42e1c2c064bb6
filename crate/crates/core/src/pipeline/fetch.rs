//! Fetch workers. They only see the todo, results and done queues and the
//! visit state they currently hold.

use std::net::IpAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crossbeam::channel::{bounded, Receiver, RecvTimeoutError, Sender};
use crossbeam::queue::SegQueue;
use parking_lot::RwLock;

use super::fetch_data::FetchData;
use super::http::{self, ClientConfig, Connection};
use super::parse::ParseJob;
use super::robots::{RobotsRules, MAX_ROBOTS_BYTES};
use super::{Backoff, PipelineStats};
use crate::burl::CrawlUrl;
use crate::clock;
use crate::config::{Filters, RobotsFallback};
use crate::distributor::FrontController;
use crate::filters::CountedUrl;
use crate::workbench::{Lease, Politeness, VisitData, VisitError};

/// A visit state given back after a fetch hold.
pub struct Done {
    pub lease: Lease,
    /// End of the last request made during the hold; 0 if none was made.
    pub fetch_end: u64,
}

/// Connection-hold limits, tunable at runtime.
#[derive(Debug)]
pub struct Keepalive {
    pub max_ms: AtomicU64,
    pub max_urls: AtomicU64,
    /// Wait out the host and IP delays between requests of one hold.
    pub strict: AtomicBool,
}

impl Keepalive {
    pub fn new(max_ms: u64, max_urls: u64, strict: bool) -> Self {
        Keepalive {
            max_ms: AtomicU64::new(max_ms),
            max_urls: AtomicU64::new(max_urls),
            strict: AtomicBool::new(strict),
        }
    }
}

/// Delays between contacts with a host or an IP: the configured ones,
/// stretched by robots.txt Crawl-delay and by consecutive failures.
pub struct Delays {
    pub base: Arc<dyn Politeness>,
    pub honor_crawl_delay: AtomicBool,
    pub max_crawl_delay_ms: AtomicU64,
    /// Added after a failure and doubled for each further consecutive one.
    pub error_delay_ms: AtomicU64,
}

impl Delays {
    pub fn host_ms(&self, scheme_authority: &[u8], data: &VisitData) -> u64 {
        let mut delay = self.base.host_delay_ms(scheme_authority);
        if self.honor_crawl_delay.load(Ordering::Relaxed) {
            if let Some(cd) = data.robots.as_ref().and_then(|r| r.crawl_delay_ms()) {
                delay = delay.max(cd.min(self.max_crawl_delay_ms.load(Ordering::Relaxed)));
            }
        }
        if let Some(e) = &data.last_error {
            if e.consecutive > 0 {
                let shift = (e.consecutive - 1).min(16);
                delay = delay.saturating_add(self.error_delay_ms.load(Ordering::Relaxed) << shift);
            }
        }
        delay
    }

    pub fn ip_ms(&self, ip: IpAddr) -> u64 {
        self.base.ip_delay_ms(ip)
    }
}

#[derive(Debug, Clone)]
pub struct RobotsPolicy {
    pub enabled: bool,
    pub agent: String,
    pub fallback: RobotsFallback,
}

pub struct FetchContext {
    pub todo: Arc<SegQueue<Lease>>,
    pub results: Arc<SegQueue<ParseJob>>,
    pub done: Arc<SegQueue<Done>>,
    pub front: Arc<FrontController>,
    /// Current front size, published by the todo thread.
    pub front_size: Arc<AtomicU64>,
    pub client: ClientConfig,
    pub filters: Arc<RwLock<Arc<Filters>>>,
    pub keepalive: Arc<Keepalive>,
    pub delays: Arc<Delays>,
    pub robots: RobotsPolicy,
    pub max_attempts: u32,
    pub window_bytes: usize,
    pub spill_dir: PathBuf,
    pub stats: Arc<PipelineStats>,
}

struct Worker<'a> {
    ctx: &'a FetchContext,
    data: Option<Box<FetchData>>,
    reply_tx: Sender<Box<FetchData>>,
    reply_rx: Receiver<Box<FetchData>>,
    conn: Option<Connection>,
}

/// Serves visit states from the todo queue until `stop` is set.
pub fn fetch_loop(ctx: &FetchContext, stop: &AtomicBool) {
    let (reply_tx, reply_rx) = bounded(1);
    let mut worker = Worker {
        ctx,
        data: Some(Box::new(FetchData::new(ctx.window_bytes, &ctx.spill_dir))),
        reply_tx,
        reply_rx,
        conn: None,
    };
    let mut backoff = Backoff::new(Duration::from_millis(1), Duration::from_millis(128));
    while !stop.load(Ordering::Relaxed) {
        let Some(lease) = ctx.todo.pop() else {
            ctx.stats.todo_waits.fetch_add(1, Ordering::Relaxed);
            ctx.front
                .note_worker_wait(ctx.front_size.load(Ordering::Relaxed), clock::now_ms());
            backoff.wait();
            continue;
        };
        backoff.reset();
        let fetch_end = worker.visit(&lease, stop);
        worker.conn = None;
        ctx.done.push(Done { lease, fetch_end });
    }
}

impl Worker<'_> {
    /// One hold of a visit state: robots.txt if needed, then up to the
    /// keepalive limits of URLs on one connection.
    fn visit(&mut self, lease: &Lease, stop: &AtomicBool) -> u64 {
        let ctx = self.ctx;
        let state = &lease.state;
        let sa = state.scheme_authority();
        let started = clock::now_ms();
        let max_ms = ctx.keepalive.max_ms.load(Ordering::Relaxed);
        let max_urls = ctx.keepalive.max_urls.load(Ordering::Relaxed);
        let strict = ctx.keepalive.strict.load(Ordering::Relaxed);
        let mut requests = 0u64;
        let mut last_end = 0u64;

        if state.lock().robots.is_none() {
            let rules = if ctx.robots.enabled {
                requests += 1;
                let rules = self.fetch_robots(sa, lease.ip);
                last_end = self.data.as_ref().expect("buffer").fetch_end;
                rules
            } else {
                RobotsRules::allow_all()
            };
            state.lock().robots = Some(Arc::new(rules));
        }
        let robots = state.lock().robots.clone().expect("robots loaded");
        let filters = ctx.filters.read().clone();

        while !stop.load(Ordering::Relaxed) {
            if requests >= max_urls || (requests > 0 && clock::now_ms() >= started + max_ms) {
                break;
            }
            let Some(pq) = state.pop_url() else {
                break;
            };
            if !robots.allowed(&pq) {
                ctx.stats.robots_blocked.fetch_add(1, Ordering::Relaxed);
                continue;
            }
            let url = CrawlUrl::from_parts(sa, &pq);
            let host_count = state.lock().fetched;
            if !filters.fetch.evaluate_counted(&CountedUrl { url: &url, host_count }) {
                ctx.stats.fetch_filtered.fetch_add(1, Ordering::Relaxed);
                continue;
            }
            if requests > 0 && strict {
                let gap = ctx.delays.host_ms(sa, &state.lock()).max(ctx.delays.ip_ms(lease.ip));
                let ready = last_end + gap;
                if ready > started + max_ms {
                    state.push_front_url(pq);
                    break;
                }
                let now = clock::now_ms();
                if ready > now {
                    std::thread::sleep(Duration::from_millis(ready - now));
                }
            }
            if self.conn.is_some() {
                ctx.stats.keepalive_reuses.fetch_add(1, Ordering::Relaxed);
            }
            let mut data = self.data.take().expect("buffer");
            let ok = match data.reset(url.clone()) {
                Ok(()) => {
                    data.ip = Some(lease.ip);
                    data.host_fetched = host_count;
                    http::fetch(&ctx.client, &mut self.conn, &url, lease.ip, &mut data).is_ok()
                }
                Err(e) => {
                    data.error = Some(e.to_string());
                    false
                }
            };
            requests += 1;
            last_end = data.fetch_end.max(last_end);
            if !ok {
                ctx.stats.fetch_errors.fetch_add(1, Ordering::Relaxed);
                let message = data.error.clone().unwrap_or_default();
                self.data = Some(data);
                let mut guard = state.lock();
                let consecutive = guard.last_error.as_ref().map_or(0, |e| e.consecutive) + 1;
                let give_up = consecutive >= ctx.max_attempts;
                guard.last_error = Some(VisitError {
                    message,
                    consecutive: if give_up { 0 } else { consecutive },
                });
                drop(guard);
                if give_up {
                    ctx.stats.dropped_urls.fetch_add(1, Ordering::Relaxed);
                } else {
                    state.push_front_url(pq);
                }
                break;
            }
            {
                let mut guard = state.lock();
                guard.fetched += 1;
                guard.last_error = None;
            }
            ctx.stats.fetched.fetch_add(1, Ordering::Relaxed);
            ctx.stats.bytes_fetched.fetch_add(data.body.len() + data.head.len() as u64, Ordering::Relaxed);
            self.parse(data);
        }
        last_end
    }

    /// Hands the buffer to the parse workers and waits until it comes back.
    fn parse(&mut self, data: Box<FetchData>) {
        self.ctx.results.push(ParseJob {
            data,
            reply: self.reply_tx.clone(),
        });
        loop {
            match self.reply_rx.recv_timeout(Duration::from_secs(1)) {
                Ok(data) => {
                    self.data = Some(data);
                    return;
                }
                Err(RecvTimeoutError::Timeout) => continue,
                Err(RecvTimeoutError::Disconnected) => unreachable!("worker holds a sender"),
            }
        }
    }

    fn fetch_robots(&mut self, sa: &[u8], ip: IpAddr) -> RobotsRules {
        let ctx = self.ctx;
        ctx.stats.robots_fetched.fetch_add(1, Ordering::Relaxed);
        let url = CrawlUrl::from_parts(sa, b"/robots.txt");
        let data = self.data.as_mut().expect("buffer");
        let fallback = || match ctx.robots.fallback {
            RobotsFallback::Allow => RobotsRules::allow_all(),
            RobotsFallback::Disallow => RobotsRules::disallow_all(),
        };
        if data.reset(url.clone()).is_err() {
            return fallback();
        }
        if http::fetch(&ctx.client, &mut self.conn, &url, ip, data).is_err() {
            return fallback();
        }
        match data.status {
            200..=299 => {
                let mut body = Vec::new();
                if data.body.read_prefix(MAX_ROBOTS_BYTES, &mut body).is_err() {
                    return fallback();
                }
                RobotsRules::parse(&body, &ctx.robots.agent)
            }
            // Missing or forbidden robots.txt: no restrictions, as customary.
            400..=499 => RobotsRules::allow_all(),
            _ => fallback(),
        }
    }
}
