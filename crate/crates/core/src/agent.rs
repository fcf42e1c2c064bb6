//! A crawl agent: every component of the pipeline wired together and run
//! on its own threads.

use std::collections::HashMap;
use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam::channel::{unbounded, Sender};
use crossbeam::queue::SegQueue;
use parking_lot::{Mutex, RwLock};
use thiserror::Error;

use crate::cluster::{bind_udp, AgentRing, ControlError, ControlServer, ControlTarget, NetStats, UrlReceiver, UrlSender};
use crate::config::{Config, ConfigError, FilterSection, Filters};
use crate::distributor::{Distributor, DistributorCounters, FrontController, Request};
use crate::pipeline::bloom::DigestFilter;
use crate::pipeline::cache::UrlCache;
use crate::pipeline::dns::{dns_loop, DnsContext, DnsStats, Resolver, SystemResolver};
use crate::pipeline::fetch::{fetch_loop, Delays, Done, FetchContext, Keepalive, RobotsPolicy};
use crate::pipeline::http::ClientConfig;
use crate::pipeline::parse::{discover, parse_loop, LinkSink, ParseContext, ParseJob};
use crate::pipeline::{Backoff, PipelineStats};
use crate::sieve::{Sieve, SieveConfig, SieveError};
use crate::store::{DuplicatePolicy, StoreConfig, StoreError, WarcStore};
use crate::virtualizer::{Virtualizer, VirtualizerConfig, VirtualizerError};
use crate::workbench::{FixedDelays, Released, Workbench};
use crate::{clock, CrawlUrl};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sieve(#[from] SieveError),
    #[error(transparent)]
    Virtualizer(#[from] VirtualizerError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{0} thread panicked")]
    Panicked(&'static str),
}

/// Hooks that are not part of the configuration file.
pub struct AgentOptions {
    pub resolver: Arc<dyn Resolver>,
    /// Called with every URL leaving the sieve, in order.
    pub trace: Option<Box<dyn FnMut(&CrawlUrl) + Send>>,
}

impl Default for AgentOptions {
    fn default() -> Self {
        AgentOptions {
            resolver: Arc::new(SystemResolver),
            trace: None,
        }
    }
}

/// Sends discovered URLs to their owner: the local sieve, through the
/// schedule filter, or another agent.
struct Router {
    ring: Option<(AgentRing, usize)>,
    sender: Mutex<Option<UrlSender>>,
    sieve: Arc<Sieve>,
    filters: Arc<RwLock<Arc<Filters>>>,
    scheduled: AtomicU64,
    unscheduled: AtomicU64,
    forwarded: AtomicU64,
    sieve_errors: AtomicU64,
}

impl LinkSink for Router {
    fn route(&self, url: CrawlUrl) {
        if let Some((ring, me)) = &self.ring {
            let owner = ring.assign_index(url.host().as_bytes()).expect("ring is not empty");
            if owner != *me {
                if let Some(sender) = &*self.sender.lock() {
                    sender.send(owner, &url);
                    self.forwarded.fetch_add(1, Ordering::Relaxed);
                }
                return;
            }
        }
        if !self.filters.read().schedule.evaluate(&url) {
            self.unscheduled.fetch_add(1, Ordering::Relaxed);
            return;
        }
        match self.sieve.enqueue(&url) {
            Ok(()) => {
                self.scheduled.fetch_add(1, Ordering::Relaxed);
            }
            Err(e) => {
                log::error!("sieve rejected {url}: {e}");
                self.sieve_errors.fetch_add(1, Ordering::Relaxed);
            }
        }
    }
}

struct Shared {
    name: String,
    filter_text: Mutex<FilterSection>,
    filters: Arc<RwLock<Arc<Filters>>>,
    sieve: Arc<Sieve>,
    workbench: Arc<Workbench>,
    front: Arc<FrontController>,
    resolving: Arc<AtomicU64>,
    front_size: Arc<AtomicU64>,
    fixed: Arc<FixedDelays>,
    delays: Arc<Delays>,
    keepalive: Arc<Keepalive>,
    cache: Arc<UrlCache>,
    router: Arc<Router>,
    todo: Arc<SegQueue<crate::workbench::Lease>>,
    results: Arc<SegQueue<ParseJob>>,
    done: Arc<SegQueue<Done>>,
    pipeline: Arc<PipelineStats>,
    dns: Arc<DnsStats>,
    distributor: Mutex<Option<Arc<DistributorCounters>>>,
    net: Arc<NetStats>,
    store: Mutex<Option<Arc<WarcStore>>>,
    fetch_workers: usize,
}

#[derive(Default)]
struct Threads {
    fetch: Vec<JoinHandle<()>>,
    parse: Vec<JoinHandle<()>>,
    todo: Option<JoinHandle<()>>,
    done: Option<JoinHandle<()>>,
    dns: Vec<JoinHandle<()>>,
    distributor: Option<JoinHandle<Result<Virtualizer, VirtualizerError>>>,
}

struct Stops {
    fetch: Arc<AtomicBool>,
    parse: Arc<AtomicBool>,
    todo: Arc<AtomicBool>,
    rest: Arc<AtomicBool>,
}

pub struct Agent {
    shared: Arc<Shared>,
    threads: Threads,
    stops: Stops,
    receiver: Option<UrlReceiver>,
    control: Option<ControlServer>,
    udp_addr: Option<SocketAddr>,
}

fn spawn<T: Send + 'static>(
    name: &str,
    stack: Option<usize>,
    f: impl FnOnce() -> T + Send + 'static,
) -> io::Result<JoinHandle<T>> {
    let mut b = std::thread::Builder::new().name(name.to_string());
    if let Some(s) = stack {
        b = b.stack_size(s);
    }
    b.spawn(f)
}

impl Agent {
    pub fn start(config: Config, options: AgentOptions) -> Result<Agent, AgentError> {
        config.validate()?;
        let data_dir = &config.agent.data_dir;
        std::fs::create_dir_all(data_dir)?;

        let mut sieve_config = SieveConfig::new(data_dir.join("sieve"), config.sieve.bytes);
        sieve_config.durable = config.sieve.durable;
        let sieve = Arc::new(Sieve::open(sieve_config)?);
        let mut virt_config = VirtualizerConfig::new(data_dir.join("virtualizer"));
        virt_config.file_size = config.virtualizer.file_bytes;
        virt_config.gc_threshold = config.virtualizer.gc_threshold;
        let virtualizer = Virtualizer::open(virt_config)?;
        let spill_dir = data_dir.join("spill");
        std::fs::create_dir_all(&spill_dir)?;

        let store = if config.store.enabled {
            let mut sc = StoreConfig::new(config.store_dir());
            sc.rotate_bytes = config.store.rotate_bytes;
            sc.level = config.store.level;
            sc.policy = config.store.duplicates.parse::<DuplicatePolicy>().map_err(|e| {
                ConfigError::Invalid {
                    key: "store.duplicates".into(),
                    reason: e.to_string(),
                }
            })?;
            Some(Arc::new(WarcStore::open(sc)?))
        } else {
            None
        };

        let workbench = Arc::new(Workbench::new(config.workbench.bytes));
        let mut front = FrontController::new(config.fetch.workers, config.workbench.bytes)
            .with_growth(config.front.growth_step, config.front.growth_factor, config.front.growth_interval_ms);
        if config.front.max_front > 0 {
            front = front.with_max_front(config.front.max_front);
        }
        let front = Arc::new(front);
        let resolving = Arc::new(AtomicU64::new(0));
        let filters = Arc::new(RwLock::new(Arc::new(Filters::parse(&config.filters)?)));
        let fixed = Arc::new(FixedDelays::new(config.workbench.host_delay_ms, config.workbench.ip_delay_ms));
        let delays = Arc::new(Delays {
            base: fixed.clone(),
            honor_crawl_delay: AtomicBool::new(config.workbench.crawl_delay),
            max_crawl_delay_ms: AtomicU64::new(config.workbench.max_crawl_delay_ms),
            error_delay_ms: AtomicU64::new(config.fetch.error_delay_ms),
        });
        let keepalive = Arc::new(Keepalive::new(
            config.fetch.keepalive_ms,
            config.fetch.keepalive_urls,
            config.fetch.keepalive_strict,
        ));
        let net = Arc::new(NetStats::default());

        // Cluster membership and the UDP link to the other agents.
        let mut udp = None;
        let mut ring = None;
        let mut sender = None;
        if !config.cluster.agents.is_empty() {
            let r = AgentRing::new(config.cluster.agents.iter().map(|a| a.name.clone()), config.cluster.vnodes);
            let me = r.index_of(&config.agent.name).expect("validated");
            let addrs: HashMap<&str, SocketAddr> =
                config.cluster.agents.iter().map(|a| (a.name.as_str(), a.udp)).collect();
            let peers: Vec<SocketAddr> = r.agents().iter().map(|n| addrs[n.as_str()]).collect();
            let socket = bind_udp(peers[me])?;
            let out = socket.try_clone()?;
            sender = Some(UrlSender::start(
                out,
                peers,
                Duration::from_millis(config.cluster.flush_ms),
                net.clone(),
            )?);
            udp = Some(socket);
            ring = Some((r, me));
        }

        let router = Arc::new(Router {
            ring,
            sender: Mutex::new(sender),
            sieve: sieve.clone(),
            filters: filters.clone(),
            scheduled: AtomicU64::new(0),
            unscheduled: AtomicU64::new(0),
            forwarded: AtomicU64::new(0),
            sieve_errors: AtomicU64::new(0),
        });

        let shared = Arc::new(Shared {
            name: config.agent.name.clone(),
            filter_text: Mutex::new(config.filters.clone()),
            filters: filters.clone(),
            sieve: sieve.clone(),
            workbench: workbench.clone(),
            front: front.clone(),
            resolving: resolving.clone(),
            front_size: Arc::new(AtomicU64::new(0)),
            fixed,
            delays: delays.clone(),
            keepalive: keepalive.clone(),
            cache: Arc::new(UrlCache::new(config.parse.url_cache)),
            router: router.clone(),
            todo: Arc::new(SegQueue::new()),
            results: Arc::new(SegQueue::new()),
            done: Arc::new(SegQueue::new()),
            pipeline: Arc::new(PipelineStats::default()),
            dns: Arc::new(DnsStats::default()),
            distributor: Mutex::new(None),
            net: net.clone(),
            store: Mutex::new(store.clone()),
            fetch_workers: config.fetch.workers,
        });
        let stops = Stops {
            fetch: Arc::default(),
            parse: Arc::default(),
            todo: Arc::default(),
            rest: Arc::default(),
        };
        let mut threads = Threads::default();
        let (req_tx, req_rx) = unbounded::<Request>();
        let (dns_tx, dns_rx) = unbounded();

        // Distributor.
        let mut distributor = Distributor::new(
            sieve.clone(),
            workbench.clone(),
            virtualizer,
            front.clone(),
            req_rx,
            dns_tx,
            resolving.clone(),
        );
        if let Some(trace) = options.trace {
            distributor.set_trace(trace);
        }
        *shared.distributor.lock() = Some(distributor.counters.clone());
        {
            let stop = stops.rest.clone();
            threads.distributor = Some(spawn("distributor", None, move || {
                if let Err(e) = distributor.run(|| stop.load(Ordering::Relaxed)) {
                    log::error!("distributor stopped: {e}");
                }
                Ok(distributor.into_virtualizer())
            })?);
        }

        // Name resolution.
        let dns_ctx = Arc::new(DnsContext {
            rx: dns_rx,
            resolver: options.resolver,
            workbench: workbench.clone(),
            requests: req_tx.clone(),
            resolving: resolving.clone(),
            max_attempts: config.dns.max_attempts,
            retry_base: Duration::from_millis(config.dns.retry_ms),
            stats: shared.dns.clone(),
        });
        for i in 0..config.dns.workers {
            let ctx = dns_ctx.clone();
            let stop = stops.rest.clone();
            threads.dns.push(spawn(&format!("dns-{i}"), None, move || dns_loop(&ctx, &stop))?);
        }

        // Ready hosts to the todo queue.
        {
            let s = shared.clone();
            let stop = stops.todo.clone();
            threads.todo = Some(spawn("todo", None, move || todo_loop(&s, &stop))?);
        }

        // Released hosts back to the workbench.
        {
            let s = shared.clone();
            let stop = stops.rest.clone();
            let tx = req_tx.clone();
            threads.done = Some(spawn("done", None, move || done_loop(&s, &tx, &stop))?);
        }
        drop(req_tx);

        // Parsing.
        let parse_ctx = Arc::new(ParseContext {
            results: shared.results.clone(),
            cache: shared.cache.clone(),
            bloom: Arc::new(DigestFilter::new(
                config.parse.expected_archetypes,
                config.parse.false_positive_rate,
            )),
            filters: filters.clone(),
            sink: router.clone(),
            store,
            parse_bytes: config.parse.parse_bytes,
            stats: shared.pipeline.clone(),
        });
        for i in 0..config.parse_workers() {
            let ctx = parse_ctx.clone();
            let stop = stops.parse.clone();
            threads.parse.push(spawn(&format!("parse-{i}"), None, move || parse_loop(&ctx, &stop))?);
        }
        drop(parse_ctx);

        // Fetching.
        let fetch_ctx = Arc::new(FetchContext {
            todo: shared.todo.clone(),
            results: shared.results.clone(),
            done: shared.done.clone(),
            front: front.clone(),
            front_size: shared.front_size.clone(),
            client: ClientConfig {
                user_agent: config.fetch.user_agent.clone(),
                connect_timeout: Duration::from_millis(config.fetch.connect_timeout_ms),
                io_timeout: Duration::from_millis(config.fetch.io_timeout_ms),
                proxy: config.fetch.proxy,
                max_body_bytes: config.fetch.max_body_bytes,
            },
            filters: filters.clone(),
            keepalive,
            delays,
            robots: RobotsPolicy {
                enabled: config.fetch.robots,
                agent: config.fetch.robots_agent.clone(),
                fallback: config.fetch.robots_fallback,
            },
            max_attempts: config.fetch.max_attempts,
            window_bytes: config.fetch.window_bytes,
            spill_dir,
            stats: shared.pipeline.clone(),
        });
        for i in 0..config.fetch.workers {
            let ctx = fetch_ctx.clone();
            let stop = stops.fetch.clone();
            threads.fetch.push(spawn(
                &format!("fetch-{i}"),
                Some(config.fetch.thread_stack_bytes),
                move || fetch_loop(&ctx, &stop),
            )?);
        }

        // URLs from other agents.
        let udp_addr = udp.as_ref().and_then(|s| s.local_addr().ok());
        let receiver = match udp {
            Some(socket) => {
                let s = shared.clone();
                Some(UrlReceiver::start(socket, net, move |url| {
                    discover(&s.cache, s.router.as_ref(), &s.pipeline, url)
                })?)
            }
            None => None,
        };

        let mut agent = Agent {
            shared,
            threads,
            stops,
            receiver,
            control: None,
            udp_addr,
        };
        if let Some(addr) = config.control.addr {
            agent.control = Some(ControlServer::start(addr, Arc::new(agent.control_target()))?);
        }
        for seed in &config.agent.seeds {
            // Validated above.
            if let Ok(url) = CrawlUrl::parse(seed, None) {
                agent.seed(url);
            }
        }
        log::info!("agent {} started", agent.shared.name);
        Ok(agent)
    }

    pub fn name(&self) -> &str {
        &self.shared.name
    }

    /// Feeds a URL as if it had been discovered.
    pub fn seed(&self, url: CrawlUrl) {
        let s = &self.shared;
        discover(&s.cache, s.router.as_ref(), &s.pipeline, url);
    }

    pub fn control_addr(&self) -> Option<SocketAddr> {
        self.control.as_ref().map(|c| c.addr())
    }

    pub fn udp_addr(&self) -> Option<SocketAddr> {
        self.udp_addr
    }

    /// A handle for reading and changing runtime parameters.
    pub fn control_target(&self) -> AgentControl {
        AgentControl {
            shared: self.shared.clone(),
        }
    }

    pub fn pipeline_stats(&self) -> &Arc<PipelineStats> {
        &self.shared.pipeline
    }

    pub fn workbench(&self) -> &Arc<Workbench> {
        &self.shared.workbench
    }

    pub fn front(&self) -> &Arc<FrontController> {
        &self.shared.front
    }

    /// Hosts being visited or resolved.
    pub fn current_front(&self) -> u64 {
        self.shared.workbench.stats().active() as u64 + self.shared.resolving.load(Ordering::Relaxed)
    }

    /// Every counter of the agent, by name.
    pub fn metrics(&self) -> Vec<(String, u64)> {
        metrics(&self.shared)
    }

    /// True when nothing is queued, resolving, in flight or waiting on disk.
    pub fn is_idle(&self) -> bool {
        let s = &self.shared;
        let wb = s.workbench.stats();
        let sieve = s.sieve.stats();
        wb.active() == 0
            && s.resolving.load(Ordering::Relaxed) == 0
            && s.todo.is_empty()
            && s.results.is_empty()
            && s.done.is_empty()
            && sieve.pending == 0
            && sieve.ready == 0
    }

    /// Stops every thread, flushing the archive and the sieve.
    pub fn stop(mut self) -> Result<(), AgentError> {
        let s = self.shared.clone();
        if let Some(mut c) = self.control.take() {
            c.stop();
        }
        // Fetching first, so that nothing new enters the pipeline.
        self.stops.todo.store(true, Ordering::Relaxed);
        s.workbench.wake();
        join(self.threads.todo.take(), "todo")?;
        self.stops.fetch.store(true, Ordering::Relaxed);
        for h in self.threads.fetch.drain(..) {
            join(Some(h), "fetch")?;
        }
        while let Some(lease) = s.todo.pop() {
            s.done.push(Done { lease, fetch_end: 0 });
        }
        self.stops.parse.store(true, Ordering::Relaxed);
        for h in self.threads.parse.drain(..) {
            join(Some(h), "parse")?;
        }
        if let Some(mut r) = self.receiver.take() {
            r.stop();
        }
        if let Some(mut sender) = s.router.sender.lock().take() {
            sender.close();
        }
        self.stops.rest.store(true, Ordering::Relaxed);
        join(self.threads.done.take(), "done")?;
        for h in self.threads.dns.drain(..) {
            join(Some(h), "dns")?;
        }
        let virtualizer = match self.threads.distributor.take() {
            Some(h) => Some(h.join().map_err(|_| AgentError::Panicked("distributor"))??),
            None => None,
        };
        if let Some(v) = virtualizer {
            v.close()?;
        }
        let store = s.store.lock().take();
        if let Some(store) = store {
            match Arc::try_unwrap(store) {
                Ok(mut store) => store.close()?,
                // Still referenced elsewhere; its Drop flushes it.
                Err(_) => log::warn!("archive still in use at shutdown"),
            }
        }
        s.sieve.close()?;
        log::info!("agent {} stopped", s.name);
        Ok(())
    }
}

fn join(handle: Option<JoinHandle<()>>, what: &'static str) -> Result<(), AgentError> {
    match handle {
        Some(h) => h.join().map_err(|_| AgentError::Panicked(what)),
        None => Ok(()),
    }
}

fn todo_loop(s: &Shared, stop: &AtomicBool) {
    while !stop.load(Ordering::Relaxed) {
        let front = s.workbench.stats().active() as u64 + s.resolving.load(Ordering::Relaxed);
        s.front_size.store(front, Ordering::Relaxed);
        // Leases waiting here hold their IP; keep no more than one per worker.
        if s.todo.len() >= s.fetch_workers {
            std::thread::sleep(Duration::from_millis(1));
            continue;
        }
        if let Some(lease) = s.workbench.acquire_timeout(clock::now_ms, Duration::from_millis(20)) {
            s.todo.push(lease);
        }
    }
}

fn done_loop(s: &Shared, requests: &Sender<Request>, stop: &AtomicBool) {
    let mut backoff = Backoff::new(Duration::from_micros(200), Duration::from_millis(20));
    loop {
        let Some(Done { lease, fetch_end }) = s.done.pop() else {
            if stop.load(Ordering::Relaxed) {
                return;
            }
            backoff.wait();
            continue;
        };
        backoff.reset();
        let host_delay = s.delays.host_ms(lease.state.scheme_authority(), &lease.state.lock());
        let ip_delay = s.delays.ip_ms(lease.ip);
        if let Released::NeedsRefill(state) = s.workbench.release(lease, fetch_end, host_delay, ip_delay) {
            let _ = requests.send(Request::Refill(state));
        }
    }
}

fn metrics(s: &Shared) -> Vec<(String, u64)> {
    let mut out: Vec<(String, u64)> = Vec::new();
    let mut put = |k: &str, v: u64| out.push((k.to_string(), v));
    for (k, v) in s.pipeline.snapshot() {
        put(k, v);
    }
    let wb = s.workbench.stats();
    put("workbench_entries", wb.entries as u64);
    put("workbench_queued", wb.queued as u64);
    put("workbench_leased", wb.leased as u64);
    put("workbench_refilling", wb.refilling as u64);
    put("workbench_parked", wb.parked as u64);
    put("workbench_bytes", wb.bytes);
    put("resolving", s.resolving.load(Ordering::Relaxed));
    put("front", wb.active() as u64 + s.resolving.load(Ordering::Relaxed));
    put("required_front", s.front.required());
    put("front_growths", s.front.growths());
    let sieve = s.sieve.stats();
    put("sieve_pending", sieve.pending as u64);
    put("sieve_ready", sieve.ready);
    put("sieve_known", sieve.known);
    put("sieve_enqueued", sieve.enqueued);
    put("sieve_dequeued", sieve.dequeued);
    put("sieve_flushes", sieve.flushes);
    put("scheduled", s.router.scheduled.load(Ordering::Relaxed));
    put("unscheduled", s.router.unscheduled.load(Ordering::Relaxed));
    put("forwarded", s.router.forwarded.load(Ordering::Relaxed));
    put("sieve_errors", s.router.sieve_errors.load(Ordering::Relaxed));
    put("dns_resolved", s.dns.resolved.load(Ordering::Relaxed));
    put("dns_failures", s.dns.failures.load(Ordering::Relaxed));
    put("dns_discarded", s.dns.discarded.load(Ordering::Relaxed));
    if let Some(c) = &*s.distributor.lock() {
        put("distributor_sieve_reads", c.sieve_reads.load(Ordering::Relaxed));
        put("distributor_to_workbench", c.to_workbench.load(Ordering::Relaxed));
        put("distributor_virtualized", c.virtualized.load(Ordering::Relaxed));
        put("distributor_refills", c.refills.load(Ordering::Relaxed));
        put("distributor_new_hosts", c.new_hosts.load(Ordering::Relaxed));
        put("distributor_dropped", c.dropped.load(Ordering::Relaxed));
    }
    put("udp_sent_urls", s.net.sent_urls.load(Ordering::Relaxed));
    put("udp_datagrams_sent", s.net.datagrams_sent.load(Ordering::Relaxed));
    put("udp_received_urls", s.net.received_urls.load(Ordering::Relaxed));
    put("udp_bad_datagrams", s.net.bad_datagrams.load(Ordering::Relaxed));
    put("todo", s.todo.len() as u64);
    put("results", s.results.len() as u64);
    if let Some(store) = &*s.store.lock() {
        let st = store.stats();
        put("store_records", st.records.load(Ordering::Relaxed));
        put("store_bytes", st.bytes.load(Ordering::Relaxed));
        put("store_files", st.files.load(Ordering::Relaxed));
    }
    out
}

/// Runtime view of an agent's tunable parameters.
#[derive(Clone)]
pub struct AgentControl {
    shared: Arc<Shared>,
}

const IMMUTABLE: &[&str] = &[
    "agent.name",
    "agent.data_dir",
    "fetch.workers",
    "parse.workers",
    "dns.workers",
    "cluster.agents",
    "sieve.bytes",
];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ControlError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ControlError::InvalidValue {
        key: key.to_string(),
        reason: e.to_string(),
    })
}

impl ControlTarget for AgentControl {
    fn get(&self, key: &str) -> Result<String, ControlError> {
        let s = &self.shared;
        let r = Ordering::Relaxed;
        Ok(match key {
            "workbench.host_delay_ms" => s.fixed.host_ms().to_string(),
            "workbench.ip_delay_ms" => s.fixed.ip_ms().to_string(),
            "workbench.bytes" => s.workbench.budget().limit().to_string(),
            "workbench.crawl_delay" => s.delays.honor_crawl_delay.load(r).to_string(),
            "workbench.max_crawl_delay_ms" => s.delays.max_crawl_delay_ms.load(r).to_string(),
            "fetch.error_delay_ms" => s.delays.error_delay_ms.load(r).to_string(),
            "fetch.keepalive_ms" => s.keepalive.max_ms.load(r).to_string(),
            "fetch.keepalive_urls" => s.keepalive.max_urls.load(r).to_string(),
            "fetch.keepalive_strict" => s.keepalive.strict.load(r).to_string(),
            "front.required" => s.front.required().to_string(),
            "agent.name" => s.name.clone(),
            "fetch.workers" => s.fetch_workers.to_string(),
            k if k.starts_with("filters.") => {
                let text = s.filter_text.lock();
                match &k["filters.".len()..] {
                    "schedule" => text.schedule.clone(),
                    "fetch" => text.fetch.clone(),
                    "parse" => text.parse.clone(),
                    "follow" => text.follow.clone(),
                    "store" => text.store.clone(),
                    _ => return Err(ControlError::UnknownKey(key.to_string())),
                }
            }
            _ => return Err(ControlError::UnknownKey(key.to_string())),
        })
    }

    fn set(&self, key: &str, value: &str) -> Result<(), ControlError> {
        let s = &self.shared;
        let r = Ordering::Relaxed;
        match key {
            "workbench.host_delay_ms" => s.fixed.set_host_ms(parse_value(key, value)?),
            "workbench.ip_delay_ms" => s.fixed.set_ip_ms(parse_value(key, value)?),
            "workbench.bytes" => {
                let bytes: u64 = parse_value(key, value)?;
                s.workbench.budget().set_limit(bytes);
                s.front.set_workbench_bytes(bytes);
            }
            "workbench.crawl_delay" => s.delays.honor_crawl_delay.store(parse_value(key, value)?, r),
            "workbench.max_crawl_delay_ms" => s.delays.max_crawl_delay_ms.store(parse_value(key, value)?, r),
            "fetch.error_delay_ms" => s.delays.error_delay_ms.store(parse_value(key, value)?, r),
            "fetch.keepalive_ms" => s.keepalive.max_ms.store(parse_value(key, value)?, r),
            "fetch.keepalive_urls" => {
                let n: u64 = parse_value(key, value)?;
                if n == 0 {
                    return Err(ControlError::InvalidValue {
                        key: key.to_string(),
                        reason: "must be positive".into(),
                    });
                }
                s.keepalive.max_urls.store(n, r);
            }
            "fetch.keepalive_strict" => s.keepalive.strict.store(parse_value(key, value)?, r),
            "front.required" => s.front.reset(parse_value(key, value)?),
            k if k.starts_with("filters.") => {
                let mut text = s.filter_text.lock();
                let mut next = text.clone();
                let slot = match &k["filters.".len()..] {
                    "schedule" => &mut next.schedule,
                    "fetch" => &mut next.fetch,
                    "parse" => &mut next.parse,
                    "follow" => &mut next.follow,
                    "store" => &mut next.store,
                    _ => return Err(ControlError::UnknownKey(key.to_string())),
                };
                *slot = value.to_string();
                let parsed = Filters::parse(&next).map_err(|e| ControlError::InvalidValue {
                    key: key.to_string(),
                    reason: e.to_string(),
                })?;
                *s.filters.write() = Arc::new(parsed);
                *text = next;
            }
            k if IMMUTABLE.contains(&k) => return Err(ControlError::ImmutableKey(key.to_string())),
            _ => return Err(ControlError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    fn stats(&self) -> Vec<(String, String)> {
        metrics(&self.shared)
            .into_iter()
            .map(|(k, v)| (k, v.to_string()))
            .collect()
    }
}
