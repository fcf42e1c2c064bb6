//! Scaled-down crawl experiments against the synthetic web: politeness,
//! per-host visit order, thread scaling, front adaptation, multi-agent
//! scaling and duplicate detection.
//!
//! Every runner starts its own server and agents in this process and
//! returns raw measurements; judging them is left to the caller.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::net::{SocketAddr, UdpSocket};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Deserialize;
use tempfile::TempDir;
use thiserror::Error;

use hostwise::agent::{Agent, AgentError, AgentOptions};
use hostwise::config::{Config, PeerConfig};
use hostwise::store::{store_files, StoreError, WarcReader};
use hostwise::CrawlUrl;

use crate::audit::{check_politeness, LogEntry, PolitenessReport};
use crate::server::{ServerOptions, SynthServer};
use crate::synth::{PageId, SynthResolver, SyntheticWeb, SyntheticWebSpec};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("agent: {0}")]
    Agent(#[from] AgentError),
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Setup(String),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// Counters of one agent at one instant.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    /// Milliseconds since the run started.
    pub at_ms: u64,
    pub values: BTreeMap<String, u64>,
}

impl Snapshot {
    /// Reads every counter of `agent`, plus `requests`: pages and robots
    /// files fetched.
    pub fn take(agent: &Agent, start: Instant) -> Snapshot {
        let mut values: BTreeMap<String, u64> = agent.metrics().into_iter().collect();
        let requests = values.get("fetched").copied().unwrap_or(0) + values.get("robots_fetched").copied().unwrap_or(0);
        values.insert("requests".into(), requests);
        Snapshot {
            at_ms: start.elapsed().as_millis() as u64,
            values,
        }
    }

    pub fn get(&self, key: &str) -> u64 {
        self.values.get(key).copied().unwrap_or(0)
    }
}

/// A structured metrics line covering the interval between two snapshots.
pub fn report_line(agent: &str, prev: &Snapshot, cur: &Snapshot) -> String {
    let dt = (cur.at_ms.saturating_sub(prev.at_ms)).max(1) as f64 / 1000.0;
    let rate = |k: &str| cur.get(k).saturating_sub(prev.get(k)) as f64 / dt;
    let fetched = cur.get("fetched");
    let dup_rate = if fetched > 0 {
        cur.get("duplicates") as f64 / fetched as f64
    } else {
        0.0
    };
    let mut s = format!(
        "t={:.1} agent={agent} pages_per_s={:.1} bytes_per_s={:.0} fetched={fetched}",
        cur.at_ms as f64 / 1000.0,
        rate("fetched"),
        rate("bytes_fetched"),
    );
    for key in [
        "front",
        "required_front",
        "todo",
        "results",
        "workbench_queued",
        "sieve_ready",
        "fetch_errors",
        "dropped_urls",
    ] {
        let _ = write!(s, " {key}={}", cur.get(key));
    }
    let _ = write!(s, " duplicate_rate={dup_rate:.3}");
    s
}

/// Pages per second between the first snapshots at or after `from_ms` and
/// at or before `to_ms`.
pub fn rate(samples: &[Snapshot], key: &str, from_ms: u64, to_ms: u64) -> f64 {
    let a = samples.iter().find(|s| s.at_ms >= from_ms);
    let b = samples.iter().rev().find(|s| s.at_ms <= to_ms);
    match (a, b) {
        (Some(a), Some(b)) if b.at_ms > a.at_ms => {
            (b.get(key) - a.get(key)) as f64 * 1000.0 / (b.at_ms - a.at_ms) as f64
        }
        _ => 0.0,
    }
}

/// Mean of a gauge over the snapshots in `[from_ms, to_ms]`.
pub fn mean(samples: &[Snapshot], key: &str, from_ms: u64, to_ms: u64) -> f64 {
    let v: Vec<u64> = samples
        .iter()
        .filter(|s| s.at_ms >= from_ms && s.at_ms <= to_ms)
        .map(|s| s.get(key))
        .collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<u64>() as f64 / v.len() as f64
    }
}

/// When a run ends.
#[derive(Debug, Clone, Copy)]
pub enum Until {
    Elapsed(Duration),
    /// Every agent idle, or the limit reached.
    Idle(Duration),
}

/// Samples taken during a run, one vector per agent, and the final counters.
pub struct Run {
    pub samples: Vec<Vec<Snapshot>>,
    pub finals: Vec<Snapshot>,
    pub elapsed: Duration,
    /// True when the run ended because every agent went idle.
    pub completed: bool,
}

/// Baseline configuration for crawling the synthetic web through `proxy`.
pub fn synth_config(proxy: SocketAddr, data_dir: &Path) -> Config {
    let mut c = Config::default();
    c.agent.data_dir = data_dir.to_path_buf();
    c.sieve.bytes = 4 << 20;
    c.sieve.durable = false;
    c.workbench.bytes = 64 << 20;
    c.fetch.proxy = Some(proxy);
    c.fetch.io_timeout_ms = 10_000;
    c.fetch.connect_timeout_ms = 5_000;
    c.fetch.error_delay_ms = 100;
    c.parse.expected_archetypes = 1_000_000;
    c.store.enabled = false;
    c.store.level = 1;
    c.virtualizer.file_bytes = 8 << 20;
    c.filters.follow = "hostEndsWith(.synth)".into();
    c
}

fn options(web: &SyntheticWeb) -> AgentOptions {
    AgentOptions {
        resolver: Arc::new(SynthResolver::new(web.clone())),
        ..Default::default()
    }
}

/// Starts agents, seeds each of them with every seed, samples them every
/// `every` until `until`, and stops them.
pub fn run_agents(
    configs: Vec<Config>,
    web: &SyntheticWeb,
    seeds: &[String],
    until: Until,
    every: Duration,
    mut report: impl FnMut(&str, &Snapshot, &Snapshot),
) -> Result<Run> {
    let mut agents = Vec::new();
    for c in configs {
        agents.push(Agent::start(c, options(web))?);
    }
    let start = Instant::now();
    for a in &agents {
        for s in seeds {
            let url = CrawlUrl::parse(s, None).map_err(|e| ExperimentError::Setup(format!("seed {s}: {e}")))?;
            a.seed(url);
        }
    }
    let mut samples: Vec<Vec<Snapshot>> = agents.iter().map(|a| vec![Snapshot::take(a, start)]).collect();
    let (limit, stop_when_idle) = match until {
        Until::Elapsed(d) => (d, false),
        Until::Idle(d) => (d, true),
    };
    let mut idle_since: Option<Instant> = None;
    let mut completed = false;
    let mut next = start + every;
    loop {
        let now = Instant::now();
        if now >= start + limit {
            break;
        }
        if stop_when_idle {
            if agents.iter().all(|a| a.is_idle()) {
                let since = *idle_since.get_or_insert(now);
                // Idle long enough for datagrams in flight to arrive.
                if now - since >= Duration::from_millis(500) {
                    completed = true;
                    break;
                }
            } else {
                idle_since = None;
            }
        }
        if now >= next {
            for (a, s) in agents.iter().zip(samples.iter_mut()) {
                let snap = Snapshot::take(a, start);
                report(a.name(), s.last().expect("first sample"), &snap);
                s.push(snap);
            }
            next += every;
        }
        std::thread::sleep(Duration::from_millis(20).min(every));
    }
    let finals: Vec<Snapshot> = agents.iter().map(|a| Snapshot::take(a, start)).collect();
    for (s, f) in samples.iter_mut().zip(&finals) {
        s.push(f.clone());
    }
    let elapsed = start.elapsed();
    for a in agents {
        a.stop()?;
    }
    Ok(Run {
        samples,
        finals,
        elapsed,
        completed,
    })
}

fn start_server(spec: SyntheticWebSpec, log: bool) -> Result<SynthServer> {
    spec.validate().map_err(|e| ExperimentError::Setup(e.to_string()))?;
    Ok(SynthServer::start(SyntheticWeb::new(spec), ServerOptions { threads: 2, log })?)
}

fn roots(hosts: u32) -> Vec<String> {
    (0..hosts).map(SyntheticWeb::root_url).collect()
}

/// Page requests of a log (robots.txt excluded).
pub fn page_requests(log: &[LogEntry]) -> impl Iterator<Item = &LogEntry> {
    log.iter().filter(|e| e.path != "/robots.txt")
}

// Politeness.

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolitenessParams {
    pub hosts: u32,
    pub ips: u32,
    pub pages_per_host: u32,
    pub host_delay_ms: u64,
    pub ip_delay_ms: u64,
    pub workers: usize,
    pub duration_ms: u64,
}

impl Default for PolitenessParams {
    fn default() -> Self {
        PolitenessParams {
            hosts: 200,
            ips: 40,
            pages_per_host: 1000,
            host_delay_ms: 400,
            ip_delay_ms: 100,
            workers: 500,
            duration_ms: 300_000,
        }
    }
}

pub struct PolitenessResult {
    pub report: PolitenessReport,
    pub fetched: u64,
    pub elapsed: Duration,
}

/// Crawls many hosts sharing few addresses and audits the server log.
pub fn politeness(p: &PolitenessParams, verbose: bool) -> Result<PolitenessResult> {
    let server = start_server(
        SyntheticWebSpec {
            seed: 11,
            hosts: p.hosts,
            ips: p.ips,
            pages_per_host: [p.pages_per_host, p.pages_per_host],
            external_fraction: 0.05,
            page_bytes: [1024, 4096],
            ..Default::default()
        },
        true,
    )?;
    let dir = TempDir::new()?;
    let mut c = synth_config(server.addr(), dir.path());
    c.fetch.workers = p.workers;
    c.workbench.host_delay_ms = p.host_delay_ms;
    c.workbench.ip_delay_ms = p.ip_delay_ms;
    // Delays between requests on one connection count too.
    c.fetch.keepalive_strict = true;
    let run = run_agents(
        vec![c],
        server.web(),
        &roots(p.hosts),
        Until::Elapsed(Duration::from_millis(p.duration_ms)),
        Duration::from_secs(5),
        |a, prev, cur| {
            if verbose {
                eprintln!("{}", report_line(a, prev, cur));
            }
        },
    )?;
    let log = server.log();
    Ok(PolitenessResult {
        report: check_politeness(&log, p.host_delay_ms, p.ip_delay_ms),
        fetched: run.finals[0].get("fetched"),
        elapsed: run.elapsed,
    })
}

// Breadth-first order on one host.

pub struct BfsResult {
    pub web: SyntheticWeb,
    /// Paths in the order the server received them, robots.txt excluded.
    pub order: Vec<String>,
    /// URLs that went through the virtualizer.
    pub virtualized: u64,
    pub refills: u64,
    pub completed: bool,
}

/// Crawls one host with one fetch worker and a workbench too small for the
/// host's queue, recording the page order seen by the server.
pub fn single_host_bfs(pages: u32, workbench_bytes: u64, limit: Duration) -> Result<BfsResult> {
    let server = start_server(
        SyntheticWebSpec {
            seed: 23,
            hosts: 1,
            ips: 1,
            pages_per_host: [pages, pages],
            branching: 3,
            outdegree: [1, 6],
            external_fraction: 0.0,
            page_bytes: [512, 1024],
            ..Default::default()
        },
        true,
    )?;
    let dir = TempDir::new()?;
    let mut c = synth_config(server.addr(), dir.path());
    c.fetch.workers = 1;
    c.workbench.bytes = workbench_bytes;
    c.workbench.host_delay_ms = 0;
    c.workbench.ip_delay_ms = 0;
    c.virtualizer.file_bytes = 1 << 20;
    let run = run_agents(
        vec![c],
        server.web(),
        &roots(1),
        Until::Idle(limit),
        Duration::from_secs(1),
        |_, _, _| {},
    )?;
    let order = page_requests(&server.log()).map(|e| e.path.clone()).collect();
    Ok(BfsResult {
        web: server.web().clone(),
        order,
        virtualized: run.finals[0].get("distributor_virtualized"),
        refills: run.finals[0].get("distributor_refills"),
        completed: run.completed,
    })
}

// Thread scaling.

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingParams {
    pub workers: Vec<usize>,
    pub delay_ms: u64,
    pub concurrency: usize,
    pub hosts: u32,
    pub pages_per_host: u32,
    pub warmup_ms: u64,
    pub measure_ms: u64,
}

impl Default for ScalingParams {
    fn default() -> Self {
        ScalingParams {
            workers: vec![32, 64, 128, 256, 512, 1024],
            delay_ms: 200,
            concurrency: 300,
            hosts: 4096,
            pages_per_host: 40,
            warmup_ms: 4000,
            measure_ms: 8000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScalingPoint {
    pub workers: usize,
    pub pages_per_s: f64,
}

/// Pages per second against fetch workers, with a server that serves at
/// most `concurrency` requests at once, each taking `delay_ms`.
pub fn thread_scaling(p: &ScalingParams, verbose: bool) -> Result<Vec<ScalingPoint>> {
    let server = start_server(
        SyntheticWebSpec {
            seed: 31,
            hosts: p.hosts,
            ips: p.hosts,
            pages_per_host: [p.pages_per_host, p.pages_per_host],
            external_fraction: 0.0,
            page_bytes: [1024, 2048],
            delay_ms: [p.delay_ms, p.delay_ms],
            max_concurrency: p.concurrency,
            ..Default::default()
        },
        false,
    )?;
    let mut out = Vec::new();
    for &workers in &p.workers {
        let dir = TempDir::new()?;
        let mut c = synth_config(server.addr(), dir.path());
        c.fetch.workers = workers;
        c.fetch.robots = false;
        c.workbench.host_delay_ms = 0;
        c.workbench.ip_delay_ms = 0;
        let total = Duration::from_millis(p.warmup_ms + p.measure_ms);
        let run = run_agents(
            vec![c],
            server.web(),
            &roots(p.hosts),
            Until::Elapsed(total + Duration::from_millis(300)),
            Duration::from_millis(500),
            |a, prev, cur| {
                if verbose {
                    eprintln!("{}", report_line(a, prev, cur));
                }
            },
        )?;
        let from = p.warmup_ms;
        let to = total.as_millis() as u64;
        let pages_per_s = rate(&run.samples[0], "fetched", from, to);
        if verbose {
            eprintln!("workers={workers} pages_per_s={pages_per_s:.1}");
        }
        out.push(ScalingPoint { workers, pages_per_s });
    }
    Ok(out)
}

// Front adaptation.

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontParams {
    pub ip_delays_ms: Vec<u64>,
    /// Host delay as a multiple of the IP delay.
    pub host_factor: u64,
    pub workers: usize,
    pub server_delay_ms: u64,
    /// Requests the server handles at once; this caps throughput, so that
    /// workers only idle when the front is too small.
    pub server_concurrency: usize,
    pub hosts: u32,
    pub ips: u32,
    pub pages_per_host: u32,
    /// Hosts whose root is seeded; the others are found through links.
    pub seed_hosts: u32,
    pub external_fraction: f64,
    /// URLs fetched per hold of a host. With more than one, a cold crawl
    /// needs a larger front than the steady state (every host has a single
    /// URL at first) and the required front, which never shrinks, keeps the
    /// warm-up value.
    pub keepalive_urls: u64,
    pub duration_ms: u64,
}

impl Default for FrontParams {
    fn default() -> Self {
        FrontParams {
            ip_delays_ms: vec![250, 500, 1000, 2000],
            host_factor: 8,
            workers: 8,
            server_delay_ms: 50,
            server_concurrency: 2,
            hosts: 1600,
            ips: 400,
            pages_per_host: 200,
            seed_hosts: 256,
            external_fraction: 0.1,
            keepalive_urls: 1,
            duration_ms: 60_000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FrontPoint {
    pub ip_delay_ms: u64,
    pub host_delay_ms: u64,
    /// Mean front over the second half of the run.
    pub front: f64,
    pub required_front: u64,
    pub pages_per_s: f64,
}

/// Steady-state front size and speed for each IP delay.
pub fn front_sweep(p: &FrontParams, verbose: bool) -> Result<Vec<FrontPoint>> {
    let server = start_server(
        SyntheticWebSpec {
            seed: 47,
            hosts: p.hosts,
            ips: p.ips,
            pages_per_host: [p.pages_per_host, p.pages_per_host],
            external_fraction: p.external_fraction,
            page_bytes: [1024, 4096],
            delay_ms: [p.server_delay_ms, p.server_delay_ms],
            max_concurrency: p.server_concurrency,
            ..Default::default()
        },
        false,
    )?;
    let mut out = Vec::new();
    for &ip_delay in &p.ip_delays_ms {
        let dir = TempDir::new()?;
        let mut c = synth_config(server.addr(), dir.path());
        c.fetch.workers = p.workers;
        c.fetch.robots = false;
        c.fetch.keepalive_urls = p.keepalive_urls;
        c.workbench.ip_delay_ms = ip_delay;
        c.workbench.host_delay_ms = ip_delay * p.host_factor;
        let run = run_agents(
            vec![c],
            server.web(),
            &roots(p.seed_hosts.min(p.hosts)),
            Until::Elapsed(Duration::from_millis(p.duration_ms)),
            Duration::from_millis(500),
            |a, prev, cur| {
                if verbose {
                    eprintln!("{}", report_line(a, prev, cur));
                }
            },
        )?;
        let end = run.elapsed.as_millis() as u64;
        let half = end / 2;
        let s = &run.samples[0];
        let point = FrontPoint {
            ip_delay_ms: ip_delay,
            host_delay_ms: ip_delay * p.host_factor,
            front: mean(s, "front", half, end),
            required_front: run.finals[0].get("required_front"),
            pages_per_s: rate(s, "fetched", half, end),
        };
        if verbose {
            eprintln!("{point:?}");
        }
        out.push(point);
    }
    Ok(out)
}

// Multi-agent scaling and duplicate detection.

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterParams {
    pub agents: usize,
    pub hosts: u32,
    pub pages_per_host: [u32; 2],
    pub workers: usize,
    pub server_delay_ms: u64,
    pub host_delay_ms: u64,
    pub near_duplicate_fraction: f64,
    /// Throughput is measured between these instants.
    pub window_ms: [u64; 2],
    pub limit_ms: u64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            agents: 1,
            hosts: 150,
            pages_per_host: [12, 20],
            workers: 8,
            server_delay_ms: 200,
            host_delay_ms: 50,
            near_duplicate_fraction: 0.0,
            window_ms: [2000, 10_000],
            limit_ms: 300_000,
        }
    }
}

pub struct ClusterRun {
    pub web: SyntheticWeb,
    /// Pages and robots files per second over the window, all agents.
    pub requests_per_s: f64,
    pub completed: bool,
    /// URLs of WARC response records (archetypes), over all agents.
    pub archetype_urls: BTreeSet<String>,
    /// URLs of WARC revisit records (duplicates), over all agents.
    pub duplicate_urls: BTreeSet<String>,
    /// Hosts requested by each agent, by user agent in the server log.
    pub hosts_by_agent: BTreeMap<String, BTreeSet<u32>>,
    /// Pages served, each once, in arrival order.
    pub served_pages: Vec<PageId>,
    pub finals: Vec<Snapshot>,
}

fn free_udp_port() -> Result<SocketAddr> {
    Ok(UdpSocket::bind("127.0.0.1:0")?.local_addr()?)
}

/// Crawls to completion with `agents` agents in this process, each with
/// `workers` fetch workers and its own user agent, exchanging URLs over
/// loopback UDP.
pub fn cluster(p: &ClusterParams, verbose: bool) -> Result<ClusterRun> {
    let server = start_server(
        SyntheticWebSpec {
            seed: 59,
            hosts: p.hosts,
            ips: p.hosts,
            pages_per_host: p.pages_per_host,
            external_fraction: 0.1,
            page_bytes: [1024, 4096],
            delay_ms: [p.server_delay_ms, p.server_delay_ms],
            near_duplicate_fraction: p.near_duplicate_fraction,
            ..Default::default()
        },
        true,
    )?;
    let dirs: Vec<TempDir> = (0..p.agents).map(|_| TempDir::new()).collect::<std::io::Result<_>>()?;
    let names: Vec<String> = (0..p.agents).map(|i| format!("agent-{i}")).collect();
    let peers: Vec<PeerConfig> = names
        .iter()
        .map(|n| {
            Ok(PeerConfig {
                name: n.clone(),
                udp: free_udp_port()?,
            })
        })
        .collect::<Result<_>>()?;
    let configs: Vec<Config> = (0..p.agents)
        .map(|i| {
            let mut c = synth_config(server.addr(), dirs[i].path());
            c.agent.name = names[i].clone();
            c.fetch.workers = p.workers;
            c.fetch.user_agent = format!("hostwise-{}", names[i]);
            c.workbench.host_delay_ms = p.host_delay_ms;
            c.workbench.ip_delay_ms = 0;
            c.store.enabled = true;
            if p.agents > 1 {
                c.cluster.agents = peers.clone();
            }
            c
        })
        .collect();
    let run = run_agents(
        configs,
        server.web(),
        &roots(p.hosts),
        Until::Idle(Duration::from_millis(p.limit_ms)),
        Duration::from_millis(250),
        |a, prev, cur| {
            if verbose && cur.at_ms / 1000 != prev.at_ms / 1000 {
                eprintln!("{}", report_line(a, prev, cur));
            }
        },
    )?;
    let [from, to] = p.window_ms;
    let requests_per_s = run.samples.iter().map(|s| rate(s, "requests", from, to)).sum();

    let mut archetype_urls = BTreeSet::new();
    let mut duplicate_urls = BTreeSet::new();
    for d in &dirs {
        for file in store_files(&d.path().join("store"))? {
            for record in WarcReader::open(&file)? {
                let record = record?;
                let Some(uri) = record.target_uri() else { continue };
                match record.record_type() {
                    Some("response") => archetype_urls.insert(uri.to_string()),
                    Some("revisit") => duplicate_urls.insert(uri.to_string()),
                    _ => false,
                };
            }
        }
    }
    let log = server.log();
    let mut hosts_by_agent: BTreeMap<String, BTreeSet<u32>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    let mut served_pages = Vec::new();
    for e in page_requests(&log) {
        hosts_by_agent.entry(e.agent.clone()).or_default().insert(e.host);
        if let Some(page) = SyntheticWeb::parse_path(&e.path) {
            let id = PageId { host: e.host, page };
            if server.web().exists(id) && seen.insert(id) {
                served_pages.push(id);
            }
        }
    }
    Ok(ClusterRun {
        web: server.web().clone(),
        requests_per_s,
        completed: run.completed,
        archetype_urls,
        duplicate_urls,
        hosts_by_agent,
        served_pages,
        finals: run.finals,
    })
}
