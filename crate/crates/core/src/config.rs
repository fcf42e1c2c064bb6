//! Agent configuration, read from TOML. Every key has a default; unknown
//! keys are rejected.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::filters::{CountedUrl, Filter};
use crate::pipeline::parse::ResponseView;
use crate::store::DuplicatePolicy;
use crate::CrawlUrl;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Syntax(#[from] toml::de::Error),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    /// Identity in the cluster; must match one of `cluster.agents` if any.
    pub name: String,
    pub data_dir: PathBuf,
    pub seeds: Vec<String>,
}

impl Default for AgentSection {
    fn default() -> Self {
        AgentSection {
            name: "agent-0".into(),
            data_dir: "crawl-data".into(),
            seeds: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SieveSection {
    pub bytes: usize,
    pub durable: bool,
}

impl Default for SieveSection {
    fn default() -> Self {
        SieveSection {
            bytes: 256 << 20,
            durable: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct WorkbenchSection {
    pub bytes: u64,
    pub host_delay_ms: u64,
    pub ip_delay_ms: u64,
    /// Honor robots.txt Crawl-delay when longer than `host_delay_ms`.
    pub crawl_delay: bool,
    pub max_crawl_delay_ms: u64,
}

impl Default for WorkbenchSection {
    fn default() -> Self {
        WorkbenchSection {
            bytes: 512 << 20,
            host_delay_ms: 4000,
            ip_delay_ms: 500,
            crawl_delay: true,
            max_crawl_delay_ms: 60_000,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FrontSection {
    pub growth_step: u64,
    pub growth_factor: f64,
    pub growth_interval_ms: u64,
    /// 0 means no cap.
    pub max_front: u64,
}

impl Default for FrontSection {
    fn default() -> Self {
        FrontSection {
            growth_step: 1,
            growth_factor: 1.1,
            growth_interval_ms: 100,
            max_front: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct VirtualizerSection {
    pub file_bytes: u64,
    pub gc_threshold: f64,
}

impl Default for VirtualizerSection {
    fn default() -> Self {
        VirtualizerSection {
            file_bytes: 64 << 20,
            gc_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum RobotsFallback {
    /// An unreachable robots.txt allows everything.
    #[default]
    Allow,
    /// An unreachable robots.txt blocks the host (except robots.txt itself).
    Disallow,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FetchSection {
    pub workers: usize,
    pub keepalive_ms: u64,
    pub keepalive_urls: u64,
    /// Apply host and IP delays between requests on a kept-alive connection.
    pub keepalive_strict: bool,
    pub user_agent: String,
    /// Product token matched against robots.txt groups.
    pub robots_agent: String,
    pub robots: bool,
    pub robots_fallback: RobotsFallback,
    pub connect_timeout_ms: u64,
    pub io_timeout_ms: u64,
    /// Send every request to this HTTP proxy.
    pub proxy: Option<SocketAddr>,
    pub window_bytes: usize,
    pub max_body_bytes: u64,
    /// Attempts per URL before it is dropped.
    pub max_attempts: u32,
    /// Extra host delay after a failure, doubled per consecutive failure.
    pub error_delay_ms: u64,
    pub thread_stack_bytes: usize,
}

impl Default for FetchSection {
    fn default() -> Self {
        FetchSection {
            workers: 1000,
            keepalive_ms: 3000,
            keepalive_urls: 4,
            keepalive_strict: false,
            user_agent: concat!("hostwise/", env!("CARGO_PKG_VERSION")).into(),
            robots_agent: "hostwise".into(),
            robots: true,
            robots_fallback: RobotsFallback::Allow,
            connect_timeout_ms: 10_000,
            io_timeout_ms: 30_000,
            proxy: None,
            window_bytes: 64 << 10,
            max_body_bytes: 8 << 20,
            max_attempts: 3,
            error_delay_ms: 1000,
            thread_stack_bytes: 256 << 10,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ParseSection {
    /// 0 means one per available core.
    pub workers: usize,
    pub url_cache: usize,
    /// Bytes of a body examined for links and the digest.
    pub parse_bytes: usize,
    pub expected_archetypes: u64,
    pub false_positive_rate: f64,
}

impl Default for ParseSection {
    fn default() -> Self {
        ParseSection {
            workers: 0,
            url_cache: 1 << 20,
            parse_bytes: 4 << 20,
            expected_archetypes: 1_000_000,
            false_positive_rate: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DnsSection {
    pub workers: usize,
    pub max_attempts: u32,
    pub retry_ms: u64,
}

impl Default for DnsSection {
    fn default() -> Self {
        DnsSection {
            workers: 8,
            max_attempts: 3,
            retry_ms: 1000,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct StoreSection {
    pub enabled: bool,
    /// Defaults to `<data_dir>/store`.
    pub dir: Option<PathBuf>,
    pub rotate_bytes: u64,
    pub duplicates: String,
    pub level: u32,
}

impl Default for StoreSection {
    fn default() -> Self {
        StoreSection {
            enabled: true,
            dir: None,
            rotate_bytes: 1 << 30,
            duplicates: "mark".into(),
            level: 6,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub schedule: String,
    pub fetch: String,
    pub parse: String,
    pub follow: String,
    pub store: String,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection {
            schedule: "true".into(),
            fetch: "true".into(),
            parse: "true".into(),
            follow: "true".into(),
            store: "true".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PeerConfig {
    pub name: String,
    pub udp: SocketAddr,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    /// Every agent, this one included. Empty for a standalone agent.
    pub agents: Vec<PeerConfig>,
    pub vnodes: u32,
    pub flush_ms: u64,
}

impl Default for ClusterSection {
    fn default() -> Self {
        ClusterSection {
            agents: Vec::new(),
            vnodes: crate::cluster::ring::DEFAULT_VNODES,
            flush_ms: 20,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    pub addr: Option<SocketAddr>,
}

#[derive(Debug, Clone, Deserialize, PartialEq, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub agent: AgentSection,
    pub sieve: SieveSection,
    pub workbench: WorkbenchSection,
    pub front: FrontSection,
    pub virtualizer: VirtualizerSection,
    pub fetch: FetchSection,
    pub parse: ParseSection,
    pub dns: DnsSection,
    pub store: StoreSection,
    pub filters: FilterSection,
    pub cluster: ClusterSection,
    pub control: ControlSection,
}

/// The five filter hooks, parsed.
#[derive(Debug, Clone)]
pub struct Filters {
    pub schedule: Filter<CrawlUrl>,
    pub fetch: Filter<CountedUrl<'static>>,
    pub parse: Filter<ResponseView<'static>>,
    pub follow: Filter<CrawlUrl>,
    pub store: Filter<ResponseView<'static>>,
}

impl Filters {
    pub fn parse(section: &FilterSection) -> Result<Filters, ConfigError> {
        let err = |key: &'static str| move |e: crate::filters::FilterError| invalid(&format!("filters.{key}"), e.to_string());
        Ok(Filters {
            schedule: Filter::parse(&section.schedule).map_err(err("schedule"))?,
            fetch: Filter::parse(&section.fetch).map_err(err("fetch"))?,
            parse: Filter::parse(&section.parse).map_err(err("parse"))?,
            follow: Filter::parse(&section.follow).map_err(err("follow"))?,
            store: Filter::parse(&section.store).map_err(err("store"))?,
        })
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config, ConfigError> {
        let config: Config = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.agent.name.is_empty() {
            return Err(invalid("agent.name", "must not be empty"));
        }
        for seed in &self.agent.seeds {
            CrawlUrl::parse(seed, None).map_err(|e| invalid("agent.seeds", format!("{seed}: {e}")))?;
        }
        if self.sieve.bytes < 16 {
            return Err(invalid("sieve.bytes", "must hold at least one entry (16 bytes)"));
        }
        if self.workbench.bytes == 0 {
            return Err(invalid("workbench.bytes", "must be positive"));
        }
        if self.front.growth_factor < 1.0 {
            return Err(invalid("front.growth_factor", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.virtualizer.gc_threshold) {
            return Err(invalid("virtualizer.gc_threshold", "must be in [0, 1)"));
        }
        if self.virtualizer.file_bytes < 4096 {
            return Err(invalid("virtualizer.file_bytes", "must be at least 4096"));
        }
        if self.fetch.workers == 0 {
            return Err(invalid("fetch.workers", "must be positive"));
        }
        if self.fetch.keepalive_urls == 0 {
            return Err(invalid("fetch.keepalive_urls", "must be positive"));
        }
        if self.fetch.window_bytes == 0 {
            return Err(invalid("fetch.window_bytes", "must be positive"));
        }
        if self.fetch.max_attempts == 0 {
            return Err(invalid("fetch.max_attempts", "must be positive"));
        }
        if !(self.parse.false_positive_rate > 0.0 && self.parse.false_positive_rate < 1.0) {
            return Err(invalid("parse.false_positive_rate", "must be in (0, 1)"));
        }
        if self.dns.workers == 0 {
            return Err(invalid("dns.workers", "must be positive"));
        }
        if self.dns.max_attempts == 0 {
            return Err(invalid("dns.max_attempts", "must be positive"));
        }
        self.store
            .duplicates
            .parse::<DuplicatePolicy>()
            .map_err(|e| invalid("store.duplicates", e))?;
        if self.store.level > 9 {
            return Err(invalid("store.level", "must be 0..=9"));
        }
        if !self.cluster.agents.is_empty() {
            if !self.cluster.agents.iter().any(|a| a.name == self.agent.name) {
                return Err(invalid("cluster.agents", format!("no entry for this agent `{}`", self.agent.name)));
            }
            if self.cluster.vnodes == 0 {
                return Err(invalid("cluster.vnodes", "must be positive"));
            }
        }
        Filters::parse(&self.filters)?;
        Ok(())
    }

    pub fn parse_workers(&self) -> usize {
        if self.parse.workers > 0 {
            self.parse.workers
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }

    pub fn store_dir(&self) -> PathBuf {
        self.store.dir.clone().unwrap_or_else(|| self.agent.data_dir.join("store"))
    }
}
