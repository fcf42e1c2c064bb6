//! A deterministic synthetic web. Every page is a pure function of the seed,
//! the host and the path, so any number of servers agree on its content.
//!
//! Host `i` is named `h{i}.synth` and lives on the fake address given by
//! [`SyntheticWeb::ip_of`]. Page 0 of a host is `/`, page `k > 0` is
//! `/p{k}`. Pages link first to their children in a tree with fixed
//! branching (so every page is reachable from the root), then to random
//! pages of the same host or, with the external probability, of other
//! hosts.

use std::fmt::Write as _;
use std::net::{IpAddr, Ipv4Addr};
use std::path::Path;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Deserialize;
use thiserror::Error;
use xxhash_rust::xxh3::xxh3_64;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("cannot read {0}: {1}")]
    Read(String, std::io::Error),
    #[error("{0}")]
    Syntax(#[from] toml::de::Error),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ErrorRates {
    /// Connection closed without a response.
    #[serde(default)]
    pub reset: f64,
    /// 503 responses.
    #[serde(default)]
    pub server_error: f64,
    /// HTML cut in the middle of a tag.
    #[serde(default)]
    pub malformed: f64,
}

impl Default for ErrorRates {
    fn default() -> Self {
        ErrorRates {
            reset: 0.0,
            server_error: 0.0,
            malformed: 0.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticWebSpec {
    pub seed: u64,
    pub hosts: u32,
    /// Number of distinct fake addresses; host `i` uses address `i % ips`.
    pub ips: u32,
    /// Inclusive range, drawn once per host.
    pub pages_per_host: [u32; 2],
    /// Tree children per page.
    pub branching: u32,
    /// Inclusive range of additional links per page.
    pub outdegree: [u32; 2],
    /// Probability that an additional link leaves the host.
    pub external_fraction: f64,
    /// Inclusive range of page sizes.
    pub page_bytes: [usize; 2],
    /// Inclusive range of per-request delays, drawn per URL.
    pub delay_ms: [u64; 2],
    /// Pages (other than roots) whose text is shared with every other such
    /// page with the same number of links; they differ only in counters
    /// and dates.
    pub near_duplicate_fraction: f64,
    pub errors: ErrorRates,
    /// Path prefixes listed as `Disallow` in every robots.txt.
    pub robots_disallow: Vec<String>,
    /// Listening address of the server.
    pub addr: String,
    /// Requests served at once; 0 means no limit.
    pub max_concurrency: usize,
}

impl Default for SyntheticWebSpec {
    fn default() -> Self {
        SyntheticWebSpec {
            seed: 1,
            hosts: 100,
            ips: 25,
            pages_per_host: [50, 200],
            branching: 4,
            outdegree: [2, 8],
            external_fraction: 0.1,
            page_bytes: [2048, 8192],
            delay_ms: [0, 0],
            near_duplicate_fraction: 0.0,
            errors: ErrorRates::default(),
            robots_disallow: Vec::new(),
            addr: "127.0.0.1:0".into(),
            max_concurrency: 0,
        }
    }
}

impl SyntheticWebSpec {
    pub fn from_toml(text: &str) -> Result<Self, SpecError> {
        let spec: SyntheticWebSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, SpecError> {
        let text = std::fs::read_to_string(path).map_err(|e| SpecError::Read(path.display().to_string(), e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let bad = |key, reason: &str| {
            Err(SpecError::Invalid {
                key,
                reason: reason.to_string(),
            })
        };
        if self.hosts == 0 {
            return bad("hosts", "must be positive");
        }
        if self.ips == 0 {
            return bad("ips", "must be positive");
        }
        if self.pages_per_host[0] == 0 || self.pages_per_host[0] > self.pages_per_host[1] {
            return bad("pages_per_host", "must be a non-empty positive range");
        }
        if self.branching == 0 {
            return bad("branching", "must be positive");
        }
        if self.outdegree[0] > self.outdegree[1] {
            return bad("outdegree", "must be a range");
        }
        if self.page_bytes[0] > self.page_bytes[1] {
            return bad("page_bytes", "must be a range");
        }
        if self.delay_ms[0] > self.delay_ms[1] {
            return bad("delay_ms", "must be a range");
        }
        for (key, p) in [
            ("external_fraction", self.external_fraction),
            ("near_duplicate_fraction", self.near_duplicate_fraction),
            ("errors.reset", self.errors.reset),
            ("errors.server_error", self.errors.server_error),
            ("errors.malformed", self.errors.malformed),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(key, "must be a probability");
            }
        }
        Ok(())
    }
}

/// What the server does with a request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Page { status: u16, content_type: &'static str, body: Vec<u8> },
    /// Drop the connection without answering.
    Reset,
}

/// A link of a synthetic page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PageId {
    pub host: u32,
    pub page: u32,
}

/// Identifies the text of a page: pages with equal keys have equal
/// summaries for duplicate detection purposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContentKey {
    Unique(PageId),
    Shared { links: u32 },
}

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ne", "pu", "ra", "si", "to", "ve", "zo", "bar", "cel", "dor", "fen", "gal", "hur", "jin",
    "kor", "lum", "mor", "nav", "pel", "quo", "ris", "sul", "tam", "ush", "vor", "wex", "yil",
];

const MONTHS: &[&str] = &[
    "January", "February", "March", "April", "May", "June", "July", "August", "September", "October",
    "November", "December",
];

fn mix(parts: &[u64]) -> u64 {
    let bytes: Vec<u8> = parts.iter().flat_map(|p| p.to_le_bytes()).collect();
    xxh3_64(&bytes)
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

const TAG_PAGES: u64 = 1;
const TAG_DEGREE: u64 = 2;
const TAG_LINK: u64 = 3;
const TAG_DUP: u64 = 4;
const TAG_TEXT: u64 = 5;
const TAG_NOISE: u64 = 6;
const TAG_ERROR: u64 = 7;
const TAG_DELAY: u64 = 8;
const TAG_SIZE: u64 = 9;

#[derive(Debug, Clone)]
pub struct SyntheticWeb {
    spec: SyntheticWebSpec,
}

impl SyntheticWeb {
    pub fn new(spec: SyntheticWebSpec) -> Self {
        SyntheticWeb { spec }
    }

    pub fn spec(&self) -> &SyntheticWebSpec {
        &self.spec
    }

    fn h(&self, parts: &[u64]) -> u64 {
        let mut all = Vec::with_capacity(parts.len() + 1);
        all.push(self.spec.seed);
        all.extend_from_slice(parts);
        mix(&all)
    }

    fn draw(&self, range: [u64; 2], h: u64) -> u64 {
        range[0] + h % (range[1] - range[0] + 1)
    }

    pub fn host_name(host: u32) -> String {
        format!("h{host}.synth")
    }

    /// Host index of a synthetic host name.
    pub fn parse_host(name: &str) -> Option<u32> {
        let n: u32 = name.strip_prefix('h')?.strip_suffix(".synth")?.parse().ok()?;
        (format!("h{n}.synth") == name).then_some(n)
    }

    pub fn root_url(host: u32) -> String {
        format!("http://h{host}.synth/")
    }

    pub fn path_of(page: u32) -> String {
        if page == 0 {
            "/".to_string()
        } else {
            format!("/p{page}")
        }
    }

    pub fn url_of(id: PageId) -> String {
        format!("http://h{}.synth{}", id.host, Self::path_of(id.page))
    }

    /// Page index of a path, if it names a page (not whether it exists).
    pub fn parse_path(path: &str) -> Option<u32> {
        if path == "/" {
            return Some(0);
        }
        let n: u32 = path.strip_prefix("/p")?.parse().ok()?;
        (n > 0 && format!("/p{n}") == path).then_some(n)
    }

    pub fn ip_index(&self, host: u32) -> u32 {
        host % self.spec.ips
    }

    /// Fake address of a host: 10.x.y.z from the address index.
    pub fn ip_of(&self, host: u32) -> IpAddr {
        let i = self.ip_index(host) + 1;
        IpAddr::V4(Ipv4Addr::new(10, (i >> 16) as u8, (i >> 8) as u8, i as u8))
    }

    pub fn pages(&self, host: u32) -> u32 {
        let [lo, hi] = self.spec.pages_per_host;
        self.draw([lo as u64, hi as u64], self.h(&[TAG_PAGES, host as u64])) as u32
    }

    pub fn exists(&self, id: PageId) -> bool {
        id.host < self.spec.hosts && id.page < self.pages(id.host)
    }

    /// Outgoing links of an existing page, in document order.
    pub fn links(&self, id: PageId) -> Vec<PageId> {
        let n = self.pages(id.host);
        let b = self.spec.branching as u64;
        let mut out = Vec::new();
        let first = id.page as u64 * b + 1;
        for c in first..first + b {
            if c < n as u64 {
                out.push(PageId {
                    host: id.host,
                    page: c as u32,
                });
            }
        }
        let [lo, hi] = self.spec.outdegree;
        let extra = self.draw([lo as u64, hi as u64], self.h(&[TAG_DEGREE, id.host as u64, id.page as u64]));
        for j in 0..extra {
            let r = self.h(&[TAG_LINK, id.host as u64, id.page as u64, j]);
            let target = if unit(r) < self.spec.external_fraction && self.spec.hosts > 1 {
                let host = (r >> 7) as u32 % self.spec.hosts;
                let host = if host == id.host { (host + 1) % self.spec.hosts } else { host };
                let page = (r >> 40) as u32 % self.pages(host).min(1 + self.spec.branching);
                PageId { host, page }
            } else {
                PageId {
                    host: id.host,
                    page: (r >> 7) as u32 % n,
                }
            };
            out.push(target);
        }
        out
    }

    pub fn content_key(&self, id: PageId) -> ContentKey {
        if id.page > 0 && unit(self.h(&[TAG_DUP, id.host as u64, id.page as u64])) < self.spec.near_duplicate_fraction {
            ContentKey::Shared {
                links: self.links(id).len() as u32,
            }
        } else {
            ContentKey::Unique(id)
        }
    }

    fn text_seed(&self, key: ContentKey) -> u64 {
        match key {
            ContentKey::Unique(id) => self.h(&[TAG_TEXT, 0, id.host as u64, id.page as u64]),
            ContentKey::Shared { links } => self.h(&[TAG_TEXT, 1, links as u64]),
        }
    }

    /// Per-request delay of a path.
    pub fn delay_ms(&self, host: u32, path: &str) -> u64 {
        let [lo, hi] = self.spec.delay_ms;
        if lo == hi {
            return lo;
        }
        self.draw([lo, hi], self.h(&[TAG_DELAY, host as u64, mix_str(path)]))
    }

    fn error_draw(&self, host: u32, path: &str) -> f64 {
        unit(self.h(&[TAG_ERROR, host as u64, mix_str(path)]))
    }

    /// Whether requests for this URL fail at the connection level.
    pub fn is_reset(&self, host: u32, path: &str) -> bool {
        self.error_draw(host, path) < self.spec.errors.reset
    }

    pub fn robots_txt(&self) -> Vec<u8> {
        let mut s = String::from("User-agent: *\n");
        if self.spec.robots_disallow.is_empty() {
            s.push_str("Disallow:\n");
        }
        for p in &self.spec.robots_disallow {
            let _ = writeln!(s, "Disallow: {p}");
        }
        s.into_bytes()
    }

    /// The response for a request of `path` on host `host`.
    pub fn respond(&self, host: u32, path: &str) -> Outcome {
        let not_found = || Outcome::Page {
            status: 404,
            content_type: "text/plain",
            body: b"not found\n".to_vec(),
        };
        if host >= self.spec.hosts {
            return not_found();
        }
        if path == "/robots.txt" {
            return Outcome::Page {
                status: 200,
                content_type: "text/plain",
                body: self.robots_txt(),
            };
        }
        let Some(page) = Self::parse_path(path) else {
            return not_found();
        };
        let id = PageId { host, page };
        if !self.exists(id) {
            return not_found();
        }
        let e = self.error_draw(host, path);
        let rates = self.spec.errors;
        if e < rates.reset {
            return Outcome::Reset;
        }
        if e < rates.reset + rates.server_error {
            return Outcome::Page {
                status: 503,
                content_type: "text/plain",
                body: b"try again later\n".to_vec(),
            };
        }
        let mut body = self.page(id);
        if e < rates.reset + rates.server_error + rates.malformed {
            let cut = body.len() * 2 / 3;
            body.truncate(cut);
            body.extend_from_slice(b"<a href=\"<<<\" <p <");
        }
        Outcome::Page {
            status: 200,
            content_type: "text/html; charset=utf-8",
            body,
        }
    }

    /// HTML of an existing page.
    pub fn page(&self, id: PageId) -> Vec<u8> {
        let key = self.content_key(id);
        let mut text_rng = StdRng::seed_from_u64(self.text_seed(key));
        let mut noise = StdRng::seed_from_u64(self.h(&[TAG_NOISE, id.host as u64, id.page as u64]));
        let [lo, hi] = self.spec.page_bytes;
        let size_seed = match key {
            ContentKey::Unique(_) => self.h(&[TAG_SIZE, 0, id.host as u64, id.page as u64]),
            ContentKey::Shared { links } => self.h(&[TAG_SIZE, 1, links as u64]),
        };
        let target = self.draw([lo as u64, hi as u64], size_seed) as usize;

        let mut s = String::with_capacity(target + 512);
        let title = word(&mut text_rng);
        let _ = write!(
            s,
            "<!DOCTYPE html>\n<html><head><title>{title} {} {}</title></head>\n<body>\n<h1>{title}</h1>\n",
            id.host, id.page
        );
        let _ = writeln!(s, "<p class=\"counter\">Visitors: {}</p>", noise.random_range(0..10_000_000u32));
        let _ = writeln!(
            s,
            "<p>Last updated {} {}, {}</p>",
            MONTHS[noise.random_range(0..12)],
            noise.random_range(1..29u32),
            noise.random_range(1995..2030u32)
        );
        s.push_str("<ul>\n");
        let links = self.links(id);
        // Paragraphs fill the page up to its size from a length that depends
        // only on the content key, so near-duplicates share them exactly.
        let text_target = target.saturating_sub(150 + 34 * links.len());
        for link in links {
            let href = if link.host == id.host {
                Self::path_of(link.page)
            } else {
                Self::url_of(link)
            };
            let _ = writeln!(s, "<li><a href=\"{href}\">more</a></li>");
        }
        s.push_str("</ul>\n");
        let mut text = String::new();
        while text.len() < text_target {
            text.push_str("<p>");
            for _ in 0..text_rng.random_range(20..60) {
                text.push_str(&word(&mut text_rng));
                text.push(' ');
            }
            text.push_str("</p>\n");
        }
        s.push_str(&text);
        let _ = writeln!(
            s,
            "<p>Generated {:04}-{:02}-{:02}</p>\n</body></html>",
            noise.random_range(1995..2030u32),
            noise.random_range(1..13u32),
            noise.random_range(1..29u32)
        );
        s.into_bytes()
    }
}

fn word(rng: &mut StdRng) -> String {
    let n = rng.random_range(1..4);
    (0..n).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect()
}

fn mix_str(s: &str) -> u64 {
    xxh3_64(s.as_bytes())
}

/// A resolver for synthetic host names.
pub struct SynthResolver {
    web: SyntheticWeb,
}

impl SynthResolver {
    pub fn new(web: SyntheticWeb) -> Self {
        SynthResolver { web }
    }
}

impl hostwise::pipeline::dns::Resolver for SynthResolver {
    fn resolve(&self, host: &str) -> std::io::Result<IpAddr> {
        SyntheticWeb::parse_host(host)
            .filter(|&h| h < self.web.spec.hosts)
            .map(|h| self.web.ip_of(h))
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::NotFound, format!("no synthetic host {host}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn web() -> SyntheticWeb {
        SyntheticWeb::new(SyntheticWebSpec {
            near_duplicate_fraction: 0.3,
            ..Default::default()
        })
    }

    #[test]
    fn pages_are_deterministic() {
        let (a, b) = (web(), web());
        for host in 0..5 {
            for page in 0..5 {
                let id = PageId { host, page };
                assert_eq!(a.page(id), b.page(id));
            }
        }
    }

    #[test]
    fn sizes_within_range() {
        let w = web();
        for page in 0..50 {
            let len = w.page(PageId { host: 3, page }).len();
            assert!((2048..8192 + 1024).contains(&len), "{len}");
        }
    }

    #[test]
    fn names_round_trip() {
        assert_eq!(SyntheticWeb::parse_host("h17.synth"), Some(17));
        assert_eq!(SyntheticWeb::parse_host("h017.synth"), None);
        assert_eq!(SyntheticWeb::parse_path("/"), Some(0));
        assert_eq!(SyntheticWeb::parse_path("/p12"), Some(12));
        assert_eq!(SyntheticWeb::parse_path("/p0"), None);
        assert_eq!(SyntheticWeb::parse_path("/p012"), None);
    }

    #[test]
    fn links_stay_in_range() {
        let w = web();
        for host in 0..20 {
            for page in 0..w.pages(host) {
                for l in w.links(PageId { host, page }) {
                    assert!(w.exists(l), "{l:?}");
                }
            }
        }
    }

    #[test]
    fn ips_group_hosts() {
        let w = web();
        assert_eq!(w.ip_of(0), w.ip_of(25));
        assert_ne!(w.ip_of(0), w.ip_of(1));
    }
}
