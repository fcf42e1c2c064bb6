//! Parse workers: link extraction, URL-seen filtering, duplicate detection
//! and archiving.

use std::io::Read;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use chrono::Utc;
use crossbeam::channel::Sender;
use crossbeam::queue::SegQueue;
use parking_lot::RwLock;
use xxhash_rust::xxh3::Xxh3;

use super::bloom::DigestFilter;
use super::cache::UrlCache;
use super::digest::{digest, is_html};
use super::fetch_data::FetchData;
use super::html::extract_links;
use super::{Backoff, PipelineStats};
use crate::burl::CrawlUrl;
use crate::config::Filters;
use crate::filters::{Filter, FilterSubject};
use crate::store::{ResponseInfo, WarcStore};

/// A fetched response handed to a parse worker, with the channel on which
/// the buffer goes back to its fetch worker.
pub struct ParseJob {
    pub data: Box<FetchData>,
    pub reply: Sender<Box<FetchData>>,
}

/// A response as seen by postfetch filters.
pub struct ResponseView<'a> {
    pub data: &'a FetchData,
    /// Known once the digest has been checked.
    pub duplicate: Option<bool>,
}

impl FilterSubject for ResponseView<'_> {
    const POSTFETCH: bool = true;

    fn url(&self) -> &CrawlUrl {
        &self.data.url
    }

    fn content_type(&self) -> Option<&str> {
        self.data.content_type()
    }

    fn status(&self) -> Option<u16> {
        Some(self.data.status)
    }

    fn digest_seen(&self) -> Option<bool> {
        self.duplicate
    }

    fn host_count(&self) -> Option<u64> {
        Some(self.data.host_fetched)
    }
}

impl Filter<ResponseView<'static>> {
    /// Evaluates on a response view of any lifetime.
    pub fn evaluate_response(&self, subject: &ResponseView<'_>) -> bool {
        self.expr().eval(subject)
    }
}

/// Where newly discovered URLs go once they pass the URL-seen cache: the
/// local sieve or the agent owning their host.
pub trait LinkSink: Send + Sync {
    fn route(&self, url: CrawlUrl);
}

pub struct ParseContext {
    pub results: Arc<SegQueue<ParseJob>>,
    pub cache: Arc<UrlCache>,
    pub bloom: Arc<DigestFilter>,
    pub filters: Arc<RwLock<Arc<Filters>>>,
    pub sink: Arc<dyn LinkSink>,
    pub store: Option<Arc<WarcStore>>,
    /// Bytes of a body examined for links and the HTML digest.
    pub parse_bytes: usize,
    pub stats: Arc<PipelineStats>,
}

/// Processes results until `stop` is set and the queue is drained.
pub fn parse_loop(ctx: &ParseContext, stop: &AtomicBool) {
    let mut scratch = Vec::new();
    let mut backoff = Backoff::new(Duration::from_micros(200), Duration::from_millis(50));
    loop {
        match ctx.results.pop() {
            Some(ParseJob { mut data, reply }) => {
                backoff.reset();
                process(ctx, &mut data, &mut scratch);
                // The fetch worker may have given up waiting; nothing to do then.
                let _ = reply.send(data);
            }
            None if stop.load(Ordering::Relaxed) => return,
            None => backoff.wait(),
        }
    }
}

/// Follow filter, URL-seen cache, then routing. Shared with seeding and
/// with URLs received from other agents.
pub fn discover(cache: &UrlCache, sink: &dyn LinkSink, stats: &PipelineStats, url: CrawlUrl) {
    if cache.check_and_insert(url.hash128()) {
        stats.cache_hits.fetch_add(1, Ordering::Relaxed);
        return;
    }
    stats.cache_misses.fetch_add(1, Ordering::Relaxed);
    sink.route(url);
}

pub fn process(ctx: &ParseContext, data: &mut FetchData, scratch: &mut Vec<u8>) {
    let stats = &ctx.stats;
    if data.error.is_some() {
        return;
    }
    stats.parsed.fetch_add(1, Ordering::Relaxed);
    if let Err(e) = data.body.read_prefix(ctx.parse_bytes, scratch) {
        log::warn!("cannot read body of {}: {e}", data.url);
        stats.parse_errors.fetch_add(1, Ordering::Relaxed);
        return;
    }
    let filters = ctx.filters.read().clone();
    let html = is_html(data.content_type());

    let mut links: Vec<Vec<u8>> = Vec::new();
    let mut base = data.url.clone();
    if (300..400).contains(&data.status) {
        if let Some(location) = data.header("location") {
            links.push(location.trim().as_bytes().to_vec());
        }
    } else if html && filters.parse.evaluate_response(&ResponseView { data, duplicate: None }) {
        let found = extract_links(scratch);
        if let Some(b) = found.base.as_deref().and_then(|b| std::str::from_utf8(b).ok()) {
            if let Ok(u) = CrawlUrl::parse(b, Some(&data.url)) {
                base = u;
            }
        }
        links = found.hrefs;
    }
    stats.links_found.fetch_add(links.len() as u64, Ordering::Relaxed);
    for raw in &links {
        let Ok(text) = std::str::from_utf8(raw) else {
            stats.links_invalid.fetch_add(1, Ordering::Relaxed);
            continue;
        };
        let url = match CrawlUrl::parse(text, Some(&base)) {
            Ok(u) => u,
            Err(_) => {
                stats.links_invalid.fetch_add(1, Ordering::Relaxed);
                continue;
            }
        };
        if !filters.follow.evaluate(&url) {
            stats.links_filtered.fetch_add(1, Ordering::Relaxed);
            continue;
        }
        discover(&ctx.cache, ctx.sink.as_ref(), stats, url);
    }

    let content_digest = if data.body.len() <= scratch.len() as u64 || html {
        digest(scratch, data.content_type())
    } else {
        match hash_whole_body(data) {
            Ok(d) => d,
            Err(e) => {
                log::warn!("cannot read body of {}: {e}", data.url);
                stats.parse_errors.fetch_add(1, Ordering::Relaxed);
                return;
            }
        }
    };
    let duplicate = ctx.bloom.check_and_insert(content_digest);
    if duplicate {
        stats.duplicates.fetch_add(1, Ordering::Relaxed);
    } else {
        stats.archetypes.fetch_add(1, Ordering::Relaxed);
    }

    let Some(store) = &ctx.store else {
        return;
    };
    if !filters.store.evaluate_response(&ResponseView { data, duplicate: Some(duplicate) }) {
        return;
    }
    let url = data.url.as_str().to_string();
    let info = ResponseInfo {
        url: &url,
        ip: data.ip,
        date: Utc::now(),
        http_head: &data.head,
        digest: content_digest,
        duplicate,
    };
    match store.store_response(&info, &mut data.body) {
        Ok(true) => {
            stats.stored.fetch_add(1, Ordering::Relaxed);
        }
        Ok(false) => {}
        Err(e) => {
            log::error!("store failure for {url}: {e}");
            stats.store_errors.fetch_add(1, Ordering::Relaxed);
        }
    }
}

fn hash_whole_body(data: &mut FetchData) -> std::io::Result<u128> {
    let mut hasher = Xxh3::new();
    let mut reader = data.body.reader()?;
    let mut buf = [0u8; 16 * 1024];
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            return Ok(hasher.digest128());
        }
        hasher.update(&buf[..n]);
    }
}
