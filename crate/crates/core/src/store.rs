//! Append-only WARC store.
//!
//! Every record is an independent gzip member, so records are compressed by
//! the threads that produce them and a single flusher thread only appends
//! finished members. File order is completion order.
//!
//! Besides the standard WARC fields, records carry:
//!
//! - `Hostwise-Content-Digest`: 32 hex digits, the content digest used for
//!   duplicate detection;
//! - `Hostwise-Is-Duplicate`: `true` or `false`;
//! - `Hostwise-Block-Digest`: `xxh3:` and 32 hex digits over the record
//!   block, checked by [`WarcReader`].

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use chrono::{DateTime, Utc};
use crossbeam::channel::{bounded, Sender};
use flate2::bufread::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use thiserror::Error;
use xxhash_rust::xxh3::Xxh3;

use crate::burl::HASH_VERSION;
use crate::pipeline::digest::DIGEST_VERSION;
use crate::pipeline::fetch_data::SpillBuffer;

pub const DIGEST_HEADER: &str = "Hostwise-Content-Digest";
pub const DUPLICATE_HEADER: &str = "Hostwise-Is-Duplicate";
pub const BLOCK_DIGEST_HEADER: &str = "Hostwise-Block-Digest";

const REVISIT_PROFILE: &str = "http://netpreserve.org/warc/1.1/revisit/identical-payload-digest";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt record at offset {offset}: {reason}")]
    CorruptRecord { offset: u64, reason: String },
    #[error("store is closed")]
    Closed,
}

/// What to do with pages whose digest was seen before.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DuplicatePolicy {
    /// Write a revisit record holding only the HTTP head.
    #[default]
    Mark,
    /// Write nothing.
    Drop,
}

impl std::str::FromStr for DuplicatePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mark" => Ok(DuplicatePolicy::Mark),
            "drop" => Ok(DuplicatePolicy::Drop),
            _ => Err(format!("unknown duplicate policy `{s}` (expected mark or drop)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub dir: PathBuf,
    pub rotate_bytes: u64,
    pub policy: DuplicatePolicy,
    pub level: u32,
    /// Compressed records waiting for the flusher before producers block.
    pub queue: usize,
}

impl StoreConfig {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        StoreConfig {
            dir: dir.into(),
            rotate_bytes: 1 << 30,
            policy: DuplicatePolicy::Mark,
            level: 6,
            queue: 1024,
        }
    }
}

/// A record body that can be read from the start any number of times.
pub trait BodySource {
    fn body_len(&self) -> u64;
    fn open(&mut self) -> io::Result<Box<dyn Read + '_>>;
}

impl BodySource for &[u8] {
    fn body_len(&self) -> u64 {
        self.len() as u64
    }

    fn open(&mut self) -> io::Result<Box<dyn Read + '_>> {
        Ok(Box::new(*self))
    }
}

impl BodySource for SpillBuffer {
    fn body_len(&self) -> u64 {
        self.len()
    }

    fn open(&mut self) -> io::Result<Box<dyn Read + '_>> {
        Ok(Box::new(self.reader()?))
    }
}

/// Description of a fetched response to archive.
#[derive(Debug, Clone)]
pub struct ResponseInfo<'a> {
    pub url: &'a str,
    pub ip: Option<IpAddr>,
    pub date: DateTime<Utc>,
    /// Status line and headers as received, including the final blank line.
    pub http_head: &'a [u8],
    pub digest: u128,
    pub duplicate: bool,
}

fn warc_date(date: &DateTime<Utc>) -> String {
    date.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

fn record_id() -> String {
    format!("<urn:uuid:{}>", uuid::Uuid::new_v4())
}

fn write_header(out: &mut Vec<u8>, fields: &[(&str, String)], block_digest: u128, len: u64) {
    out.extend_from_slice(b"WARC/1.0\r\n");
    for (name, value) in fields {
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(b": ");
        out.extend_from_slice(value.as_bytes());
        out.extend_from_slice(b"\r\n");
    }
    out.extend_from_slice(format!("{BLOCK_DIGEST_HEADER}: xxh3:{block_digest:032x}\r\n").as_bytes());
    out.extend_from_slice(format!("Content-Length: {len}\r\n\r\n").as_bytes());
}

/// Compresses one record into a standalone gzip member.
fn compress_record(
    fields: &[(&str, String)],
    head: &[u8],
    body: Option<&mut dyn BodySource>,
    level: u32,
) -> io::Result<Vec<u8>> {
    let mut hasher = Xxh3::new();
    hasher.update(head);
    let mut len = head.len() as u64;
    let mut body = body;
    if let Some(b) = body.as_deref_mut() {
        let mut r = b.open()?;
        let mut buf = [0u8; 16 * 1024];
        loop {
            let n = r.read(&mut buf)?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
            len += n as u64;
        }
    }
    let mut header = Vec::with_capacity(512);
    write_header(&mut header, fields, hasher.digest128(), len);
    let mut enc = GzEncoder::new(Vec::with_capacity(len as usize / 3 + 512), Compression::new(level));
    enc.write_all(&header)?;
    enc.write_all(head)?;
    if let Some(b) = body {
        io::copy(&mut b.open()?, &mut enc)?;
    }
    enc.write_all(b"\r\n\r\n")?;
    enc.finish()
}

/// Builds the compressed member for a response; `None` when the policy
/// drops it.
pub fn encode_response(
    info: &ResponseInfo<'_>,
    body: &mut dyn BodySource,
    policy: DuplicatePolicy,
    level: u32,
) -> io::Result<Option<Vec<u8>>> {
    if info.duplicate && policy == DuplicatePolicy::Drop {
        return Ok(None);
    }
    let mut fields: Vec<(&str, String)> = vec![
        ("WARC-Type", if info.duplicate { "revisit" } else { "response" }.to_string()),
        ("WARC-Target-URI", info.url.to_string()),
        ("WARC-Date", warc_date(&info.date)),
        ("WARC-Record-ID", record_id()),
    ];
    if let Some(ip) = info.ip {
        fields.push(("WARC-IP-Address", ip.to_string()));
    }
    fields.push(("Content-Type", "application/http; msgtype=response".to_string()));
    if info.duplicate {
        fields.push(("WARC-Profile", REVISIT_PROFILE.to_string()));
        fields.push(("WARC-Truncated", "length".to_string()));
    }
    fields.push((DIGEST_HEADER, format!("{:032x}", info.digest)));
    fields.push((DUPLICATE_HEADER, info.duplicate.to_string()));
    let body = if info.duplicate { None } else { Some(body) };
    compress_record(&fields, info.http_head, body, level).map(Some)
}

fn warcinfo_member(level: u32) -> io::Result<Vec<u8>> {
    let block = format!(
        "software: hostwise/{}\r\nformat: WARC File Format 1.0\r\nurl-hash: {HASH_VERSION}\r\ncontent-digest: {DIGEST_VERSION}\r\n",
        env!("CARGO_PKG_VERSION")
    );
    let fields = [
        ("WARC-Type", "warcinfo".to_string()),
        ("WARC-Date", warc_date(&Utc::now())),
        ("WARC-Record-ID", record_id()),
        ("Content-Type", "application/warc-fields".to_string()),
    ];
    compress_record(&fields, block.as_bytes(), None, level)
}

#[derive(Debug, Default)]
pub struct StoreStats {
    pub records: AtomicU64,
    pub dropped: AtomicU64,
    pub bytes: AtomicU64,
    pub files: AtomicU64,
}

pub struct WarcStore {
    config: StoreConfig,
    tx: Option<Sender<Vec<u8>>>,
    flusher: Option<JoinHandle<io::Result<()>>>,
    stats: Arc<StoreStats>,
}

pub fn file_name(serial: u32) -> String {
    format!("crawl-{serial:05}.warc.gz")
}

/// Store files in `dir`, in serial order.
pub fn store_files(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("crawl-") && n.ends_with(".warc.gz"))
        })
        .collect();
    files.sort();
    Ok(files)
}

impl WarcStore {
    /// Opens a store; new files continue the serial numbering of existing
    /// ones.
    pub fn open(config: StoreConfig) -> Result<WarcStore, StoreError> {
        fs::create_dir_all(&config.dir)?;
        let next_serial = store_files(&config.dir)?.len() as u32;
        let (tx, rx) = bounded::<Vec<u8>>(config.queue.max(1));
        let stats = Arc::new(StoreStats::default());
        let flusher_stats = stats.clone();
        let dir = config.dir.clone();
        let rotate = config.rotate_bytes;
        let level = config.level;
        let flusher = std::thread::Builder::new()
            .name("store-flusher".into())
            .spawn(move || -> io::Result<()> {
                let mut serial = next_serial;
                let mut out: Option<(BufWriter<File>, u64)> = None;
                for member in rx {
                    if out.as_ref().is_some_and(|(_, size)| size + member.len() as u64 > rotate) {
                        let (w, _) = out.take().expect("open file");
                        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
                    }
                    if out.is_none() {
                        let mut w = BufWriter::with_capacity(1 << 20, File::create(dir.join(file_name(serial)))?);
                        serial += 1;
                        flusher_stats.files.fetch_add(1, Ordering::Relaxed);
                        let info = warcinfo_member(level)?;
                        w.write_all(&info)?;
                        out = Some((w, info.len() as u64));
                    }
                    let (w, size) = out.as_mut().expect("open file");
                    w.write_all(&member)?;
                    *size += member.len() as u64;
                    flusher_stats.bytes.fetch_add(member.len() as u64, Ordering::Relaxed);
                }
                if let Some((w, _)) = out {
                    w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
                }
                Ok(())
            })?;
        Ok(WarcStore {
            config,
            tx: Some(tx),
            flusher: Some(flusher),
            stats,
        })
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn stats(&self) -> &Arc<StoreStats> {
        &self.stats
    }

    /// Hands an already compressed record to the flusher.
    pub fn submit(&self, member: Vec<u8>) -> Result<(), StoreError> {
        let tx = self.tx.as_ref().ok_or(StoreError::Closed)?;
        tx.send(member).map_err(|_| StoreError::Closed)?;
        self.stats.records.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    /// Compresses a response in the calling thread and queues it. Returns
    /// false when the duplicate policy dropped it.
    pub fn store_response(
        &self,
        info: &ResponseInfo<'_>,
        body: &mut dyn BodySource,
    ) -> Result<bool, StoreError> {
        match encode_response(info, body, self.config.policy, self.config.level)? {
            Some(member) => {
                self.submit(member)?;
                Ok(true)
            }
            None => {
                self.stats.dropped.fetch_add(1, Ordering::Relaxed);
                Ok(false)
            }
        }
    }

    /// Waits for every queued record to reach the disk.
    pub fn close(&mut self) -> Result<(), StoreError> {
        self.tx.take();
        if let Some(h) = self.flusher.take() {
            h.join().map_err(|_| StoreError::Io(io::Error::other("flusher panicked")))??;
        }
        Ok(())
    }
}

impl Drop for WarcStore {
    fn drop(&mut self) {
        let _ = self.close();
    }
}

/// One record read back from a store file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WarcRecord {
    /// Offset of the record's gzip member in the file.
    pub offset: u64,
    pub headers: Vec<(String, String)>,
    pub block: Vec<u8>,
}

impl WarcRecord {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn record_type(&self) -> Option<&str> {
        self.header("WARC-Type")
    }

    pub fn target_uri(&self) -> Option<&str> {
        self.header("WARC-Target-URI")
    }

    pub fn content_digest(&self) -> Option<u128> {
        self.header(DIGEST_HEADER).and_then(|h| u128::from_str_radix(h, 16).ok())
    }

    pub fn is_duplicate(&self) -> bool {
        self.header(DUPLICATE_HEADER) == Some("true")
    }

    /// Splits an HTTP response block into head (with the blank line) and body.
    pub fn http_parts(&self) -> Option<(&[u8], &[u8])> {
        let end = self.block.windows(4).position(|w| w == b"\r\n\r\n")? + 4;
        Some(self.block.split_at(end))
    }

    pub fn http_status(&self) -> Option<u16> {
        let (head, _) = self.http_parts()?;
        let line = head.split(|&b| b == b'\n').next()?;
        std::str::from_utf8(line).ok()?.split_whitespace().nth(1)?.parse().ok()
    }
}

struct Counting<R> {
    inner: R,
    pos: u64,
}

impl<R: BufRead> Read for Counting<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.pos += n as u64;
        Ok(n)
    }
}

impl<R: BufRead> BufRead for Counting<R> {
    fn fill_buf(&mut self) -> io::Result<&[u8]> {
        self.inner.fill_buf()
    }

    fn consume(&mut self, amt: usize) {
        self.pos += amt as u64;
        self.inner.consume(amt)
    }
}

/// Iterates the records of a store file, one gzip member at a time. After a
/// corrupt member it resynchronizes on the next gzip header following the
/// member's start.
pub struct WarcReader<R> {
    inner: Counting<R>,
    buf: Vec<u8>,
    failed_at: Option<u64>,
}

impl WarcReader<BufReader<File>> {
    pub fn open(path: &Path) -> io::Result<Self> {
        Ok(WarcReader::new(BufReader::with_capacity(1 << 16, File::open(path)?)))
    }
}

impl<R: BufRead + Seek> WarcReader<R> {
    pub fn new(mut inner: R) -> Self {
        let pos = inner.stream_position().unwrap_or(0);
        WarcReader {
            inner: Counting { inner, pos },
            buf: Vec::new(),
            failed_at: None,
        }
    }

    fn resync(&mut self) -> io::Result<()> {
        loop {
            let buf = self.inner.fill_buf()?;
            if buf.is_empty() {
                return Ok(());
            }
            // Keep the last two bytes: a header may straddle the buffer edge.
            match buf.windows(3).position(|w| w == [0x1f, 0x8b, 0x08]) {
                Some(i) => {
                    self.inner.consume(i);
                    return Ok(());
                }
                None if buf.len() > 2 => {
                    let n = buf.len() - 2;
                    self.inner.consume(n);
                }
                None => {
                    let n = buf.len();
                    self.inner.consume(n);
                }
            }
        }
    }

    fn next_record(&mut self) -> Result<Option<WarcRecord>, StoreError> {
        if let Some(offset) = self.failed_at.take() {
            // The decoder may have read past the damaged member; restart one
            // byte after its start.
            self.inner.inner.seek(SeekFrom::Start(offset + 1))?;
            self.inner.pos = offset + 1;
            self.resync()?;
        }
        if self.inner.fill_buf()?.is_empty() {
            return Ok(None);
        }
        let offset = self.inner.pos;
        self.buf.clear();
        let corrupt = |reason: String| StoreError::CorruptRecord { offset, reason };
        GzDecoder::new(&mut self.inner)
            .read_to_end(&mut self.buf)
            .map_err(|e| corrupt(e.to_string()))?;
        let header_end = self
            .buf
            .windows(4)
            .position(|w| w == b"\r\n\r\n")
            .ok_or_else(|| corrupt("no header terminator".into()))?;
        let head = std::str::from_utf8(&self.buf[..header_end]).map_err(|_| corrupt("non-UTF-8 header".into()))?;
        let mut lines = head.split("\r\n");
        if lines.next() != Some("WARC/1.0") {
            return Err(corrupt("missing WARC/1.0 version line".into()));
        }
        let headers: Vec<(String, String)> = lines
            .filter_map(|l| l.split_once(':'))
            .map(|(n, v)| (n.trim().to_string(), v.trim().to_string()))
            .collect();
        let record = |block: Vec<u8>| WarcRecord {
            offset,
            headers: headers.clone(),
            block,
        };
        let probe = record(Vec::new());
        let len: usize = probe
            .header("Content-Length")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| corrupt("missing Content-Length".into()))?;
        let start = header_end + 4;
        if self.buf.len() != start + len + 4 || &self.buf[start + len..] != b"\r\n\r\n" {
            return Err(corrupt(format!(
                "Content-Length {len} does not match the {} byte member",
                self.buf.len()
            )));
        }
        let block = self.buf[start..start + len].to_vec();
        if let Some(expected) = probe.header(BLOCK_DIGEST_HEADER) {
            let actual = format!("xxh3:{:032x}", xxhash_rust::xxh3::xxh3_128(&block));
            if actual != expected {
                return Err(corrupt("block digest mismatch".into()));
            }
        }
        Ok(Some(record(block)))
    }
}

impl<R: BufRead + Seek> Iterator for WarcReader<R> {
    type Item = Result<WarcRecord, StoreError>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.next_record() {
            Ok(r) => r.map(Ok),
            Err(StoreError::CorruptRecord { offset, reason }) => {
                self.failed_at = Some(offset);
                Some(Err(StoreError::CorruptRecord { offset, reason }))
            }
            // I/O failures end the iteration.
            Err(e) => {
                let _ = self.inner.inner.seek(SeekFrom::End(0));
                Some(Err(e))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn info<'a>(url: &'a str, head: &'a [u8], duplicate: bool) -> ResponseInfo<'a> {
        ResponseInfo {
            url,
            ip: Some("10.0.0.1".parse().unwrap()),
            date: Utc::now(),
            http_head: head,
            digest: 0xabc,
            duplicate,
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = WarcStore::open(StoreConfig::new(dir.path())).unwrap();
        let head = b"HTTP/1.1 200 OK\r\nContent-Type: text/html\r\n\r\n";
        store
            .store_response(&info("http://a.test/", head, false), &mut &b"<p>hi</p>"[..])
            .unwrap();
        store
            .store_response(&info("http://a.test/dup", head, true), &mut &b"<p>hi</p>"[..])
            .unwrap();
        store.close().unwrap();
        let files = store_files(dir.path()).unwrap();
        assert_eq!(files.len(), 1);
        let records: Vec<_> = WarcReader::open(&files[0]).unwrap().map(Result::unwrap).collect();
        assert_eq!(records.len(), 3);
        assert_eq!(records[0].record_type(), Some("warcinfo"));
        let r = &records[1];
        assert_eq!(r.record_type(), Some("response"));
        assert_eq!(r.target_uri(), Some("http://a.test/"));
        assert_eq!(r.http_status(), Some(200));
        assert_eq!(r.http_parts().unwrap(), (&head[..], &b"<p>hi</p>"[..]));
        assert_eq!(r.content_digest(), Some(0xabc));
        assert!(!r.is_duplicate());
        let d = &records[2];
        assert_eq!(d.record_type(), Some("revisit"));
        assert!(d.is_duplicate());
        assert_eq!(d.block, head);
    }

    #[test]
    fn drop_policy_skips_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = StoreConfig::new(dir.path());
        config.policy = DuplicatePolicy::Drop;
        let mut store = WarcStore::open(config).unwrap();
        let head = b"HTTP/1.1 200 OK\r\n\r\n";
        assert!(!store.store_response(&info("http://a.test/", head, true), &mut &b"x"[..]).unwrap());
        assert!(store.store_response(&info("http://a.test/", head, false), &mut &b"x"[..]).unwrap());
        store.close().unwrap();
        let files = store_files(dir.path()).unwrap();
        let n = WarcReader::open(&files[0]).unwrap().filter(|r| r.as_ref().unwrap().record_type() != Some("warcinfo")).count();
        assert_eq!(n, 1);
    }

    #[test]
    fn rotates_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = StoreConfig::new(dir.path());
        config.rotate_bytes = 2000;
        config.level = 0;
        let mut store = WarcStore::open(config).unwrap();
        let body = vec![b'x'; 700];
        for i in 0..10 {
            let url = format!("http://a.test/{i}");
            store
                .store_response(&info(&url, b"HTTP/1.1 200 OK\r\n\r\n", false), &mut body.as_slice())
                .unwrap();
        }
        store.close().unwrap();
        let files = store_files(dir.path()).unwrap();
        assert!(files.len() >= 4, "{files:?}");
        assert!(files[0].ends_with("crawl-00000.warc.gz"));
        let total: usize = files
            .iter()
            .map(|f| WarcReader::open(f).unwrap().filter(|r| r.as_ref().unwrap().record_type() == Some("response")).count())
            .sum();
        assert_eq!(total, 10);
    }

    #[test]
    fn reader_skips_corrupt_member() {
        let head = b"HTTP/1.1 200 OK\r\n\r\n";
        let mut file = Vec::new();
        for i in 0..3 {
            let url = format!("http://a.test/{i}");
            file.extend(encode_response(&info(&url, head, false), &mut &b"body"[..], DuplicatePolicy::Mark, 6).unwrap().unwrap());
        }
        let second = encode_response(&info("http://a.test/0", head, false), &mut &b"body"[..], DuplicatePolicy::Mark, 6)
            .unwrap()
            .unwrap()
            .len();
        // Damage the middle of the second member's deflate stream.
        let mid = second + second / 2;
        file[mid] ^= 0xff;
        file[mid + 1] ^= 0xff;
        let results: Vec<_> = WarcReader::new(io::Cursor::new(&file[..])).collect();
        let ok: Vec<_> = results.iter().filter_map(|r| r.as_ref().ok()).map(|r| r.target_uri().unwrap().to_string()).collect();
        assert!(results.iter().any(|r| matches!(r, Err(StoreError::CorruptRecord { .. }))));
        assert_eq!(ok.first().map(String::as_str), Some("http://a.test/0"));
        assert_eq!(ok.last().map(String::as_str), Some("http://a.test/2"));
    }
}
