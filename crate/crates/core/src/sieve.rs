//! A queue with memory: every element enqueued any number of times is
//! dequeued exactly once, in order of first appearance, using a bounded amount
//! of main memory.
//!
//! Enqueued elements are appended to an auxiliary file while their 64-bit
//! hashes (tagged with their rank in the epoch) go to an in-memory array. When
//! the array fills up, or when the consumer finds nothing ready, the epoch is
//! flushed: the array is sorted, merged against the sorted file of all hashes
//! ever seen, and the auxiliary file is scanned once, appending the elements
//! that were never seen to the ready queue. Every file is accessed
//! sequentially.
//!
//! Files in the sieve directory:
//!
//! - `known.hashes`: header, then sorted big-endian `u64` hashes;
//! - `epoch.aux`: header, then `u32` big-endian length + element bytes;
//! - `ready.queue`: same record format as `epoch.aux`.
//!
//! A flush writes `known.hashes.new` and renames it over `known.hashes`; the
//! header of the known file records how much of `ready.queue` is committed,
//! so a crash in the middle of a flush is undone on reopen and the epoch is
//! replayed from `epoch.aux`.
//!
//! Two distinct elements with equal 64-bit hashes are conflated: the second
//! one is never dequeued.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use thiserror::Error;

use crate::burl::{self, CrawlUrl, HASH_VERSION};

const KNOWN_MAGIC: &[u8; 4] = b"HWSK";
const AUX_MAGIC: &[u8; 4] = b"HWSA";
const READY_MAGIC: &[u8; 4] = b"HWSR";
const FORMAT_VERSION: u32 = 1;
/// magic + version + hash tag (16) + count + ready committed length + ready read position
const KNOWN_HEADER_LEN: u64 = 4 + 4 + 16 + 8 + 8 + 8;
const RECORD_HEADER_LEN: u64 = 8;

const KNOWN_FILE: &str = "known.hashes";
const KNOWN_TMP_FILE: &str = "known.hashes.new";
const AUX_FILE: &str = "epoch.aux";
const READY_FILE: &str = "ready.queue";

/// Bytes per pending entry: the hash and the rank share one `u128`.
pub const ENTRY_BYTES: usize = 16;

#[derive(Debug, Error)]
pub enum SieveError {
    #[error("sieve I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("sieve is closed")]
    Closed,
    #[error("corrupt sieve file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
}

pub type Result<T> = std::result::Result<T, SieveError>;

#[derive(Debug, Clone)]
pub struct SieveConfig {
    pub dir: PathBuf,
    /// Size of the in-memory hash array, in bytes.
    pub capacity_bytes: usize,
    /// Hash applied to element bytes.
    pub hash: fn(&[u8]) -> u64,
    /// fsync files at each flush.
    pub durable: bool,
    /// Minimum time between two flushes triggered by an empty ready queue.
    pub min_flush_interval: Duration,
}

impl SieveConfig {
    pub fn new(dir: impl Into<PathBuf>, capacity_bytes: usize) -> Self {
        SieveConfig {
            dir: dir.into(),
            capacity_bytes,
            hash: burl::hash64,
            durable: true,
            min_flush_interval: Duration::ZERO,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SieveStats {
    /// Elements enqueued in the current epoch.
    pub pending: usize,
    /// Elements waiting to be dequeued.
    pub ready: u64,
    /// Distinct hashes known to the sieve.
    pub known: u64,
    pub flushes: u64,
    pub enqueued: u64,
    pub dequeued: u64,
}

pub struct Sieve {
    inner: Mutex<Inner>,
}

struct Inner {
    config: SieveConfig,
    capacity: usize,
    closed: bool,
    /// `hash << 64 | rank`
    pending: Vec<u128>,
    aux: BufWriter<File>,
    ready_writer: File,
    ready_reader: BufReader<File>,
    ready_len: u64,
    ready_read_pos: u64,
    ready_count: u64,
    known_count: u64,
    last_flush: Instant,
    stats: SieveStats,
}

impl Sieve {
    pub fn open(config: SieveConfig) -> Result<Sieve> {
        fs::create_dir_all(&config.dir)?;
        let dir = config.dir.clone();
        let capacity = (config.capacity_bytes / ENTRY_BYTES).max(1);

        let _ = fs::remove_file(dir.join(KNOWN_TMP_FILE));
        let known_path = dir.join(KNOWN_FILE);
        let header = if known_path.exists() {
            KnownHeader::read(&known_path)?
        } else {
            let header = KnownHeader {
                count: 0,
                ready_committed: RECORD_HEADER_LEN,
                ready_read_pos: RECORD_HEADER_LEN,
            };
            let mut f = File::create(&known_path)?;
            header.write(&mut f)?;
            f.sync_all()?;
            header
        };

        let ready_path = dir.join(READY_FILE);
        let mut ready_writer = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&ready_path)?;
        if ready_writer.metadata()?.len() < RECORD_HEADER_LEN {
            write_record_header(&mut ready_writer, READY_MAGIC)?;
        } else {
            check_record_header(&mut ready_writer, READY_MAGIC, &ready_path)?;
        }
        // Anything past the committed length belongs to an interrupted flush.
        ready_writer.set_len(header.ready_committed)?;
        ready_writer.seek(SeekFrom::End(0))?;
        let mut ready_reader = BufReader::new(File::open(&ready_path)?);
        ready_reader.seek(SeekFrom::Start(header.ready_read_pos))?;
        let ready_count = count_records(&ready_path, header.ready_read_pos, header.ready_committed)?;

        let aux_path = dir.join(AUX_FILE);
        let mut aux_file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&aux_path)?;
        let mut pending = Vec::with_capacity(capacity);
        if aux_file.metadata()?.len() < RECORD_HEADER_LEN {
            aux_file.set_len(0)?;
            write_record_header(&mut aux_file, AUX_MAGIC)?;
        } else {
            check_record_header(&mut aux_file, AUX_MAGIC, &aux_path)?;
            // Rebuild the pending array of the interrupted epoch.
            let mut reader = RecordReader::new(BufReader::new(File::open(&aux_path)?));
            let mut end = RECORD_HEADER_LEN;
            while let Some(element) = reader.next_record()? {
                let rank = pending.len() as u128;
                pending.push(((config.hash)(&element) as u128) << 64 | rank);
                end = reader.pos;
            }
            aux_file.set_len(end)?;
        }
        aux_file.seek(SeekFrom::End(0))?;

        let ready_len = header.ready_committed;
        let inner = Inner {
            capacity,
            closed: false,
            pending,
            aux: BufWriter::with_capacity(64 * 1024, aux_file),
            ready_writer,
            ready_reader,
            ready_len,
            ready_read_pos: header.ready_read_pos,
            ready_count,
            known_count: header.count,
            last_flush: Instant::now(),
            stats: SieveStats::default(),
            config,
        };
        Ok(Sieve {
            inner: Mutex::new(inner),
        })
    }

    pub fn enqueue(&self, url: &CrawlUrl) -> Result<()> {
        self.enqueue_bytes(url.as_bytes())
    }

    pub fn enqueue_bytes(&self, element: &[u8]) -> Result<()> {
        let mut inner = self.inner.lock();
        if inner.closed {
            return Err(SieveError::Closed);
        }
        inner.enqueue(element)
    }

    /// Next element in first-appearance order, or `None` if nothing is
    /// ready. If the ready queue is exhausted and the current epoch holds
    /// elements, the epoch is flushed first.
    pub fn dequeue(&self) -> Result<Option<CrawlUrl>> {
        match self.dequeue_bytes()? {
            Some(bytes) => CrawlUrl::from_canonical(&bytes)
                .map(Some)
                .map_err(|e| SieveError::Corrupt {
                    path: PathBuf::from(READY_FILE),
                    reason: e.to_string(),
                }),
            None => Ok(None),
        }
    }

    pub fn dequeue_bytes(&self) -> Result<Option<Vec<u8>>> {
        let mut inner = self.inner.lock();
        if inner.closed {
            return Err(SieveError::Closed);
        }
        if inner.ready_count == 0
            && !inner.pending.is_empty()
            && inner.last_flush.elapsed() >= inner.config.min_flush_interval
        {
            inner.flush()?;
        }
        inner.dequeue()
    }

    pub fn flush(&self) -> Result<()> {
        let mut inner = self.inner.lock();
        if inner.closed {
            return Err(SieveError::Closed);
        }
        inner.flush()
    }

    /// Persists the consumer position. The current epoch stays in
    /// `epoch.aux` and is replayed on reopen.
    pub fn close(&self) -> Result<()> {
        let mut inner = self.inner.lock();
        if inner.closed {
            return Ok(());
        }
        inner.aux.flush()?;
        inner.aux.get_ref().sync_all()?;
        let header = KnownHeader {
            count: inner.known_count,
            ready_committed: inner.ready_len,
            ready_read_pos: inner.ready_read_pos,
        };
        let mut known = OpenOptions::new()
            .write(true)
            .open(inner.config.dir.join(KNOWN_FILE))?;
        header.write(&mut known)?;
        known.sync_all()?;
        inner.closed = true;
        Ok(())
    }

    pub fn stats(&self) -> SieveStats {
        let inner = self.inner.lock();
        SieveStats {
            pending: inner.pending.len(),
            ready: inner.ready_count,
            known: inner.known_count,
            ..inner.stats
        }
    }

    /// Number of elements that fit in one epoch.
    pub fn capacity(&self) -> usize {
        self.inner.lock().capacity
    }

    pub fn dir(&self) -> PathBuf {
        self.inner.lock().config.dir.clone()
    }
}

impl Drop for Sieve {
    fn drop(&mut self) {
        let _ = self.close();
    }
}

impl Inner {
    fn enqueue(&mut self, element: &[u8]) -> Result<()> {
        let rank = self.pending.len() as u128;
        self.pending
            .push(((self.config.hash)(element) as u128) << 64 | rank);
        self.aux.write_all(&(element.len() as u32).to_be_bytes())?;
        self.aux.write_all(element)?;
        self.stats.enqueued += 1;
        if self.pending.len() >= self.capacity {
            self.flush()?;
        }
        Ok(())
    }

    fn dequeue(&mut self) -> Result<Option<Vec<u8>>> {
        if self.ready_count == 0 {
            return Ok(None);
        }
        let mut len = [0u8; 4];
        self.ready_reader.read_exact(&mut len)?;
        let len = u32::from_be_bytes(len) as usize;
        let mut element = vec![0u8; len];
        self.ready_reader.read_exact(&mut element)?;
        self.ready_read_pos += 4 + len as u64;
        self.ready_count -= 1;
        self.stats.dequeued += 1;
        Ok(Some(element))
    }

    fn flush(&mut self) -> Result<()> {
        self.last_flush = Instant::now();
        if self.pending.is_empty() {
            return Ok(());
        }
        let dir = self.config.dir.clone();
        self.aux.flush()?;

        // Stable by construction: equal hashes are ordered by rank.
        self.pending.sort_unstable();
        let n = self.pending.len();
        let mut emit = vec![0u64; n.div_ceil(64)];

        let known_path = dir.join(KNOWN_FILE);
        let tmp_path = dir.join(KNOWN_TMP_FILE);
        let mut known = BufReader::with_capacity(64 * 1024, File::open(&known_path)?);
        known.seek(SeekFrom::Start(KNOWN_HEADER_LEN))?;
        let mut merged = BufWriter::with_capacity(64 * 1024, File::create(&tmp_path)?);
        merged.write_all(&[0u8; KNOWN_HEADER_LEN as usize])?;

        let mut remaining_known = self.known_count;
        let mut next_known = read_hash(&mut known, &mut remaining_known)?;
        let mut merged_count = 0u64;
        let mut previous: Option<u64> = None;
        for &entry in &self.pending {
            let hash = (entry >> 64) as u64;
            if previous == Some(hash) {
                // Later occurrence within this epoch.
                continue;
            }
            previous = Some(hash);
            while let Some(k) = next_known.filter(|&k| k < hash) {
                merged.write_all(&k.to_be_bytes())?;
                merged_count += 1;
                next_known = read_hash(&mut known, &mut remaining_known)?;
            }
            if next_known == Some(hash) {
                continue;
            }
            merged.write_all(&hash.to_be_bytes())?;
            merged_count += 1;
            let rank = entry as u64 as usize;
            emit[rank / 64] |= 1 << (rank % 64);
        }
        while let Some(k) = next_known {
            merged.write_all(&k.to_be_bytes())?;
            merged_count += 1;
            next_known = read_hash(&mut known, &mut remaining_known)?;
        }
        let mut merged = merged.into_inner().map_err(|e| e.into_error())?;

        // A drained ready queue is reset before new elements are appended.
        if self.ready_count == 0 && self.ready_len > RECORD_HEADER_LEN {
            self.ready_writer.set_len(RECORD_HEADER_LEN)?;
            self.ready_len = RECORD_HEADER_LEN;
            self.ready_read_pos = RECORD_HEADER_LEN;
            self.ready_reader.seek(SeekFrom::Start(RECORD_HEADER_LEN))?;
        }
        self.ready_writer.seek(SeekFrom::Start(self.ready_len))?;

        let mut aux = RecordReader::new(BufReader::with_capacity(
            64 * 1024,
            File::open(dir.join(AUX_FILE))?,
        ));
        let mut ready = BufWriter::with_capacity(64 * 1024, &mut self.ready_writer);
        let mut rank = 0usize;
        let mut emitted = 0u64;
        let mut appended = 0u64;
        while let Some(element) = aux.next_record()? {
            if rank >= n {
                rank += 1;
                break;
            }
            if emit[rank / 64] & (1 << (rank % 64)) != 0 {
                ready.write_all(&(element.len() as u32).to_be_bytes())?;
                ready.write_all(&element)?;
                emitted += 1;
                appended += 4 + element.len() as u64;
            }
            rank += 1;
        }
        if rank != n {
            return Err(SieveError::Corrupt {
                path: dir.join(AUX_FILE),
                reason: format!("{rank} records for {n} pending hashes"),
            });
        }
        ready.flush()?;
        drop(ready);
        if self.config.durable {
            self.ready_writer.sync_data()?;
        }

        let header = KnownHeader {
            count: merged_count,
            ready_committed: self.ready_len + appended,
            ready_read_pos: self.ready_read_pos,
        };
        merged.seek(SeekFrom::Start(0))?;
        header.write(&mut merged)?;
        if self.config.durable {
            merged.sync_all()?;
        }
        drop(merged);
        fs::rename(&tmp_path, &known_path)?;
        if self.config.durable {
            File::open(&dir)?.sync_all()?;
        }

        self.ready_len += appended;
        self.ready_count += emitted;
        self.known_count = merged_count;
        let aux_file = self.aux.get_mut();
        aux_file.set_len(RECORD_HEADER_LEN)?;
        aux_file.seek(SeekFrom::End(0))?;
        self.pending.clear();
        self.stats.flushes += 1;
        Ok(())
    }
}

struct KnownHeader {
    count: u64,
    ready_committed: u64,
    ready_read_pos: u64,
}

impl KnownHeader {
    fn read(path: &Path) -> Result<KnownHeader> {
        let corrupt = |reason: &str| SieveError::Corrupt {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut f = File::open(path)?;
        let mut buf = [0u8; KNOWN_HEADER_LEN as usize];
        f.read_exact(&mut buf)
            .map_err(|_| corrupt("truncated header"))?;
        if &buf[0..4] != KNOWN_MAGIC {
            return Err(corrupt("bad magic"));
        }
        if u32::from_be_bytes(buf[4..8].try_into().unwrap()) != FORMAT_VERSION {
            return Err(corrupt("unsupported version"));
        }
        if buf[8..24] != hash_tag() {
            return Err(corrupt("written with a different hash function"));
        }
        let word = |i: usize| u64::from_be_bytes(buf[i..i + 8].try_into().unwrap());
        let header = KnownHeader {
            count: word(24),
            ready_committed: word(32),
            ready_read_pos: word(40),
        };
        if f.metadata()?.len() != KNOWN_HEADER_LEN + header.count * 8 {
            return Err(corrupt("length does not match hash count"));
        }
        Ok(header)
    }

    fn write(&self, w: &mut impl Write) -> io::Result<()> {
        let mut buf = Vec::with_capacity(KNOWN_HEADER_LEN as usize);
        buf.extend_from_slice(KNOWN_MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_be_bytes());
        buf.extend_from_slice(&hash_tag());
        buf.extend_from_slice(&self.count.to_be_bytes());
        buf.extend_from_slice(&self.ready_committed.to_be_bytes());
        buf.extend_from_slice(&self.ready_read_pos.to_be_bytes());
        w.write_all(&buf)
    }
}

fn hash_tag() -> [u8; 16] {
    let mut tag = [0u8; 16];
    let bytes = HASH_VERSION.as_bytes();
    tag[..bytes.len()].copy_from_slice(bytes);
    tag
}

fn write_record_header(f: &mut File, magic: &[u8; 4]) -> io::Result<()> {
    f.seek(SeekFrom::Start(0))?;
    f.write_all(magic)?;
    f.write_all(&FORMAT_VERSION.to_be_bytes())?;
    Ok(())
}

fn check_record_header(f: &mut File, magic: &[u8; 4], path: &Path) -> Result<()> {
    let mut buf = [0u8; RECORD_HEADER_LEN as usize];
    f.seek(SeekFrom::Start(0))?;
    f.read_exact(&mut buf)?;
    if &buf[..4] != magic || buf[4..8] != FORMAT_VERSION.to_be_bytes() {
        return Err(SieveError::Corrupt {
            path: path.to_path_buf(),
            reason: "bad header".into(),
        });
    }
    Ok(())
}

fn read_hash(r: &mut impl Read, remaining: &mut u64) -> io::Result<Option<u64>> {
    if *remaining == 0 {
        return Ok(None);
    }
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    *remaining -= 1;
    Ok(Some(u64::from_be_bytes(buf)))
}

fn count_records(path: &Path, from: u64, to: u64) -> Result<u64> {
    let mut reader = RecordReader::new(BufReader::new(File::open(path)?));
    reader.skip_to(from)?;
    let mut count = 0;
    while reader.pos < to {
        if reader.next_record()?.is_none() {
            break;
        }
        count += 1;
    }
    Ok(count)
}

/// Sequential reader of length-prefixed records; stops cleanly at a
/// truncated trailing record.
struct RecordReader<R> {
    inner: R,
    pos: u64,
}

impl<R: Read + Seek> RecordReader<R> {
    fn new(mut inner: R) -> Self {
        let _ = inner.seek(SeekFrom::Start(RECORD_HEADER_LEN));
        RecordReader {
            inner,
            pos: RECORD_HEADER_LEN,
        }
    }

    fn skip_to(&mut self, pos: u64) -> io::Result<()> {
        self.inner.seek(SeekFrom::Start(pos))?;
        self.pos = pos;
        Ok(())
    }

    fn next_record(&mut self) -> io::Result<Option<Vec<u8>>> {
        let mut len = [0u8; 4];
        if !read_full(&mut self.inner, &mut len)? {
            return Ok(None);
        }
        let len = u32::from_be_bytes(len) as usize;
        let mut element = vec![0u8; len];
        if !read_full(&mut self.inner, &mut element)? {
            return Ok(None);
        }
        self.pos += 4 + len as u64;
        Ok(Some(element))
    }
}

/// Like `read_exact`, but reports a short read as `false`.
fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => return Ok(false),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open(dir: &Path, capacity_entries: usize) -> Sieve {
        let mut config = SieveConfig::new(dir, capacity_entries * ENTRY_BYTES);
        config.durable = false;
        Sieve::open(config).unwrap()
    }

    fn drain(sieve: &Sieve) -> Vec<String> {
        let mut out = Vec::new();
        while let Some(e) = sieve.dequeue_bytes().unwrap() {
            out.push(String::from_utf8(e).unwrap());
        }
        out
    }

    #[test]
    fn dequeues_in_first_appearance_order() {
        let dir = tempfile::tempdir().unwrap();
        let sieve = open(dir.path(), 1024);
        for e in ["A", "B", "A", "C"] {
            sieve.enqueue_bytes(e.as_bytes()).unwrap();
        }
        assert_eq!(drain(&sieve), ["A", "B", "C"]);
    }

    #[test]
    fn repeated_element_dequeued_once() {
        let dir = tempfile::tempdir().unwrap();
        let sieve = open(dir.path(), 64);
        for _ in 0..1000 {
            sieve.enqueue_bytes(b"A").unwrap();
        }
        assert_eq!(drain(&sieve), ["A"]);
        assert!(sieve.stats().flushes >= 15);
    }

    #[test]
    fn empty_sieve_signals_empty() {
        let dir = tempfile::tempdir().unwrap();
        let sieve = open(dir.path(), 16);
        assert_eq!(sieve.dequeue_bytes().unwrap(), None);
    }

    #[test]
    fn element_seen_in_earlier_epoch_is_not_emitted_again() {
        let dir = tempfile::tempdir().unwrap();
        let sieve = open(dir.path(), 4);
        sieve.enqueue_bytes(b"X").unwrap();
        sieve.flush().unwrap();
        for epoch in 2..=5 {
            for i in 0..4 {
                sieve
                    .enqueue_bytes(format!("e{epoch}-{i}").as_bytes())
                    .unwrap();
            }
        }
        sieve.enqueue_bytes(b"X").unwrap();
        sieve.flush().unwrap();
        let out = drain(&sieve);
        assert_eq!(out.iter().filter(|e| *e == "X").count(), 1);
        assert_eq!(out[0], "X");
        assert_eq!(out.len(), 17);
    }

    #[test]
    fn colliding_hashes_are_conflated() {
        fn first_byte(b: &[u8]) -> u64 {
            b.first().copied().unwrap_or(0) as u64
        }
        let dir = tempfile::tempdir().unwrap();
        let mut config = SieveConfig::new(dir.path(), 1024);
        config.hash = first_byte;
        config.durable = false;
        let sieve = Sieve::open(config).unwrap();
        sieve.enqueue_bytes(b"apple").unwrap();
        sieve.enqueue_bytes(b"avocado").unwrap();
        sieve.enqueue_bytes(b"banana").unwrap();
        assert_eq!(drain(&sieve), ["apple", "banana"]);
    }

    #[test]
    fn closed_sieve_rejects_operations() {
        let dir = tempfile::tempdir().unwrap();
        let sieve = open(dir.path(), 16);
        sieve.close().unwrap();
        assert!(matches!(sieve.enqueue_bytes(b"a"), Err(SieveError::Closed)));
        assert!(matches!(sieve.dequeue_bytes(), Err(SieveError::Closed)));
    }

    #[test]
    fn reopen_resumes_position_and_epoch() {
        let dir = tempfile::tempdir().unwrap();
        {
            let sieve = open(dir.path(), 4);
            for e in ["a", "b", "c", "d", "e", "f"] {
                sieve.enqueue_bytes(e.as_bytes()).unwrap();
            }
            // a..d flushed, e and f pending.
            assert_eq!(sieve.dequeue_bytes().unwrap().unwrap(), b"a");
            sieve.close().unwrap();
        }
        let sieve = open(dir.path(), 4);
        sieve.enqueue_bytes(b"a").unwrap();
        sieve.enqueue_bytes(b"g").unwrap();
        assert_eq!(drain(&sieve), ["b", "c", "d", "e", "f", "g"]);
    }

    #[test]
    fn interrupted_flush_is_replayed() {
        let dir = tempfile::tempdir().unwrap();
        {
            let sieve = open(dir.path(), 100);
            for e in ["a", "b"] {
                sieve.enqueue_bytes(e.as_bytes()).unwrap();
            }
            sieve.flush().unwrap();
            for e in ["c", "a", "d"] {
                sieve.enqueue_bytes(e.as_bytes()).unwrap();
            }
            sieve.close().unwrap();
        }
        // Simulate a crash after the ready queue was appended but before the
        // new known file was renamed into place.
        let mut ready = OpenOptions::new()
            .append(true)
            .open(dir.path().join(READY_FILE))
            .unwrap();
        ready.write_all(&1u32.to_be_bytes()).unwrap();
        ready.write_all(b"c").unwrap();
        fs::write(dir.path().join(KNOWN_TMP_FILE), b"garbage").unwrap();

        let sieve = open(dir.path(), 100);
        assert_eq!(drain(&sieve), ["a", "b", "c", "d"]);
        assert!(!dir.path().join(KNOWN_TMP_FILE).exists());
    }

    #[test]
    fn known_file_is_sorted_and_unique() {
        let dir = tempfile::tempdir().unwrap();
        let sieve = open(dir.path(), 8);
        for i in 0..100u32 {
            sieve
                .enqueue_bytes(format!("u{}", i % 37).as_bytes())
                .unwrap();
        }
        sieve.flush().unwrap();
        let bytes = fs::read(dir.path().join(KNOWN_FILE)).unwrap();
        let hashes: Vec<u64> = bytes[KNOWN_HEADER_LEN as usize..]
            .chunks(8)
            .map(|c| u64::from_be_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(hashes.len(), 37);
        assert!(hashes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn rejects_files_from_other_hash_version() {
        let dir = tempfile::tempdir().unwrap();
        open(dir.path(), 8).close().unwrap();
        let path = dir.path().join(KNOWN_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes[8] = b'?';
        fs::write(&path, bytes).unwrap();
        let mut config = SieveConfig::new(dir.path(), 128);
        config.durable = false;
        assert!(matches!(Sieve::open(config), Err(SieveError::Corrupt { .. })));
    }
}
