//! On-disk per-host FIFO queues for URLs that do not fit in the workbench.
//!
//! Records are appended to a sequence of fixed-size memory-mapped files,
//! addressed by absolute offsets across the whole sequence (a record may
//! straddle two files). A record is `[next: u64 LE][len: varint][payload]`;
//! `next` points to the following record of the same host, or is
//! [`END`]. Only head, tail and count of each host are kept in memory.
//!
//! Each host chain starts with an anchor record whose payload is the host's
//! scheme+authority (paths always start with `/`, so the two are
//! distinguishable). The anchor's `next` is the current head; it makes a log
//! scan after a crash sufficient to rebuild every chain.
//!
//! Dequeued records are reclaimed only by [`Virtualizer::collect`], which
//! moves every live record, in log order, to the start of the region and
//! deletes the files that are no longer needed.

use std::collections::{BinaryHeap, HashMap};
use std::cmp::Reverse;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use memmap2::MmapMut;
use thiserror::Error;

/// `next` of the last record of a chain.
pub const END: u64 = u64::MAX;
/// `next` of an anchor whose host has no records left.
const DEAD: u64 = u64::MAX - 1;

const SNAPSHOT_FILE: &str = "meta.snapshot";
const SNAPSHOT_MAGIC: &[u8; 4] = b"HWVM";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum VirtualizerError {
    #[error("virtualizer I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("no queued URLs for host {0}")]
    UnknownHost(String),
    #[error("corrupt virtualizer log: {0}")]
    Corrupt(String),
}

pub type Result<T> = std::result::Result<T, VirtualizerError>;

#[derive(Debug, Clone)]
pub struct VirtualizerConfig {
    pub dir: PathBuf,
    /// Size of each log file.
    pub file_size: u64,
    /// Compaction starts when used/allocated falls below this ratio.
    pub gc_threshold: f64,
    /// No compaction while fewer bytes than this are allocated.
    pub min_collect_bytes: u64,
}

impl VirtualizerConfig {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        VirtualizerConfig {
            dir: dir.into(),
            file_size: 64 << 20,
            gc_threshold: 0.5,
            min_collect_bytes: 64 << 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct HostMeta {
    anchor: u64,
    tail: u64,
    count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Read(u64, u64),
    Write(u64, u64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CollectStats {
    pub moved_records: u64,
    pub freed_bytes: u64,
    pub deleted_files: usize,
}

pub struct Virtualizer {
    config: VirtualizerConfig,
    maps: Vec<MmapMut>,
    cursor: u64,
    used: u64,
    total: u64,
    hosts: HashMap<Box<[u8]>, HostMeta>,
    access_log: Option<Vec<Access>>,
    collections: u64,
}

impl Virtualizer {
    pub fn open(config: VirtualizerConfig) -> Result<Virtualizer> {
        if config.file_size < 32 {
            return Err(VirtualizerError::Corrupt("log file size below 32 bytes".into()));
        }
        fs::create_dir_all(&config.dir)?;
        let mut v = Virtualizer {
            config,
            maps: Vec::new(),
            cursor: 0,
            used: 0,
            total: 0,
            hosts: HashMap::new(),
            access_log: None,
            collections: 0,
        };
        let mut index = 0;
        while v.log_path(index).exists() {
            v.maps.push(map_file(&v.log_path(index), v.config.file_size)?);
            index += 1;
        }
        let snapshot = v.config.dir.join(SNAPSHOT_FILE);
        let restored = match fs::read(&snapshot) {
            Ok(bytes) => v.load_snapshot(&bytes).is_ok(),
            Err(_) => false,
        };
        // A snapshot describes the state at a clean close only.
        let _ = fs::remove_file(&snapshot);
        if !restored {
            v.hosts.clear();
            v.scan()?;
        }
        Ok(v)
    }

    fn log_path(&self, index: usize) -> PathBuf {
        self.config.dir.join(format!("queue.{index:04}.log"))
    }

    pub fn append(&mut self, host: &[u8], path_query: &[u8]) -> Result<()> {
        debug_assert!(path_query.first() == Some(&b'/'));
        if let Some(meta) = self.hosts.get(host).copied() {
            let at = self.cursor;
            let len = self.write_record(at, END, path_query)?;
            self.write_at(meta.tail, &at.to_le_bytes())?;
            let meta = self.hosts.get_mut(host).expect("host present");
            meta.tail = at;
            meta.count += 1;
            self.cursor = at + len;
            self.used += len;
        } else {
            let anchor = self.cursor;
            let at = anchor + encoded_len(host);
            let anchor_len = self.write_record(anchor, at, host)?;
            let len = self.write_record(at, END, path_query)?;
            self.hosts.insert(
                host.into(),
                HostMeta {
                    anchor,
                    tail: at,
                    count: 1,
                },
            );
            self.cursor = at + len;
            self.used += anchor_len + len;
        }
        self.total += 1;
        Ok(())
    }

    pub fn count(&self, host: &[u8]) -> u64 {
        self.hosts.get(host).map_or(0, |m| m.count)
    }

    /// Removes up to `max_n` paths from the head of the host's queue.
    pub fn dequeue(&mut self, host: &[u8], max_n: usize) -> Result<Vec<Box<[u8]>>> {
        self.dequeue_bounded(host, max_n, u64::MAX)
    }

    /// Like [`dequeue`](Self::dequeue), but stops before the total path
    /// length would exceed `max_bytes`.
    pub fn dequeue_bounded(
        &mut self,
        host: &[u8],
        max_n: usize,
        max_bytes: u64,
    ) -> Result<Vec<Box<[u8]>>> {
        let Some(&meta) = self.hosts.get(host) else {
            return Err(VirtualizerError::UnknownHost(String::from_utf8_lossy(host).into_owned()));
        };
        let mut head = self.read_next(meta.anchor)?;
        let mut out = Vec::new();
        let mut bytes = 0u64;
        let mut freed = 0u64;
        while out.len() < max_n && head != END {
            let (next, payload, len) = self.read_record(head)?;
            if bytes + payload.len() as u64 > max_bytes {
                break;
            }
            bytes += payload.len() as u64;
            freed += len;
            out.push(payload.into_boxed_slice());
            head = next;
        }
        let taken = out.len() as u64;
        if taken == 0 {
            return Ok(out);
        }
        self.used -= freed;
        self.total -= taken;
        if taken == meta.count {
            let anchor_len = self.record_len(meta.anchor)?;
            self.write_at(meta.anchor, &DEAD.to_le_bytes())?;
            self.used -= anchor_len;
            self.hosts.remove(host);
        } else {
            self.write_at(meta.anchor, &head.to_le_bytes())?;
            self.hosts.get_mut(host).expect("host present").count -= taken;
        }
        self.maybe_collect()?;
        Ok(out)
    }

    /// Drops every queued path of a host.
    pub fn purge(&mut self, host: &[u8]) -> Result<u64> {
        let n = self.count(host);
        if n > 0 {
            self.dequeue(host, n as usize)?;
        }
        Ok(n)
    }

    /// Live bytes, including anchors.
    pub fn used_bytes(&self) -> u64 {
        self.used
    }

    /// Bytes between the region start and the append cursor.
    pub fn allocated_bytes(&self) -> u64 {
        self.cursor
    }

    pub fn file_count(&self) -> usize {
        self.maps.len()
    }

    /// Hosts with at least one queued path.
    pub fn host_count(&self) -> usize {
        self.hosts.len()
    }

    /// Paths queued over all hosts.
    pub fn len(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn collections(&self) -> u64 {
        self.collections
    }

    /// Records every read and write of the mapped region from now on.
    pub fn record_accesses(&mut self, on: bool) {
        self.access_log = on.then(Vec::new);
    }

    pub fn take_accesses(&mut self) -> Vec<Access> {
        self.access_log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn maybe_collect(&mut self) -> Result<()> {
        let allocated = self.allocated_bytes();
        if allocated >= self.config.min_collect_bytes
            && (self.used as f64) < self.config.gc_threshold * allocated as f64
        {
            self.collect()?;
        }
        Ok(())
    }

    /// Compacts all live records to the start of the region.
    pub fn collect(&mut self) -> Result<CollectStats> {
        let mut stats = CollectStats::default();
        let before = self.cursor;
        // (position of the next record to move, host, previous record's new position)
        let mut frontier: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
        let mut names: Vec<Box<[u8]>> = Vec::with_capacity(self.hosts.len());
        let mut previous: Vec<Option<u64>> = Vec::with_capacity(self.hosts.len());
        for (name, meta) in &self.hosts {
            frontier.push(Reverse((meta.anchor, names.len())));
            names.push(name.clone());
            previous.push(None);
        }
        let mut write = 0u64;
        while let Some(Reverse((pos, host))) = frontier.pop() {
            let (next, payload, len) = self.read_record(pos)?;
            let mut bytes = Vec::with_capacity(len as usize);
            bytes.extend_from_slice(&next.to_le_bytes());
            push_varint(&mut bytes, payload.len() as u64);
            bytes.extend_from_slice(&payload);
            if write != pos {
                self.write_at(write, &bytes)?;
                stats.moved_records += 1;
            }
            let meta = self.hosts.get_mut(&names[host]).expect("host present");
            match previous[host] {
                None => meta.anchor = write,
                Some(prev) => self.write_at(prev, &write.to_le_bytes())?,
            }
            let meta = self.hosts.get_mut(&names[host]).expect("host present");
            if next == END {
                meta.tail = write;
            } else {
                frontier.push(Reverse((next, host)));
            }
            previous[host] = Some(write);
            write += len;
        }
        debug_assert_eq!(write, self.used);
        self.cursor = write;
        stats.freed_bytes = before - write;
        // Stale records past the cursor must not be mistaken for live ones
        // by a recovery scan.
        self.zero(write, before);
        // Keep the file holding the cursor (and at least one file).
        let needed = ((write / self.config.file_size) as usize + 1).min(self.maps.len().max(1));
        while self.maps.len() > needed {
            self.maps.pop();
            fs::remove_file(self.log_path(self.maps.len()))?;
            stats.deleted_files += 1;
        }
        self.collections += 1;
        Ok(stats)
    }

    /// Writes the in-memory metadata so the next open can skip the log scan.
    pub fn close(mut self) -> Result<()> {
        for map in &self.maps {
            map.flush()?;
        }
        let mut out = Vec::new();
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_be_bytes());
        for v in [self.config.file_size, self.maps.len() as u64, self.cursor, self.used, self.hosts.len() as u64] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        for (name, meta) in self.hosts.drain() {
            out.extend_from_slice(&(name.len() as u32).to_be_bytes());
            out.extend_from_slice(&name);
            for v in [meta.anchor, meta.tail, meta.count] {
                out.extend_from_slice(&v.to_be_bytes());
            }
        }
        let tmp = self.config.dir.join("meta.snapshot.tmp");
        let mut f = File::create(&tmp)?;
        f.write_all(&out)?;
        f.sync_all()?;
        fs::rename(tmp, self.config.dir.join(SNAPSHOT_FILE))?;
        Ok(())
    }

    fn load_snapshot(&mut self, bytes: &[u8]) -> std::result::Result<(), ()> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| ())?;
        if &magic != SNAPSHOT_MAGIC || read_u32(&mut r)? != SNAPSHOT_VERSION {
            return Err(());
        }
        let file_size = read_u64(&mut r)?;
        let files = read_u64(&mut r)?;
        if file_size != self.config.file_size || files != self.maps.len() as u64 {
            return Err(());
        }
        self.cursor = read_u64(&mut r)?;
        self.used = read_u64(&mut r)?;
        let n = read_u64(&mut r)?;
        self.total = 0;
        for _ in 0..n {
            let len = read_u32(&mut r)? as usize;
            if r.len() < len {
                return Err(());
            }
            let (name, rest) = r.split_at(len);
            r = rest;
            let meta = HostMeta {
                anchor: read_u64(&mut r)?,
                tail: read_u64(&mut r)?,
                count: read_u64(&mut r)?,
            };
            self.total += meta.count;
            self.hosts.insert(name.into(), meta);
        }
        Ok(())
    }

    /// Rebuilds metadata from the logs: records are parsed sequentially
    /// until one whose `next` does not point forward; chains are followed
    /// from each live anchor.
    fn scan(&mut self) -> Result<()> {
        let limit = self.maps.len() as u64 * self.config.file_size;
        let mut pos = 0u64;
        let mut anchors = Vec::new();
        while pos + 9 <= limit {
            let Ok((next, payload, len)) = self.read_record(pos) else {
                break;
            };
            let forward = next == END || next == DEAD || next > pos;
            if !forward || len == 9 || pos + len > limit {
                break;
            }
            if payload.first() != Some(&b'/') && next != DEAD {
                anchors.push((pos, payload, len));
            }
            pos += len;
        }
        self.cursor = pos;
        self.used = 0;
        self.total = 0;
        for (anchor, name, anchor_len) in anchors {
            let mut at = self.read_next(anchor)?;
            if at == END {
                continue;
            }
            let mut count = 0;
            let mut tail = at;
            while at != END {
                if at >= pos {
                    return Err(VirtualizerError::Corrupt(format!("chain escapes log at {at}")));
                }
                let (next, _, len) = self.read_record(at)?;
                self.used += len;
                count += 1;
                tail = at;
                at = next;
            }
            self.used += anchor_len;
            self.total += count;
            self.hosts.insert(name.into_boxed_slice(), HostMeta { anchor, tail, count });
        }
        Ok(())
    }

    fn write_record(&mut self, at: u64, next: u64, payload: &[u8]) -> Result<u64> {
        let mut bytes = Vec::with_capacity(payload.len() + 18);
        bytes.extend_from_slice(&next.to_le_bytes());
        push_varint(&mut bytes, payload.len() as u64);
        bytes.extend_from_slice(payload);
        self.write_at(at, &bytes)?;
        Ok(bytes.len() as u64)
    }

    fn read_next(&mut self, at: u64) -> Result<u64> {
        let mut buf = [0u8; 8];
        self.read_at(at, &mut buf)?;
        Ok(u64::from_le_bytes(buf))
    }

    /// Returns (next, payload, total record length).
    fn read_record(&mut self, at: u64) -> Result<(u64, Vec<u8>, u64)> {
        let next = self.read_next(at)?;
        let mut len = 0u64;
        let mut shift = 0;
        let mut pos = at + 8;
        loop {
            let mut b = [0u8; 1];
            self.read_at(pos, &mut b)?;
            pos += 1;
            len |= ((b[0] & 0x7f) as u64) << shift;
            if b[0] & 0x80 == 0 {
                break;
            }
            shift += 7;
            if shift > 63 {
                return Err(VirtualizerError::Corrupt(format!("bad length at {at}")));
            }
        }
        let limit = self.maps.len() as u64 * self.config.file_size;
        if pos + len > limit {
            return Err(VirtualizerError::Corrupt(format!("record at {at} overruns log")));
        }
        let mut payload = vec![0u8; len as usize];
        self.read_at(pos, &mut payload)?;
        Ok((next, payload, pos + len - at))
    }

    fn record_len(&mut self, at: u64) -> Result<u64> {
        Ok(self.read_record(at)?.2)
    }

    fn read_at(&mut self, mut at: u64, buf: &mut [u8]) -> Result<()> {
        if let Some(log) = &mut self.access_log {
            log.push(Access::Read(at, buf.len() as u64));
        }
        let size = self.config.file_size;
        let mut done = 0;
        while done < buf.len() {
            let file = (at / size) as usize;
            let off = (at % size) as usize;
            let map = self
                .maps
                .get(file)
                .ok_or_else(|| VirtualizerError::Corrupt(format!("read past end at {at}")))?;
            let n = (buf.len() - done).min(size as usize - off);
            buf[done..done + n].copy_from_slice(&map[off..off + n]);
            done += n;
            at += n as u64;
        }
        Ok(())
    }

    /// Clears `[from, to)` within the files that exist, without logging.
    fn zero(&mut self, mut from: u64, to: u64) {
        let size = self.config.file_size;
        let to = to.min(self.maps.len() as u64 * size);
        while from < to {
            let file = (from / size) as usize;
            let off = (from % size) as usize;
            let n = ((to - from) as usize).min(size as usize - off);
            self.maps[file][off..off + n].fill(0);
            from += n as u64;
        }
    }

    fn write_at(&mut self, mut at: u64, bytes: &[u8]) -> Result<()> {
        if let Some(log) = &mut self.access_log {
            log.push(Access::Write(at, bytes.len() as u64));
        }
        let size = self.config.file_size;
        let mut done = 0;
        while done < bytes.len() {
            let file = (at / size) as usize;
            while self.maps.len() <= file {
                let path = self.log_path(self.maps.len());
                self.maps.push(map_file(&path, size)?);
            }
            let off = (at % size) as usize;
            let n = (bytes.len() - done).min(size as usize - off);
            self.maps[file][off..off + n].copy_from_slice(&bytes[done..done + n]);
            done += n;
            at += n as u64;
        }
        Ok(())
    }
}

fn map_file(path: &Path, size: u64) -> Result<MmapMut> {
    let file = OpenOptions::new()
        .read(true)
        .write(true)
        .create(true)
        .truncate(false)
        .open(path)?;
    if file.metadata()?.len() != size {
        file.set_len(size)?;
    }
    // SAFETY: the file is private to this process's virtualizer directory
    // and is never truncated while mapped.
    Ok(unsafe { MmapMut::map_mut(&file)? })
}

fn push_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

fn encoded_len(payload: &[u8]) -> u64 {
    let mut v = Vec::new();
    push_varint(&mut v, payload.len() as u64);
    8 + v.len() as u64 + payload.len() as u64
}

fn read_u32(r: &mut &[u8]) -> std::result::Result<u32, ()> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| ())?;
    Ok(u32::from_be_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> std::result::Result<u64, ()> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| ())?;
    Ok(u64::from_be_bytes(b))
}
