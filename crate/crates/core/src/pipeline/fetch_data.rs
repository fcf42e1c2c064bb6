//! Response buffers: a fixed in-memory window with the excess spilled to a
//! temporary file, reused across fetches by one worker.

use std::fs::File;
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::net::IpAddr;
use std::path::PathBuf;

use crate::burl::CrawlUrl;

pub struct SpillBuffer {
    window: Vec<u8>,
    window_size: usize,
    spill_dir: PathBuf,
    spill: Option<File>,
    spilled: u64,
}

impl SpillBuffer {
    pub fn new(window_size: usize, spill_dir: impl Into<PathBuf>) -> Self {
        SpillBuffer {
            window: Vec::with_capacity(window_size),
            window_size,
            spill_dir: spill_dir.into(),
            spill: None,
            spilled: 0,
        }
    }

    pub fn clear(&mut self) -> io::Result<()> {
        self.window.clear();
        if self.spilled > 0 {
            if let Some(f) = &mut self.spill {
                f.set_len(0)?;
                f.seek(SeekFrom::Start(0))?;
            }
            self.spilled = 0;
        }
        Ok(())
    }

    pub fn len(&self) -> u64 {
        self.window.len() as u64 + self.spilled
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spilled(&self) -> u64 {
        self.spilled
    }

    /// The part held in memory.
    pub fn window(&self) -> &[u8] {
        &self.window
    }

    /// Reads the whole content from the start. Can be called repeatedly.
    pub fn reader(&mut self) -> io::Result<SpillReader<'_>> {
        if let Some(f) = &mut self.spill {
            f.seek(SeekFrom::Start(0))?;
        }
        Ok(SpillReader {
            window: &self.window,
            pos: 0,
            spill: self.spill.as_mut().map(|f| f.take(self.spilled)),
        })
    }

    /// Copies up to `max` bytes from the start into `out` (cleared first).
    pub fn read_prefix(&mut self, max: usize, out: &mut Vec<u8>) -> io::Result<()> {
        out.clear();
        self.reader()?.take(max as u64).read_to_end(out)?;
        Ok(())
    }
}

impl Write for SpillBuffer {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let room = self.window_size - self.window.len();
        if room > 0 {
            let n = room.min(buf.len());
            self.window.extend_from_slice(&buf[..n]);
            return Ok(n);
        }
        if self.spill.is_none() {
            self.spill = Some(tempfile::tempfile_in(&self.spill_dir)?);
        }
        let f = self.spill.as_mut().expect("spill file");
        f.write_all(buf)?;
        self.spilled += buf.len() as u64;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

pub struct SpillReader<'a> {
    window: &'a [u8],
    pos: usize,
    spill: Option<io::Take<&'a mut File>>,
}

impl Read for SpillReader<'_> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if self.pos < self.window.len() {
            let n = (self.window.len() - self.pos).min(buf.len());
            buf[..n].copy_from_slice(&self.window[self.pos..self.pos + n]);
            self.pos += n;
            return Ok(n);
        }
        match &mut self.spill {
            Some(f) => f.read(buf),
            None => Ok(0),
        }
    }
}

/// One fetched resource, owned by a fetch worker and lent to a parse worker.
pub struct FetchData {
    pub url: CrawlUrl,
    pub ip: Option<IpAddr>,
    pub status: u16,
    /// Status line and headers exactly as received.
    pub head: Vec<u8>,
    pub headers: Vec<(String, String)>,
    pub body: SpillBuffer,
    /// The body exceeded the size limit and was cut.
    pub truncated: bool,
    pub fetch_start: u64,
    pub fetch_end: u64,
    pub error: Option<String>,
    /// Resources fetched from this host before this one.
    pub host_fetched: u64,
}

impl FetchData {
    pub fn new(window_size: usize, spill_dir: impl Into<PathBuf>) -> Self {
        FetchData {
            url: CrawlUrl::parse("http://unset.invalid/", None).expect("static url"),
            ip: None,
            status: 0,
            head: Vec::new(),
            headers: Vec::new(),
            body: SpillBuffer::new(window_size, spill_dir),
            truncated: false,
            fetch_start: 0,
            fetch_end: 0,
            error: None,
            host_fetched: 0,
        }
    }

    pub fn reset(&mut self, url: CrawlUrl) -> io::Result<()> {
        self.url = url;
        self.ip = None;
        self.status = 0;
        self.head.clear();
        self.headers.clear();
        self.truncated = false;
        self.fetch_start = 0;
        self.fetch_end = 0;
        self.error = None;
        self.host_fetched = 0;
        self.body.clear()
    }

    /// First header named `name` (case-insensitive).
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn content_type(&self) -> Option<&str> {
        self.header("content-type")
    }
}
