//! Datagram framing for URL batches: a versioned magic, a count, then
//! length-prefixed canonical URLs. A URL is never split across datagrams.

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"HWU\x01";
pub const MAX_DATAGRAM: usize = 1400;
const HEADER: usize = MAGIC.len() + 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("bad magic")]
    BadMagic,
    #[error("truncated datagram")]
    Truncated,
    #[error("trailing bytes after {0} URLs")]
    Trailing(usize),
    #[error("URL of {0} bytes does not fit in a datagram")]
    TooLong(usize),
}

/// The largest URL a datagram can carry.
pub const MAX_URL: usize = MAX_DATAGRAM - HEADER - 2;

/// Accumulates URLs into one datagram.
#[derive(Debug, Clone)]
pub struct Batch {
    buf: Vec<u8>,
    count: u16,
}

impl Default for Batch {
    fn default() -> Self {
        Self::new()
    }
}

impl Batch {
    pub fn new() -> Self {
        let mut buf = Vec::with_capacity(MAX_DATAGRAM);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&[0, 0]);
        Batch { buf, count: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn len(&self) -> usize {
        self.count as usize
    }

    pub fn fits(&self, url: &[u8]) -> bool {
        self.buf.len() + 2 + url.len() <= MAX_DATAGRAM && self.count < u16::MAX
    }

    /// Adds `url`; the caller checks [`fits`](Self::fits) first.
    pub fn push(&mut self, url: &[u8]) {
        debug_assert!(self.fits(url));
        self.buf.extend_from_slice(&(url.len() as u16).to_le_bytes());
        self.buf.extend_from_slice(url);
        self.count += 1;
        self.buf[4..6].copy_from_slice(&self.count.to_le_bytes());
    }

    pub fn bytes(&self) -> &[u8] {
        &self.buf
    }

    /// Returns the finished datagram and starts a new one.
    pub fn take(&mut self) -> Vec<u8> {
        std::mem::take(self).buf
    }
}

/// Packs URLs, in order, into as few datagrams as possible.
pub fn encode<'a>(urls: impl IntoIterator<Item = &'a [u8]>) -> Result<Vec<Vec<u8>>, WireError> {
    let mut out = Vec::new();
    let mut batch = Batch::new();
    for url in urls {
        if url.len() > MAX_URL {
            return Err(WireError::TooLong(url.len()));
        }
        if !batch.fits(url) {
            out.push(batch.take());
        }
        batch.push(url);
    }
    if !batch.is_empty() {
        out.push(batch.take());
    }
    Ok(out)
}

pub fn decode(datagram: &[u8]) -> Result<Vec<&[u8]>, WireError> {
    if datagram.len() < HEADER {
        return Err(WireError::Truncated);
    }
    if &datagram[..4] != MAGIC {
        return Err(WireError::BadMagic);
    }
    let count = u16::from_le_bytes([datagram[4], datagram[5]]) as usize;
    let mut urls = Vec::with_capacity(count);
    let mut pos = HEADER;
    for _ in 0..count {
        let len_bytes = datagram.get(pos..pos + 2).ok_or(WireError::Truncated)?;
        let len = u16::from_le_bytes([len_bytes[0], len_bytes[1]]) as usize;
        pos += 2;
        urls.push(datagram.get(pos..pos + len).ok_or(WireError::Truncated)?);
        pos += len;
    }
    if pos != datagram.len() {
        return Err(WireError::Trailing(count));
    }
    Ok(urls)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packs_to_the_cap() {
        let url = vec![b'u'; 100];
        let urls: Vec<&[u8]> = (0..30).map(|_| url.as_slice()).collect();
        let grams = encode(urls.iter().copied()).unwrap();
        assert!(grams.iter().all(|g| g.len() <= MAX_DATAGRAM));
        // (1400 - 6) / 102 = 13 per datagram
        assert_eq!(grams.iter().map(|g| decode(g).unwrap().len()).collect::<Vec<_>>(), [13, 13, 4]);
    }

    #[test]
    fn rejects_damage() {
        let grams = encode([&b"http://a.test/"[..]]).unwrap();
        assert_eq!(decode(&grams[0][..grams[0].len() - 1]), Err(WireError::Truncated));
        let mut bad = grams[0].clone();
        bad[0] = b'X';
        assert_eq!(decode(&bad), Err(WireError::BadMagic));
        let mut long = grams[0].clone();
        long.push(0);
        assert_eq!(decode(&long), Err(WireError::Trailing(1)));
        assert_eq!(encode([&vec![0u8; MAX_URL + 1][..]]), Err(WireError::TooLong(MAX_URL + 1)));
        assert!(encode([&vec![0u8; MAX_URL][..]]).is_ok());
    }
}
