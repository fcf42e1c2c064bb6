//! Minimal blocking HTTP/1.1 client with connection reuse.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{IpAddr, SocketAddr, TcpStream};
use std::time::Duration;

use thiserror::Error;

use super::fetch_data::FetchData;
use crate::burl::CrawlUrl;
use crate::clock;

const MAX_HEAD_BYTES: usize = 64 * 1024;

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("unsupported: {0}")]
    Unsupported(&'static str),
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub user_agent: String,
    pub connect_timeout: Duration,
    /// Applies to each read and write on the socket.
    pub io_timeout: Duration,
    /// Send every request to this address, with an absolute request target.
    pub proxy: Option<SocketAddr>,
    pub max_body_bytes: u64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            user_agent: concat!("hostwise/", env!("CARGO_PKG_VERSION")).to_string(),
            connect_timeout: Duration::from_secs(10),
            io_timeout: Duration::from_secs(30),
            proxy: None,
            max_body_bytes: 8 << 20,
        }
    }
}

/// An open connection that may serve further requests.
pub struct Connection {
    reader: BufReader<TcpStream>,
    peer: SocketAddr,
}

impl Connection {
    fn open(peer: SocketAddr, config: &ClientConfig) -> io::Result<Connection> {
        let stream = TcpStream::connect_timeout(&peer, config.connect_timeout)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(config.io_timeout))?;
        stream.set_write_timeout(Some(config.io_timeout))?;
        Ok(Connection {
            reader: BufReader::with_capacity(16 * 1024, stream),
            peer,
        })
    }
}

/// Fetches `url` from `ip` into `data`, reusing `conn` when it points at the
/// same peer. On return `conn` holds the connection if it can be reused.
pub fn fetch(
    config: &ClientConfig,
    conn: &mut Option<Connection>,
    url: &CrawlUrl,
    ip: IpAddr,
    data: &mut FetchData,
) -> Result<(), HttpError> {
    data.fetch_start = clock::now_ms();
    let result = fetch_inner(config, conn, url, ip, data);
    data.fetch_end = clock::now_ms_ceil();
    if let Err(e) = &result {
        data.error = Some(e.to_string());
        *conn = None;
    }
    result
}

fn fetch_inner(
    config: &ClientConfig,
    conn: &mut Option<Connection>,
    url: &CrawlUrl,
    ip: IpAddr,
    data: &mut FetchData,
) -> Result<(), HttpError> {
    if url.scheme() != "http" && config.proxy.is_none() {
        // TODO: TLS support for direct https fetches.
        return Err(HttpError::Unsupported("https without a proxy"));
    }
    let peer = config.proxy.unwrap_or_else(|| SocketAddr::new(ip, url.port()));
    let request = build_request(config, url);
    if conn.as_ref().is_some_and(|c| c.peer != peer) {
        *conn = None;
    }
    let reused = conn.is_some();
    if !reused {
        *conn = Some(Connection::open(peer, config)?);
    }
    match exchange(config, conn.as_mut().expect("connection"), &request, data) {
        Ok(keep) => {
            if !keep {
                *conn = None;
            }
            Ok(())
        }
        // The server may have closed an idle kept-alive connection; one retry
        // on a fresh connection, and only if nothing was received.
        Err(HttpError::Io(e)) if reused && data.head.is_empty() && is_stale(&e) => {
            *conn = Some(Connection::open(peer, config)?);
            let keep = exchange(config, conn.as_mut().expect("connection"), &request, data)?;
            if !keep {
                *conn = None;
            }
            Ok(())
        }
        Err(e) => Err(e),
    }
}

fn is_stale(e: &io::Error) -> bool {
    matches!(
        e.kind(),
        io::ErrorKind::UnexpectedEof
            | io::ErrorKind::ConnectionReset
            | io::ErrorKind::ConnectionAborted
            | io::ErrorKind::BrokenPipe
    )
}

fn build_request(config: &ClientConfig, url: &CrawlUrl) -> Vec<u8> {
    let authority = url.authority();
    let host = authority.rsplit_once('@').map_or(authority, |(_, h)| h);
    let target = if config.proxy.is_some() {
        url.as_str()
    } else {
        &url.as_str()[url.scheme_authority().len()..]
    };
    format!(
        "GET {target} HTTP/1.1\r\nHost: {host}\r\nUser-Agent: {}\r\nAccept: */*\r\nAccept-Encoding: identity\r\nConnection: keep-alive\r\n\r\n",
        config.user_agent
    )
    .into_bytes()
}

/// Sends one request and reads the response; returns whether the
/// connection may be reused.
fn exchange(
    config: &ClientConfig,
    conn: &mut Connection,
    request: &[u8],
    data: &mut FetchData,
) -> Result<bool, HttpError> {
    conn.reader.get_mut().write_all(request)?;
    loop {
        read_head(&mut conn.reader, &mut data.head)?;
        parse_head(data)?;
        // Interim responses are skipped.
        if !(100..200).contains(&data.status) || data.status == 101 {
            break;
        }
    }
    let http10 = data.head.starts_with(b"HTTP/1.0");
    let mut keep = match data.header("connection") {
        Some(v) if v.eq_ignore_ascii_case("close") => false,
        Some(v) if v.eq_ignore_ascii_case("keep-alive") => true,
        _ => !http10,
    };
    let chunked = data
        .header("transfer-encoding")
        .is_some_and(|v| v.to_ascii_lowercase().contains("chunked"));
    let length = data.header("content-length").and_then(|v| v.trim().parse::<u64>().ok());
    let limit = config.max_body_bytes;
    if data.status == 204 || data.status == 304 || (100..200).contains(&data.status) {
        return Ok(keep);
    }
    if chunked {
        keep &= read_chunked(&mut conn.reader, data, limit)?;
    } else if let Some(len) = length {
        let want = len.min(limit);
        copy_exact(&mut conn.reader, data, want)?;
        if len > limit {
            data.truncated = true;
            keep = false;
        }
    } else {
        let n = io::copy(&mut (&mut conn.reader).take(limit), &mut data.body)?;
        data.truncated = n == limit && !conn.reader.fill_buf()?.is_empty();
        keep = false;
    }
    Ok(keep)
}

fn read_head(reader: &mut BufReader<TcpStream>, head: &mut Vec<u8>) -> Result<(), HttpError> {
    head.clear();
    loop {
        let before = head.len();
        let n = reader.by_ref().take((MAX_HEAD_BYTES - before) as u64 + 1).read_until(b'\n', head)?;
        if n == 0 {
            return Err(HttpError::Io(io::ErrorKind::UnexpectedEof.into()));
        }
        if head.len() > MAX_HEAD_BYTES {
            return Err(HttpError::Protocol("response head too large".into()));
        }
        let line = &head[before..];
        if line == b"\r\n" || line == b"\n" {
            if before == 0 {
                // Tolerate stray blank lines before the status line.
                head.clear();
                continue;
            }
            return Ok(());
        }
    }
}

fn parse_head(data: &mut FetchData) -> Result<(), HttpError> {
    let mut storage = [httparse::EMPTY_HEADER; 128];
    let mut response = httparse::Response::new(&mut storage);
    match response.parse(&data.head) {
        Ok(httparse::Status::Complete(_)) => {}
        Ok(httparse::Status::Partial) => return Err(HttpError::Protocol("incomplete head".into())),
        Err(e) => return Err(HttpError::Protocol(e.to_string())),
    }
    data.status = response.code.unwrap_or(0);
    data.headers.clear();
    for h in response.headers.iter() {
        data.headers
            .push((h.name.to_string(), String::from_utf8_lossy(h.value).into_owned()));
    }
    Ok(())
}

fn copy_exact(reader: &mut BufReader<TcpStream>, data: &mut FetchData, n: u64) -> Result<(), HttpError> {
    let copied = io::copy(&mut reader.take(n), &mut data.body)?;
    if copied < n {
        return Err(HttpError::Io(io::ErrorKind::UnexpectedEof.into()));
    }
    Ok(())
}

/// Reads a chunked body; returns false if it was truncated (the connection
/// is then unusable).
fn read_chunked(
    reader: &mut BufReader<TcpStream>,
    data: &mut FetchData,
    limit: u64,
) -> Result<bool, HttpError> {
    let mut line = Vec::new();
    loop {
        line.clear();
        reader.by_ref().take(1024).read_until(b'\n', &mut line)?;
        let size = match httparse::parse_chunk_size(&line) {
            Ok(httparse::Status::Complete((_, size))) => size,
            _ => return Err(HttpError::Protocol("bad chunk size".into())),
        };
        if size == 0 {
            // Trailers, up to the blank line.
            loop {
                line.clear();
                let n = reader.by_ref().take(8192).read_until(b'\n', &mut line)?;
                if n == 0 || line == b"\r\n" || line == b"\n" {
                    return Ok(true);
                }
            }
        }
        let room = limit - data.body.len();
        if size > room {
            copy_exact(reader, data, room)?;
            data.truncated = true;
            return Ok(false);
        }
        copy_exact(reader, data, size)?;
        line.clear();
        reader.by_ref().take(2).read_until(b'\n', &mut line)?;
    }
}
