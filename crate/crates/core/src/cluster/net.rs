//! Best-effort URL exchange over UDP.

use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam::channel::{unbounded, RecvTimeoutError, Sender};
use socket2::{Domain, Protocol, Socket, Type};

use super::wire::{self, Batch, MAX_DATAGRAM};
use crate::burl::CrawlUrl;

#[derive(Debug, Default)]
pub struct NetStats {
    pub sent_urls: AtomicU64,
    pub datagrams_sent: AtomicU64,
    pub send_errors: AtomicU64,
    pub oversized: AtomicU64,
    pub received_urls: AtomicU64,
    pub bad_datagrams: AtomicU64,
}

/// Binds a UDP socket with a large receive buffer, so bursts are not lost
/// to the kernel's default.
pub fn bind_udp(addr: SocketAddr) -> io::Result<UdpSocket> {
    let socket = Socket::new(Domain::for_address(addr), Type::DGRAM, Some(Protocol::UDP))?;
    let _ = socket.set_recv_buffer_size(8 << 20);
    socket.bind(&addr.into())?;
    Ok(socket.into())
}

/// Batches URLs per destination agent and sends them as datagrams, either
/// when a datagram is full or after `flush_interval`.
pub struct UrlSender {
    tx: Option<Sender<(usize, Vec<u8>)>>,
    handle: Option<JoinHandle<()>>,
    stats: Arc<NetStats>,
}

impl UrlSender {
    pub fn start(
        socket: UdpSocket,
        peers: Vec<SocketAddr>,
        flush_interval: Duration,
        stats: Arc<NetStats>,
    ) -> io::Result<Self> {
        let (tx, rx) = unbounded::<(usize, Vec<u8>)>();
        let thread_stats = stats.clone();
        let handle = std::thread::Builder::new().name("url-sender".into()).spawn(move || {
            let stats = thread_stats;
            let mut batches: Vec<Batch> = peers.iter().map(|_| Batch::new()).collect();
            let send = |to: usize, batch: &mut Batch| {
                if batch.is_empty() {
                    return;
                }
                let n = batch.len() as u64;
                let gram = batch.take();
                match socket.send_to(&gram, peers[to]) {
                    Ok(_) => {
                        stats.datagrams_sent.fetch_add(1, Ordering::Relaxed);
                        stats.sent_urls.fetch_add(n, Ordering::Relaxed);
                    }
                    Err(_) => {
                        stats.send_errors.fetch_add(1, Ordering::Relaxed);
                    }
                }
            };
            let mut last_flush = Instant::now();
            loop {
                let wait = flush_interval.saturating_sub(last_flush.elapsed());
                match rx.recv_timeout(wait) {
                    Ok((to, url)) => {
                        if url.len() > wire::MAX_URL {
                            stats.oversized.fetch_add(1, Ordering::Relaxed);
                            continue;
                        }
                        if !batches[to].fits(&url) {
                            send(to, &mut batches[to]);
                        }
                        batches[to].push(&url);
                    }
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => {
                        for (to, b) in batches.iter_mut().enumerate() {
                            send(to, b);
                        }
                        return;
                    }
                }
                if last_flush.elapsed() >= flush_interval {
                    for (to, b) in batches.iter_mut().enumerate() {
                        send(to, b);
                    }
                    last_flush = Instant::now();
                }
            }
        })?;
        Ok(UrlSender {
            tx: Some(tx),
            handle: Some(handle),
            stats,
        })
    }

    pub fn send(&self, agent: usize, url: &CrawlUrl) {
        if let Some(tx) = &self.tx {
            let _ = tx.send((agent, url.as_bytes().to_vec()));
        }
    }

    pub fn stats(&self) -> &Arc<NetStats> {
        &self.stats
    }

    /// Sends what is buffered and stops.
    pub fn close(&mut self) {
        self.tx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for UrlSender {
    fn drop(&mut self) {
        self.close();
    }
}

/// Receives URL datagrams and hands each URL to a callback.
pub struct UrlReceiver {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl UrlReceiver {
    pub fn start(
        socket: UdpSocket,
        stats: Arc<NetStats>,
        mut on_url: impl FnMut(CrawlUrl) + Send + 'static,
    ) -> io::Result<Self> {
        socket.set_read_timeout(Some(Duration::from_millis(100)))?;
        let stop = Arc::new(AtomicBool::new(false));
        let thread_stop = stop.clone();
        let handle = std::thread::Builder::new().name("url-receiver".into()).spawn(move || {
            let mut buf = vec![0u8; MAX_DATAGRAM + 1];
            while !thread_stop.load(Ordering::Relaxed) {
                let n = match socket.recv(&mut buf) {
                    Ok(n) => n,
                    Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => continue,
                    Err(_) => continue,
                };
                match wire::decode(&buf[..n]) {
                    Ok(urls) => {
                        for raw in urls {
                            match CrawlUrl::from_canonical(raw) {
                                Ok(url) => {
                                    stats.received_urls.fetch_add(1, Ordering::Relaxed);
                                    on_url(url);
                                }
                                Err(_) => {
                                    stats.bad_datagrams.fetch_add(1, Ordering::Relaxed);
                                }
                            }
                        }
                    }
                    Err(_) => {
                        stats.bad_datagrams.fetch_add(1, Ordering::Relaxed);
                    }
                }
            }
        })?;
        Ok(UrlReceiver {
            stop,
            handle: Some(handle),
        })
    }

    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for UrlReceiver {
    fn drop(&mut self) {
        self.stop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    #[test]
    fn urls_cross_between_agents() {
        let rx_socket = bind_udp("127.0.0.1:0".parse().unwrap()).unwrap();
        let rx_addr = rx_socket.local_addr().unwrap();
        let got = Arc::new(Mutex::new(Vec::new()));
        let sink = got.clone();
        let stats = Arc::new(NetStats::default());
        let mut receiver = UrlReceiver::start(rx_socket, stats.clone(), move |u| sink.lock().unwrap().push(u)).unwrap();
        let tx_socket = bind_udp("127.0.0.1:0".parse().unwrap()).unwrap();
        let mut sender = UrlSender::start(tx_socket, vec![rx_addr], Duration::from_millis(10), Arc::default()).unwrap();
        let urls: Vec<CrawlUrl> = (0..200)
            .map(|i| CrawlUrl::parse(&format!("http://h{}.test/page/{i}", i % 7), None).unwrap())
            .collect();
        for u in &urls {
            sender.send(0, u);
        }
        sender.close();
        let deadline = Instant::now() + Duration::from_secs(5);
        while got.lock().unwrap().len() < urls.len() && Instant::now() < deadline {
            std::thread::sleep(Duration::from_millis(10));
        }
        receiver.stop();
        // Loopback does not drop datagrams this small at this rate.
        assert_eq!(*got.lock().unwrap(), urls);
        assert!(sender.stats().datagrams_sent.load(Ordering::Relaxed) < 20);
    }
}
