//! HTTP server for the synthetic web. It behaves as a proxy: requests carry
//! absolute targets (or a `Host` header) naming synthetic hosts.
//!
//! Every request is logged with its arrival time on the crawler's clock, so
//! that politeness and visit order can be audited afterwards.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use bytes::Bytes;
use http_body_util::Full;
use hyper::body::Incoming;
use hyper::server::conn::http1;
use hyper::service::service_fn;
use hyper::{Request, Response, StatusCode};
use hyper_util::rt::TokioIo;
use parking_lot::Mutex;
use tokio::net::TcpListener;
use tokio::sync::{oneshot, Semaphore};

use hostwise::clock;

use crate::audit::LogEntry;
use crate::synth::{Outcome, SyntheticWeb};

pub struct ServerOptions {
    /// Worker threads of the server runtime.
    pub threads: usize,
    /// Keep every request in the log.
    pub log: bool,
}

impl Default for ServerOptions {
    fn default() -> Self {
        ServerOptions { threads: 2, log: true }
    }
}

struct State {
    web: SyntheticWeb,
    limit: Option<Semaphore>,
    log: Option<Mutex<Vec<LogEntry>>>,
}

/// A running synthetic web server; stops when dropped.
pub struct SynthServer {
    addr: SocketAddr,
    state: Arc<State>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl SynthServer {
    pub fn start(web: SyntheticWeb, options: ServerOptions) -> std::io::Result<SynthServer> {
        let addr: SocketAddr = web
            .spec()
            .addr
            .parse()
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("bad address: {e}")))?;
        let limit = match web.spec().max_concurrency {
            0 => None,
            n => Some(Semaphore::new(n)),
        };
        let state = Arc::new(State {
            web,
            limit,
            log: options.log.then(|| Mutex::new(Vec::new())),
        });
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(options.threads.max(1))
            .thread_name("synthweb")
            .enable_all()
            .build()?;
        let std_listener = std::net::TcpListener::bind(addr)?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let (tx, mut rx) = oneshot::channel::<()>();
        let thread_state = state.clone();
        let thread = std::thread::Builder::new().name("synthweb-main".into()).spawn(move || {
            runtime.block_on(async move {
                let listener = match TcpListener::from_std(std_listener) {
                    Ok(l) => l,
                    Err(e) => {
                        log::error!("synthetic web cannot listen: {e}");
                        return;
                    }
                };
                loop {
                    let (stream, _) = tokio::select! {
                        _ = &mut rx => break,
                        accepted = listener.accept() => match accepted {
                            Ok(a) => a,
                            Err(e) => {
                                log::warn!("accept failed: {e}");
                                tokio::time::sleep(Duration::from_millis(5)).await;
                                continue;
                            }
                        },
                    };
                    let _ = stream.set_nodelay(true);
                    let state = thread_state.clone();
                    tokio::spawn(async move {
                        let service = service_fn(move |req| handle(state.clone(), req));
                        let _ = http1::Builder::new()
                            .keep_alive(true)
                            .serve_connection(TokioIo::new(stream), service)
                            .await;
                    });
                }
            });
            runtime.shutdown_timeout(Duration::from_secs(1));
        })?;
        Ok(SynthServer {
            addr,
            state,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn web(&self) -> &SyntheticWeb {
        &self.state.web
    }

    /// Requests logged so far, in arrival order.
    pub fn log(&self) -> Vec<LogEntry> {
        self.state.log.as_ref().map(|l| l.lock().clone()).unwrap_or_default()
    }

    /// Removes and returns the requests logged so far.
    pub fn drain_log(&self) -> Vec<LogEntry> {
        self.state.log.as_ref().map(|l| std::mem::take(&mut *l.lock())).unwrap_or_default()
    }

    pub fn log_len(&self) -> usize {
        self.state.log.as_ref().map_or(0, |l| l.lock().len())
    }

    pub fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for SynthServer {
    fn drop(&mut self) {
        self.stop();
    }
}

/// The synthetic host and path a request is for.
fn target(req: &Request<Incoming>) -> Option<(String, String)> {
    let uri = req.uri();
    let host = match uri.host() {
        Some(h) => h.to_string(),
        None => {
            let h = req.headers().get(hyper::header::HOST)?.to_str().ok()?;
            h.rsplit_once(':').map_or(h, |(h, _)| h).to_string()
        }
    };
    let path = uri.path_and_query().map_or("/", |p| p.as_str()).to_string();
    Some((host.to_ascii_lowercase(), path))
}

/// Errors abort the connection, which is how resets are injected.
async fn handle(state: Arc<State>, req: Request<Incoming>) -> Result<Response<Full<Bytes>>, std::io::Error> {
    let at_ms = clock::now_ms();
    let Some((host_name, path)) = target(&req) else {
        return Ok(plain(StatusCode::BAD_REQUEST, "bad request\n"));
    };
    let Some(host) = SyntheticWeb::parse_host(&host_name) else {
        return Ok(plain(StatusCode::NOT_FOUND, "unknown host\n"));
    };
    let web = &state.web;
    if let Some(log) = &state.log {
        let agent = req
            .headers()
            .get(hyper::header::USER_AGENT)
            .and_then(|v| v.to_str().ok())
            .unwrap_or("")
            .to_string();
        log.lock().push(LogEntry {
            at_ms,
            host,
            ip: web.ip_index(host),
            path: path.clone(),
            agent,
        });
    }
    let _permit = match &state.limit {
        Some(s) => Some(s.acquire().await.expect("semaphore is never closed")),
        None => None,
    };
    let delay = web.delay_ms(host, &path);
    if delay > 0 {
        tokio::time::sleep(Duration::from_millis(delay)).await;
    }
    match web.respond(host, &path) {
        Outcome::Reset => Err(std::io::Error::new(std::io::ErrorKind::ConnectionReset, "injected reset")),
        Outcome::Page {
            status,
            content_type,
            body,
        } => Ok(Response::builder()
            .status(status)
            .header(hyper::header::CONTENT_TYPE, content_type)
            .body(Full::new(Bytes::from(body)))
            .expect("valid response")),
    }
}

fn plain(status: StatusCode, text: &'static str) -> Response<Full<Bytes>> {
    Response::builder()
        .status(status)
        .header(hyper::header::CONTENT_TYPE, "text/plain")
        .body(Full::new(Bytes::from_static(text.as_bytes())))
        .expect("valid response")
}
