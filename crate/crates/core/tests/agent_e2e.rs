//! A whole agent against a small in-process web served through a proxy.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;

use hostwise::agent::{Agent, AgentOptions};
use hostwise::config::Config;
use hostwise::pipeline::dns::StaticResolver;
use hostwise::store::{store_files, WarcReader};

const HOSTS: usize = 4;
const PAGES: usize = 6;

struct Web {
    addr: SocketAddr,
    hits: Arc<Mutex<HashMap<String, usize>>>,
    stop: Arc<AtomicBool>,
}

fn page(host: usize, page: usize) -> String {
    let mut body = String::from("<html><body>");
    body.push_str(&format!("<p>host {host} page {page}</p>"));
    if page + 1 < PAGES {
        body.push_str(&format!("<a href=\"/p{}\">next</a>", page + 1));
    }
    body.push_str(&format!("<a href=\"http://h{}.test/p0\">other</a>", (host + 1) % HOSTS));
    body.push_str("<a href=\"/private/x\">hidden</a>");
    body.push_str("</body></html>");
    body
}

fn respond(target: &str) -> (u16, String, &'static str) {
    let rest = target.strip_prefix("http://").unwrap_or(target);
    let (authority, path) = rest.split_at(rest.find('/').unwrap_or(rest.len()));
    let host: usize = authority
        .strip_prefix('h')
        .and_then(|h| h.strip_suffix(".test"))
        .and_then(|h| h.parse().ok())
        .unwrap_or(usize::MAX);
    if path == "/robots.txt" {
        return (200, "User-agent: *\nDisallow: /private/\n".into(), "text/plain");
    }
    match path.strip_prefix("/p").and_then(|p| p.parse::<usize>().ok()) {
        Some(p) if host < HOSTS && p < PAGES => (200, page(host, p), "text/html"),
        _ => (404, "missing".into(), "text/plain"),
    }
}

fn serve() -> Web {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let addr = listener.local_addr().unwrap();
    let hits: Arc<Mutex<HashMap<String, usize>>> = Arc::default();
    let stop = Arc::new(AtomicBool::new(false));
    let (h, s) = (hits.clone(), stop.clone());
    std::thread::spawn(move || {
        while !s.load(Ordering::Relaxed) {
            let Ok((stream, _)) = listener.accept() else {
                std::thread::sleep(Duration::from_millis(2));
                continue;
            };
            stream.set_nonblocking(false).unwrap();
            let hits = h.clone();
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut out = stream;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    let target = line.split_whitespace().nth(1).unwrap_or("").to_string();
                    loop {
                        let mut header = String::new();
                        if reader.read_line(&mut header).unwrap_or(0) == 0 {
                            return;
                        }
                        if header == "\r\n" {
                            break;
                        }
                    }
                    *hits.lock().entry(target.clone()).or_default() += 1;
                    let (status, body, ct) = respond(&target);
                    let head = format!(
                        "HTTP/1.1 {status} X\r\nContent-Type: {ct}\r\nContent-Length: {}\r\n\r\n",
                        body.len()
                    );
                    if out.write_all(head.as_bytes()).is_err() || out.write_all(body.as_bytes()).is_err() {
                        return;
                    }
                }
            });
        }
    });
    Web { addr, hits, stop }
}

fn config(dir: &std::path::Path, proxy: SocketAddr) -> Config {
    let text = format!(
        r#"
        [agent]
        data_dir = "{}"
        seeds = ["http://h0.test/p0"]
        [sieve]
        bytes = 4096
        durable = false
        [workbench]
        bytes = 1048576
        host_delay_ms = 20
        ip_delay_ms = 0
        [fetch]
        workers = 4
        proxy = "{proxy}"
        io_timeout_ms = 2000
        [parse]
        workers = 1
        url_cache = 4096
        expected_archetypes = 10000
        [dns]
        workers = 1
        "#,
        dir.display()
    );
    Config::from_toml(&text).unwrap()
}

fn wait_until(deadline: Duration, mut done: impl FnMut() -> bool) -> bool {
    let start = Instant::now();
    while start.elapsed() < deadline {
        if done() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    false
}

#[test]
fn crawls_every_reachable_page_once() {
    let web = serve();
    let dir = tempfile::tempdir().unwrap();
    let options = AgentOptions {
        resolver: Arc::new(StaticResolver::from_fn(|_| Some("127.0.0.1".parse().unwrap()))),
        trace: None,
    };
    let agent = Agent::start(config(dir.path(), web.addr), options).unwrap();
    let expected = HOSTS * PAGES;
    let fetched = || agent.pipeline_stats().fetched.load(Ordering::Relaxed) as usize;
    assert!(
        wait_until(Duration::from_secs(30), || fetched() >= expected && agent.is_idle()),
        "fetched {} of {expected}; {:?}",
        fetched(),
        agent.metrics()
    );
    let metrics: HashMap<String, u64> = agent.metrics().into_iter().collect();
    agent.stop().unwrap();
    web.stop.store(true, Ordering::Relaxed);

    let hits = web.hits.lock();
    for h in 0..HOSTS {
        assert_eq!(hits.get(&format!("http://h{h}.test/robots.txt")), Some(&1));
        for p in 0..PAGES {
            assert_eq!(hits.get(&format!("http://h{h}.test/p{p}")), Some(&1), "h{h} p{p}");
        }
        assert_eq!(hits.get(&format!("http://h{h}.test/private/x")), None);
    }
    assert_eq!(metrics["fetched"], expected as u64);
    assert_eq!(metrics["robots_blocked"], HOSTS as u64);

    // Pages differ only in digits, so there are two archetypes: pages with a
    // "next" link and last pages. The others are archived as revisits.
    let mut types: HashMap<String, usize> = HashMap::new();
    for file in store_files(&dir.path().join("store")).unwrap() {
        for record in WarcReader::open(&file).unwrap() {
            let record = record.unwrap();
            *types.entry(record.record_type().unwrap().to_string()).or_default() += 1;
        }
    }
    assert_eq!(types.get("response"), Some(&2));
    assert_eq!(types.get("revisit"), Some(&(expected - 2)));
    assert_eq!(metrics["duplicates"], expected as u64 - 2);
}
