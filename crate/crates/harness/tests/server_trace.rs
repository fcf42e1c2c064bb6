use std::io::{Read, Write};
use std::net::TcpStream;

use hostwise_harness::audit::{check_politeness, read_trace, write_trace};
use hostwise_harness::server::{ServerOptions, SynthServer};
use hostwise_harness::synth::{Outcome, SyntheticWeb, SyntheticWebSpec};

fn get(server: &SynthServer, host: &str, path: &str) -> Vec<u8> {
    let mut s = TcpStream::connect(server.addr()).unwrap();
    write!(
        s,
        "GET http://{host}{path} HTTP/1.1\r\nHost: {host}\r\nUser-Agent: probe\r\nConnection: close\r\n\r\n"
    )
    .unwrap();
    let mut out = Vec::new();
    s.read_to_end(&mut out).unwrap();
    let split = out.windows(4).position(|w| w == b"\r\n\r\n").expect("header end") + 4;
    out.split_off(split)
}

fn small_web() -> SyntheticWeb {
    SyntheticWeb::new(SyntheticWebSpec {
        hosts: 8,
        ips: 2,
        pages_per_host: [5, 5],
        ..Default::default()
    })
}

#[test]
fn served_pages_match_the_generator() {
    let web = small_web();
    let server = SynthServer::start(web.clone(), ServerOptions::default()).unwrap();
    let host = SyntheticWeb::host_name(3);
    for path in ["/", "/robots.txt"] {
        let Outcome::Page { body, .. } = web.respond(3, path) else {
            panic!("no errors configured");
        };
        assert_eq!(get(&server, &host, path), body, "{path}");
        assert_eq!(get(&server, &host, path), body, "{path} served twice");
    }
}

#[test]
fn log_records_requests_and_audit_flags_bursts() {
    let web = small_web();
    let server = SynthServer::start(web.clone(), ServerOptions::default()).unwrap();
    let h1 = SyntheticWeb::host_name(1);
    let h3 = SyntheticWeb::host_name(3);
    get(&server, &h1, "/");
    get(&server, &h1, "/");
    get(&server, &h3, "/");

    let log = server.drain_log();
    assert_eq!(log.len(), 3);
    assert!(server.log().is_empty());
    assert!(log.iter().all(|e| e.agent == "probe" && e.path == "/"));
    assert_eq!(log[0].host, 1);
    assert_eq!(log[2].ip, web.ip_index(3));

    let mut trace = Vec::new();
    write_trace(&log, &mut trace).unwrap();
    let back = read_trace(&trace[..]).unwrap();
    assert_eq!(back.len(), 3);

    // Hosts 1 and 3 share an address, and host 1 was hit twice in a row.
    let report = check_politeness(&back, 60_000, 60_000);
    assert_eq!(report.requests, 3);
    assert_eq!(report.hosts, 2);
    assert_eq!(report.ips, 1);
    assert_eq!(report.host_violations.len(), 1);
    assert_eq!(report.ip_violations.len(), 2);
    assert!(!report.is_clean());
    assert!(check_politeness(&back, 0, 0).is_clean());
}
