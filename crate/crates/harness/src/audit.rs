//! Server-side request logs and the checks run on them.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};

/// One request as seen by the synthetic web.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    /// Arrival time, milliseconds on the process clock.
    pub at_ms: u64,
    pub host: u32,
    /// Index of the host's fake address.
    pub ip: u32,
    pub path: String,
    /// User-Agent of the requester.
    pub agent: String,
}

/// Writes a log as tab-separated lines: time, host, ip, agent, path.
pub fn write_trace(entries: &[LogEntry], mut out: impl Write) -> io::Result<()> {
    for e in entries {
        writeln!(out, "{}\t{}\t{}\t{}\t{}", e.at_ms, e.host, e.ip, e.agent.replace('\t', " "), e.path)?;
    }
    out.flush()
}

pub fn read_trace(input: impl BufRead) -> io::Result<Vec<LogEntry>> {
    let bad = |n: usize, what: &str| io::Error::new(io::ErrorKind::InvalidData, format!("line {n}: {what}"));
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut f = line.splitn(5, '\t');
        let mut num = |what| -> io::Result<u64> {
            f.next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(i + 1, what))
        };
        let at_ms = num("time")?;
        let host = num("host")? as u32;
        let ip = num("ip")? as u32;
        let agent = f.next().ok_or_else(|| bad(i + 1, "agent"))?.to_string();
        let path = f.next().ok_or_else(|| bad(i + 1, "path"))?.to_string();
        out.push(LogEntry {
            at_ms,
            host,
            ip,
            path,
            agent,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    /// Host or address index.
    pub key: u32,
    pub previous_ms: u64,
    pub at_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PolitenessReport {
    pub requests: usize,
    pub hosts: usize,
    pub ips: usize,
    pub host_violations: Vec<Violation>,
    pub ip_violations: Vec<Violation>,
    /// Smallest observed gap between two requests to one host, if any host
    /// was contacted twice.
    pub min_host_gap: Option<u64>,
    pub min_ip_gap: Option<u64>,
}

impl PolitenessReport {
    pub fn is_clean(&self) -> bool {
        self.host_violations.is_empty() && self.ip_violations.is_empty()
    }
}

fn gaps(
    entries: &[LogEntry],
    key: impl Fn(&LogEntry) -> u32,
    min_gap: u64,
) -> (usize, Vec<Violation>, Option<u64>) {
    let mut last: HashMap<u32, u64> = HashMap::new();
    let mut violations = Vec::new();
    let mut smallest: Option<u64> = None;
    let mut sorted: Vec<&LogEntry> = entries.iter().collect();
    sorted.sort_by_key(|e| e.at_ms);
    for e in sorted {
        let k = key(e);
        if let Some(&prev) = last.get(&k) {
            let gap = e.at_ms - prev;
            smallest = Some(smallest.map_or(gap, |s| s.min(gap)));
            if gap < min_gap {
                violations.push(Violation {
                    key: k,
                    previous_ms: prev,
                    at_ms: e.at_ms,
                });
            }
        }
        last.insert(k, e.at_ms);
    }
    (last.len(), violations, smallest)
}

/// Checks that consecutive requests to a host are at least `host_delay_ms`
/// apart, and consecutive requests to an address at least `ip_delay_ms`.
pub fn check_politeness(entries: &[LogEntry], host_delay_ms: u64, ip_delay_ms: u64) -> PolitenessReport {
    let (hosts, host_violations, min_host_gap) = gaps(entries, |e| e.host, host_delay_ms);
    let (ips, ip_violations, min_ip_gap) = gaps(entries, |e| e.ip, ip_delay_ms);
    PolitenessReport {
        requests: entries.len(),
        hosts,
        ips,
        host_violations,
        ip_violations,
        min_host_gap,
        min_ip_gap,
    }
}
