//! Acquire traces of the workbench compared against a brute-force simulator
//! of the two-level politeness rules.

use std::collections::{BTreeMap, HashMap};
use std::net::{IpAddr, Ipv4Addr};
use std::sync::Arc;

use hostwise::workbench::{Released, VisitState, Workbench};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[derive(Clone)]
struct HostSpec {
    name: String,
    ip: u8,
    urls: usize,
}

/// Scheduling interface the driver needs.
trait Scheduler {
    /// Earliest instant some host becomes ready, if any host is schedulable.
    fn next_ready(&mut self, now: u64) -> Option<u64>;
    fn acquire(&mut self, now: u64) -> Option<String>;
    fn release(&mut self, host: &str, end: u64);
}

struct Brute {
    hosts: BTreeMap<String, (u8, usize, u64, bool)>, // ip, urls left, next fetch, leased
    ips: HashMap<u8, (u64, bool)>,                    // next fetch, taken
    host_delay: u64,
    ip_delay: u64,
}

impl Brute {
    fn best(&self) -> Option<(u64, String)> {
        let mut best: Option<(u64, String)> = None;
        for (&ip, &(ip_next, taken)) in &self.ips {
            if taken {
                continue;
            }
            let top = self
                .hosts
                .iter()
                .filter(|(_, h)| h.0 == ip && h.1 > 0 && !h.3)
                .map(|(name, h)| (h.2, name.clone()))
                .min();
            if let Some((host_next, name)) = top {
                let cand = (ip_next.max(host_next), name);
                if best.as_ref().is_none_or(|b| cand < *b) {
                    best = Some(cand);
                }
            }
        }
        best
    }
}

impl Scheduler for Brute {
    fn next_ready(&mut self, _: u64) -> Option<u64> {
        self.best().map(|b| b.0)
    }

    fn acquire(&mut self, now: u64) -> Option<String> {
        let (prio, name) = self.best()?;
        if prio > now {
            return None;
        }
        let h = self.hosts.get_mut(&name).unwrap();
        h.1 -= 1;
        h.3 = true;
        self.ips.get_mut(&h.0).unwrap().1 = true;
        Some(name)
    }

    fn release(&mut self, host: &str, end: u64) {
        let h = self.hosts.get_mut(host).unwrap();
        h.2 = end + self.host_delay;
        h.3 = false;
        let ip = self.ips.get_mut(&h.0).unwrap();
        ip.0 = end + self.ip_delay;
        ip.1 = false;
    }
}

struct Real {
    wb: Workbench,
    leases: HashMap<String, hostwise::workbench::Lease>,
    host_delay: u64,
    ip_delay: u64,
}

impl Scheduler for Real {
    fn next_ready(&mut self, now: u64) -> Option<u64> {
        self.wb.peek_delay(now).ok().map(|d| now + d)
    }

    fn acquire(&mut self, now: u64) -> Option<String> {
        let lease = self.wb.acquire(now).ok()?;
        lease.state.pop_url().expect("acquired state has a URL");
        let name = String::from_utf8(lease.state.scheme_authority()["http://".len()..].to_vec()).unwrap();
        self.leases.insert(name.clone(), lease);
        Some(name)
    }

    fn release(&mut self, host: &str, end: u64) {
        let lease = self.leases.remove(host).unwrap();
        match self.wb.release(lease, end, self.host_delay, self.ip_delay) {
            Released::Requeued | Released::Parked => {}
            other => panic!("unexpected release outcome {other:?}"),
        }
        self.wb.audit().unwrap();
    }
}

/// Runs a discrete-event simulation with unlimited fetchers; fetch durations
/// are a function of (host, fetch index) so both schedulers see the same ones.
fn run(sched: &mut dyn Scheduler, durations: &HashMap<String, Vec<u64>>) -> Vec<(u64, String)> {
    let mut trace = Vec::new();
    let mut in_flight: BTreeMap<(u64, String), ()> = BTreeMap::new();
    let mut count: HashMap<String, usize> = HashMap::new();
    let mut now = 0u64;
    loop {
        // Releases due now happen before acquisitions.
        while let Some(((end, host), _)) = in_flight.first_key_value().map(|(k, v)| (k.clone(), *v)) {
            if end > now {
                break;
            }
            in_flight.remove(&(end, host.clone()));
            sched.release(&host, end);
        }
        while let Some(host) = sched.acquire(now) {
            let i = count.entry(host.clone()).or_default();
            let d = durations[&host][*i];
            *i += 1;
            in_flight.insert((now + d, host.clone()), ());
            trace.push((now, host));
        }
        let next_release = in_flight.keys().next().map(|k| k.0);
        let next_ready = sched.next_ready(now);
        match next_release.into_iter().chain(next_ready).min() {
            // Zero-length fetches end at the instant they started.
            Some(next) if next == now && next_release == Some(now) => {}
            Some(next) => {
                assert!(next > now, "scheduler reported a ready host it would not yield");
                now = next;
            }
            None => break,
        }
    }
    trace
}

fn scenario(seed: u64, hosts: usize, ips: u8, host_delay: u64, ip_delay: u64) {
    let mut rng = StdRng::seed_from_u64(seed);
    let specs: Vec<HostSpec> = (0..hosts)
        .map(|i| HostSpec {
            name: format!("h{i:03}"),
            ip: rng.random_range(0..ips),
            urls: rng.random_range(1..6),
        })
        .collect();
    let durations: HashMap<String, Vec<u64>> = specs
        .iter()
        .map(|h| (h.name.clone(), (0..h.urls).map(|_| rng.random_range(0..300)).collect()))
        .collect();

    let mut brute = Brute {
        hosts: specs
            .iter()
            .map(|h| (h.name.clone(), (h.ip, h.urls, 0, false)))
            .collect(),
        ips: specs.iter().map(|h| (h.ip, (0, false))).collect(),
        host_delay,
        ip_delay,
    };
    let wb = Workbench::new(1 << 30);
    for h in &specs {
        let state: Arc<VisitState> = wb.new_visit_state(format!("http://{}", h.name).as_bytes());
        for u in 0..h.urls {
            wb.add_url(&state, format!("/{u}").as_bytes()).unwrap();
        }
        wb.add(state, IpAddr::V4(Ipv4Addr::new(10, 0, 0, h.ip)));
    }
    let mut real = Real {
        wb,
        leases: HashMap::new(),
        host_delay,
        ip_delay,
    };
    let expected = run(&mut brute, &durations);
    let got = run(&mut real, &durations);
    assert_eq!(got.len(), specs.iter().map(|h| h.urls).sum::<usize>());
    assert_eq!(got, expected);

    // Politeness on the trace itself.
    let ip_of: HashMap<&str, u8> = specs.iter().map(|h| (h.name.as_str(), h.ip)).collect();
    let mut last_host: HashMap<&str, u64> = HashMap::new();
    let mut last_ip: HashMap<u8, u64> = HashMap::new();
    for (t, h) in &got {
        if let Some(prev) = last_host.insert(h, *t) {
            assert!(t - prev >= host_delay, "host gap violated for {h}");
        }
        if let Some(prev) = last_ip.insert(ip_of[h.as_str()], *t) {
            assert!(t - prev >= ip_delay, "ip gap violated for {h}");
        }
    }
}

#[test]
fn two_hosts_one_ip_trace() {
    let wb = Workbench::new(1 << 20);
    for name in ["h1", "h2"] {
        let s = wb.new_visit_state(format!("http://{name}").as_bytes());
        wb.add_url(&s, b"/a").unwrap();
        wb.add_url(&s, b"/b").unwrap();
        wb.add(s, IpAddr::V4(Ipv4Addr::LOCALHOST));
    }
    let mut real = Real {
        wb,
        leases: HashMap::new(),
        host_delay: 4000,
        ip_delay: 2000,
    };
    let durations = HashMap::from([("h1".to_string(), vec![0, 0]), ("h2".to_string(), vec![0, 0])]);
    let trace = run(&mut real, &durations);
    let t: Vec<(u64, &str)> = trace.iter().map(|(t, h)| (*t, h.as_str())).collect();
    assert_eq!(t, [(0, "h1"), (2000, "h2"), (4000, "h1"), (6000, "h2")]);
}

#[test]
fn hundred_hosts_ten_ips() {
    scenario(7, 100, 10, 400, 100);
}

#[test]
fn host_delay_shorter_than_ip_delay() {
    scenario(11, 60, 4, 50, 300);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn random_scenarios_match_simulator(
        seed in any::<u64>(),
        hosts in 1usize..40,
        ips in 1u8..8,
        host_delay in 0u64..500,
        ip_delay in 0u64..500,
    ) {
        scenario(seed, hosts, ips, host_delay, ip_delay);
    }
}
