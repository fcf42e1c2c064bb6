//! In-memory scheduler of hosts.
//!
//! Visit states (one per host) are grouped into entries (one per IP). Inside
//! an entry, visit states are ordered by their next-fetch instant; entries are
//! ordered by the later of their own next-fetch instant and that of their top
//! visit state. Hence a host can be contacted without violating host or IP
//! politeness iff the top entry's priority is not in the future.
//!
//! Acquiring a host detaches its visit state, and marks its entry as taken,
//! until the lease is released: no other host on the same IP can be acquired
//! meanwhile.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::net::IpAddr;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, Mutex, MutexGuard};
use thiserror::Error;

use crate::pipeline::robots::RobotsRules;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorkbenchError {
    #[error("workbench is empty")]
    Empty,
    #[error("no host is ready yet")]
    NotReady,
    #[error("workbench byte budget exceeded")]
    BudgetExceeded,
}

/// Shared counter of path bytes held in visit-state queues.
#[derive(Debug)]
pub struct ByteBudget {
    used: AtomicU64,
    limit: AtomicU64,
}

impl ByteBudget {
    pub fn new(limit: u64) -> Self {
        ByteBudget {
            used: AtomicU64::new(0),
            limit: AtomicU64::new(limit),
        }
    }

    pub fn used(&self) -> u64 {
        self.used.load(AtomicOrdering::Relaxed)
    }

    pub fn limit(&self) -> u64 {
        self.limit.load(AtomicOrdering::Relaxed)
    }

    pub fn set_limit(&self, limit: u64) {
        self.limit.store(limit, AtomicOrdering::Relaxed);
    }

    pub fn available(&self) -> u64 {
        self.limit().saturating_sub(self.used())
    }

    /// Reserves `n` bytes if they fit.
    pub fn try_reserve(&self, n: u64) -> bool {
        let limit = self.limit();
        self.used
            .fetch_update(AtomicOrdering::AcqRel, AtomicOrdering::Relaxed, |used| {
                (used + n <= limit).then_some(used + n)
            })
            .is_ok()
    }

    /// Reserves `n` bytes even past the limit.
    pub fn force_reserve(&self, n: u64) {
        self.used.fetch_add(n, AtomicOrdering::AcqRel);
    }

    fn release(&self, n: u64) {
        self.used.fetch_sub(n, AtomicOrdering::AcqRel);
    }
}

/// Where a visit state currently lives. Changed only under the workbench lock.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    /// Waiting for its host name to be resolved.
    Resolving,
    /// Inside an entry, schedulable.
    Queued,
    /// Leased to the fetching side (todo queue, fetch worker or done queue).
    Leased,
    /// Handed to the distributor for a refill from disk.
    Refilling,
    /// Nothing to fetch; kept aside until a new URL arrives.
    Parked,
    /// Discarded; URLs for this host are dropped.
    Retired,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitError {
    pub message: String,
    pub consecutive: u32,
}

#[derive(Debug)]
pub struct VisitData {
    pub fifo: VecDeque<Box<[u8]>>,
    pub next_fetch: u64,
    /// URLs of this host held by the virtualizer.
    pub on_disk: u64,
    pub last_error: Option<VisitError>,
    /// `None` until robots.txt has been fetched (or given up on).
    pub robots: Option<Arc<RobotsRules>>,
    pub fetched: u64,
    pub ip: Option<IpAddr>,
    pub location: Location,
}

/// Per-host crawl state.
#[derive(Debug)]
pub struct VisitState {
    scheme_authority: Arc<[u8]>,
    budget: Arc<ByteBudget>,
    data: Mutex<VisitData>,
}

impl VisitState {
    pub fn new(scheme_authority: &[u8], budget: Arc<ByteBudget>) -> Arc<VisitState> {
        Arc::new(VisitState {
            scheme_authority: scheme_authority.into(),
            budget,
            data: Mutex::new(VisitData {
                fifo: VecDeque::new(),
                next_fetch: 0,
                on_disk: 0,
                last_error: None,
                robots: None,
                fetched: 0,
                ip: None,
                location: Location::Resolving,
            }),
        })
    }

    pub fn scheme_authority(&self) -> &[u8] {
        &self.scheme_authority
    }

    pub fn lock(&self) -> MutexGuard<'_, VisitData> {
        self.data.lock()
    }

    /// Takes the next path to fetch.
    pub fn pop_url(&self) -> Option<Box<[u8]>> {
        let pq = self.data.lock().fifo.pop_front()?;
        self.budget.release(pq.len() as u64);
        Some(pq)
    }

    /// Puts back a path taken with [`pop_url`](Self::pop_url), for a retry.
    pub fn push_front_url(&self, pq: Box<[u8]>) {
        self.budget.force_reserve(pq.len() as u64);
        self.data.lock().fifo.push_front(pq);
    }

    /// Drops every in-memory URL of this host.
    pub fn clear_urls(&self) -> usize {
        let mut data = self.data.lock();
        let bytes: usize = data.fifo.iter().map(|p| p.len()).sum();
        self.budget.release(bytes as u64);
        let n = data.fifo.len();
        data.fifo.clear();
        n
    }

    pub fn queued(&self) -> usize {
        self.data.lock().fifo.len()
    }

    pub fn location(&self) -> Location {
        self.data.lock().location
    }
}

/// Exclusive right to fetch from one host, and to contact its IP.
#[derive(Debug)]
pub struct Lease {
    pub ip: IpAddr,
    pub state: Arc<VisitState>,
    pub acquired_at: u64,
}

/// What happened to a visit state on release.
#[derive(Debug)]
pub enum Released {
    Requeued,
    Parked,
    /// The in-memory queue is empty but URLs wait on disk: the caller must
    /// refill the state and hand it back with [`Workbench::return_refilled`].
    NeedsRefill(Arc<VisitState>),
    Retired,
}

/// Per-host and per-IP delays.
pub trait Politeness: Send + Sync {
    fn host_delay_ms(&self, scheme_authority: &[u8]) -> u64;
    fn ip_delay_ms(&self, ip: IpAddr) -> u64;
}

/// The same delays for every host and IP; tunable at runtime.
#[derive(Debug)]
pub struct FixedDelays {
    host_ms: AtomicU64,
    ip_ms: AtomicU64,
}

impl FixedDelays {
    pub fn new(host_ms: u64, ip_ms: u64) -> Self {
        FixedDelays {
            host_ms: AtomicU64::new(host_ms),
            ip_ms: AtomicU64::new(ip_ms),
        }
    }

    pub fn host_ms(&self) -> u64 {
        self.host_ms.load(AtomicOrdering::Relaxed)
    }

    pub fn ip_ms(&self) -> u64 {
        self.ip_ms.load(AtomicOrdering::Relaxed)
    }

    pub fn set_host_ms(&self, ms: u64) {
        self.host_ms.store(ms, AtomicOrdering::Relaxed);
    }

    pub fn set_ip_ms(&self, ms: u64) {
        self.ip_ms.store(ms, AtomicOrdering::Relaxed);
    }
}

impl Politeness for FixedDelays {
    fn host_delay_ms(&self, _: &[u8]) -> u64 {
        self.host_ms.load(AtomicOrdering::Relaxed)
    }

    fn ip_delay_ms(&self, _: IpAddr) -> u64 {
        self.ip_ms.load(AtomicOrdering::Relaxed)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WorkbenchStats {
    pub entries: usize,
    /// Visit states waiting in entries.
    pub queued: usize,
    pub leased: usize,
    pub refilling: usize,
    pub parked: usize,
    pub bytes: u64,
}

impl WorkbenchStats {
    /// Hosts currently under visit: schedulable, being fetched, or being
    /// refilled.
    pub fn active(&self) -> usize {
        self.queued + self.leased + self.refilling
    }
}

struct StateKey {
    next_fetch: u64,
    state: Arc<VisitState>,
}

impl StateKey {
    fn key(&self) -> (u64, &[u8]) {
        (self.next_fetch, &self.state.scheme_authority)
    }
}

impl PartialEq for StateKey {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for StateKey {}

impl PartialOrd for StateKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for StateKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

struct Entry {
    next_fetch_ip: u64,
    states: BinaryHeap<Reverse<StateKey>>,
    taken: bool,
    version: u64,
}

impl Entry {
    fn priority(&self) -> Option<(u64, Arc<[u8]>)> {
        let Reverse(top) = self.states.peek()?;
        Some((
            self.next_fetch_ip.max(top.next_fetch),
            top.state.scheme_authority.clone(),
        ))
    }
}

/// (priority, host of the top state, ip, entry version)
type HeapItem = Reverse<(u64, Arc<[u8]>, IpAddr, u64)>;

struct Inner {
    entries: HashMap<IpAddr, Entry>,
    heap: BinaryHeap<HeapItem>,
    parked: usize,
    queued: usize,
    leased: usize,
    refilling: usize,
    next_version: u64,
}

impl Inner {
    /// Puts the entry for `ip` back in the heap if it is schedulable.
    fn schedule(&mut self, ip: IpAddr) {
        self.next_version += 1;
        let version = self.next_version;
        let entry = self.entries.get_mut(&ip).expect("entry exists");
        entry.version = version;
        if entry.taken {
            return;
        }
        if let Some((priority, host)) = entry.priority() {
            self.heap.push(Reverse((priority, host, ip, version)));
        }
    }

    fn is_live(&self, item: &HeapItem) -> bool {
        let Reverse((_, _, ip, version)) = item;
        self.entries
            .get(ip)
            .is_some_and(|e| e.version == *version && !e.taken)
    }

    fn top_priority(&mut self) -> Option<u64> {
        while let Some(top) = self.heap.peek() {
            if self.is_live(top) {
                return Some(top.0 .0);
            }
            self.heap.pop();
        }
        None
    }

    fn enqueue_state(&mut self, ip: IpAddr, state: Arc<VisitState>, data: &mut VisitData) {
        data.location = Location::Queued;
        data.ip = Some(ip);
        let next_fetch = data.next_fetch;
        let entry = self.entries.entry(ip).or_insert_with(|| Entry {
            next_fetch_ip: 0,
            states: BinaryHeap::new(),
            taken: false,
            version: 0,
        });
        entry.states.push(Reverse(StateKey { next_fetch, state }));
        self.queued += 1;
    }
}

pub struct Workbench {
    inner: Mutex<Inner>,
    ready: Condvar,
    budget: Arc<ByteBudget>,
}

impl Workbench {
    pub fn new(budget_bytes: u64) -> Self {
        Workbench {
            inner: Mutex::new(Inner {
                entries: HashMap::new(),
                heap: BinaryHeap::new(),
                parked: 0,
                queued: 0,
                leased: 0,
                refilling: 0,
                next_version: 0,
            }),
            ready: Condvar::new(),
            budget: Arc::new(ByteBudget::new(budget_bytes)),
        }
    }

    pub fn budget(&self) -> &Arc<ByteBudget> {
        &self.budget
    }

    pub fn new_visit_state(&self, scheme_authority: &[u8]) -> Arc<VisitState> {
        VisitState::new(scheme_authority, self.budget.clone())
    }

    /// Adds a visit state whose host resolved to `ip`.
    pub fn add(&self, state: Arc<VisitState>, ip: IpAddr) -> Released {
        let mut inner = self.inner.lock();
        let mut data = state.data.lock();
        match data.location {
            Location::Resolving => {}
            Location::Retired => return Released::Retired,
            other => panic!("visit state added twice (currently {other:?})"),
        }
        data.ip = Some(ip);
        if data.fifo.is_empty() {
            if data.on_disk > 0 {
                data.location = Location::Refilling;
                inner.refilling += 1;
                drop(data);
                return Released::NeedsRefill(state);
            }
            data.location = Location::Parked;
            inner.parked += 1;
            return Released::Parked;
        }
        inner.enqueue_state(ip, state.clone(), &mut data);
        drop(data);
        inner.schedule(ip);
        self.ready.notify_all();
        Released::Requeued
    }

    /// Moves a parked state whose URLs went to disk into the refilling
    /// state. Returns false if the state was not parked.
    pub fn request_refill(&self, state: &Arc<VisitState>) -> bool {
        let mut inner = self.inner.lock();
        let mut data = state.data.lock();
        if data.location != Location::Parked || data.on_disk == 0 {
            return false;
        }
        data.location = Location::Refilling;
        inner.parked -= 1;
        inner.refilling += 1;
        true
    }

    /// Hands back a refilling state that could not be refilled.
    pub fn park_refilling(&self, state: &Arc<VisitState>) {
        let mut inner = self.inner.lock();
        let mut data = state.data.lock();
        if data.location == Location::Refilling && data.on_disk == 0 && data.fifo.is_empty() {
            data.location = Location::Parked;
            inner.refilling -= 1;
            inner.parked += 1;
        }
    }

    /// Appends a path to the in-memory queue of `state`, waking it if it was
    /// parked.
    pub fn add_url(
        &self,
        state: &Arc<VisitState>,
        path_query: &[u8],
    ) -> Result<(), WorkbenchError> {
        if !self.budget.try_reserve(path_query.len() as u64) {
            return Err(WorkbenchError::BudgetExceeded);
        }
        let mut inner = self.inner.lock();
        let mut data = state.data.lock();
        if data.location == Location::Retired {
            self.budget.release(path_query.len() as u64);
            return Ok(());
        }
        data.fifo.push_back(path_query.into());
        if data.location == Location::Parked {
            inner.parked -= 1;
            let ip = data.ip.expect("parked states are resolved");
            inner.enqueue_state(ip, state.clone(), &mut data);
            drop(data);
            inner.schedule(ip);
            self.ready.notify_all();
        }
        Ok(())
    }

    /// Appends paths read back from disk to a state returned by
    /// [`release`](Self::release). The caller has already reserved their
    /// bytes with [`ByteBudget::try_reserve`].
    pub fn return_refilled(&self, state: Arc<VisitState>, paths: Vec<Box<[u8]>>) {
        let mut inner = self.inner.lock();
        let mut data = state.data.lock();
        assert_eq!(data.location, Location::Refilling);
        inner.refilling -= 1;
        data.fifo.extend(paths);
        let ip = data.ip.expect("refilled states are resolved");
        if data.fifo.is_empty() {
            if data.on_disk > 0 {
                // Nothing fit in the budget: stays with the distributor.
                inner.refilling += 1;
                return;
            }
            data.location = Location::Parked;
            inner.parked += 1;
            return;
        }
        inner.enqueue_state(ip, state.clone(), &mut data);
        drop(data);
        inner.schedule(ip);
        self.ready.notify_all();
    }

    /// Marks a state so that it is dropped at its next release; its queued
    /// URLs are discarded now.
    pub fn retire(&self, state: &Arc<VisitState>) {
        let mut inner = self.inner.lock();
        state.clear_urls();
        let mut data = state.data.lock();
        match data.location {
            Location::Parked => inner.parked -= 1,
            Location::Refilling => inner.refilling -= 1,
            _ => {}
        }
        // Queued states are skipped (and dropped) when they reach the top.
        data.location = Location::Retired;
    }

    /// Time until some host is ready, 0 if one is ready now.
    pub fn peek_delay(&self, now: u64) -> Result<u64, WorkbenchError> {
        let mut inner = self.inner.lock();
        inner
            .top_priority()
            .map(|p| p.saturating_sub(now))
            .ok_or(WorkbenchError::Empty)
    }

    pub fn acquire(&self, now: u64) -> Result<Lease, WorkbenchError> {
        let mut inner = self.inner.lock();
        Self::acquire_locked(&mut inner, now)
    }

    fn acquire_locked(inner: &mut Inner, now: u64) -> Result<Lease, WorkbenchError> {
        loop {
            let priority = inner.top_priority().ok_or(WorkbenchError::Empty)?;
            if priority > now {
                return Err(WorkbenchError::NotReady);
            }
            let Reverse((_, _, ip, _)) = inner.heap.pop().expect("live top");
            let entry = inner.entries.get_mut(&ip).expect("entry exists");
            let Reverse(StateKey { state, .. }) = entry.states.pop().expect("non-empty entry");
            inner.queued -= 1;
            let mut data = state.data.lock();
            if data.location == Location::Retired {
                drop(data);
                inner.schedule(ip);
                continue;
            }
            data.location = Location::Leased;
            drop(data);
            inner.entries.get_mut(&ip).expect("entry exists").taken = true;
            inner.leased += 1;
            inner.schedule(ip);
            return Ok(Lease {
                ip,
                state,
                acquired_at: now,
            });
        }
    }

    /// Waits up to `timeout` for a ready host.
    pub fn acquire_timeout(&self, now: impl Fn() -> u64, timeout: Duration) -> Option<Lease> {
        let deadline = std::time::Instant::now() + timeout;
        let mut inner = self.inner.lock();
        loop {
            match Self::acquire_locked(&mut inner, now()) {
                Ok(lease) => return Some(lease),
                Err(e) => {
                    let left = deadline.saturating_duration_since(std::time::Instant::now());
                    if left.is_zero() {
                        return None;
                    }
                    let wait = match e {
                        WorkbenchError::NotReady => {
                            let delay = inner.top_priority().unwrap_or(0).saturating_sub(now());
                            left.min(Duration::from_millis(delay.max(1)))
                        }
                        _ => left,
                    };
                    self.ready.wait_for(&mut inner, wait);
                }
            }
        }
    }

    /// Gives back a lease. The next contact with the host is allowed at
    /// `fetch_end + host_delay`, with the IP at `fetch_end + ip_delay`.
    pub fn release(&self, lease: Lease, fetch_end: u64, host_delay: u64, ip_delay: u64) -> Released {
        let Lease { ip, state, .. } = lease;
        let mut inner = self.inner.lock();
        inner.leased -= 1;
        {
            let entry = inner.entries.get_mut(&ip).expect("leased entry exists");
            debug_assert!(entry.taken);
            entry.taken = false;
            entry.next_fetch_ip = entry.next_fetch_ip.max(fetch_end + ip_delay);
        }
        let mut data = state.data.lock();
        data.next_fetch = data.next_fetch.max(fetch_end + host_delay);
        let outcome = if data.location == Location::Retired {
            Released::Retired
        } else if !data.fifo.is_empty() {
            inner.enqueue_state(ip, state.clone(), &mut data);
            Released::Requeued
        } else if data.on_disk > 0 {
            data.location = Location::Refilling;
            inner.refilling += 1;
            Released::NeedsRefill(state.clone())
        } else {
            data.location = Location::Parked;
            inner.parked += 1;
            Released::Parked
        };
        drop(data);
        inner.schedule(ip);
        self.ready.notify_all();
        outcome
    }

    pub fn stats(&self) -> WorkbenchStats {
        let inner = self.inner.lock();
        WorkbenchStats {
            entries: inner.entries.len(),
            queued: inner.queued,
            leased: inner.leased,
            refilling: inner.refilling,
            parked: inner.parked,
            bytes: self.budget.used(),
        }
    }

    /// Wakes threads blocked in [`acquire_timeout`](Self::acquire_timeout).
    pub fn wake(&self) {
        self.ready.notify_all();
    }

    /// Checks the structural invariants; returns a description of the first
    /// violation.
    pub fn audit(&self) -> Result<(), String> {
        let mut inner = self.inner.lock();
        let mut queued = 0;
        let mut bytes_in_heap = 0u64;
        let mut expected_top: Option<(u64, Arc<[u8]>, IpAddr)> = None;
        for (ip, entry) in &inner.entries {
            queued += entry.states.len();
            for Reverse(key) in entry.states.iter() {
                let data = key.state.data.lock();
                if data.location != Location::Queued && data.location != Location::Retired {
                    return Err(format!("state in entry {ip} is {:?}", data.location));
                }
                if data.ip != Some(*ip) {
                    return Err(format!("state in entry {ip} resolved to {:?}", data.ip));
                }
                if data.next_fetch != key.next_fetch {
                    return Err("stale next-fetch key".into());
                }
                bytes_in_heap += data.fifo.iter().map(|p| p.len() as u64).sum::<u64>();
            }
            if entry.taken {
                continue;
            }
            let min_state = entry.states.iter().map(|Reverse(k)| (k.next_fetch, k.state.scheme_authority.clone())).min();
            if let Some((host_next, host)) = min_state {
                let priority = entry.next_fetch_ip.max(host_next);
                if entry.priority().map(|p| p.0) != Some(priority) {
                    return Err(format!("entry {ip} priority incoherent"));
                }
                let candidate = (priority, host, *ip);
                if expected_top.as_ref().is_none_or(|t| (&candidate.0, &candidate.1) < (&t.0, &t.1)) {
                    expected_top = Some(candidate);
                }
            }
        }
        if queued != inner.queued {
            return Err(format!("queued counter {} but {} states in entries", inner.queued, queued));
        }
        if bytes_in_heap > self.budget.used() {
            return Err("byte budget under-counted".into());
        }
        let top = inner.top_priority();
        if top != expected_top.as_ref().map(|t| t.0) {
            return Err(format!("heap top {top:?}, expected {:?}", expected_top.map(|t| t.0)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::Ipv4Addr;

    fn ip(n: u8) -> IpAddr {
        IpAddr::V4(Ipv4Addr::new(10, 0, 0, n))
    }

    fn host(wb: &Workbench, name: &str, ip_addr: IpAddr, urls: &[&str]) -> Arc<VisitState> {
        let state = wb.new_visit_state(format!("http://{name}").as_bytes());
        for u in urls {
            wb.add_url(&state, u.as_bytes()).unwrap();
        }
        wb.add(state.clone(), ip_addr);
        state
    }

    #[test]
    fn peek_delay_reports_top_priority() {
        let wb = Workbench::new(1 << 20);
        assert_eq!(wb.peek_delay(0), Err(WorkbenchError::Empty));
        let a = host(&wb, "a", ip(1), &["/1", "/2"]);
        let b = host(&wb, "b", ip(2), &["/1", "/2"]);
        a.lock().next_fetch = 0;
        let now = 1000;
        let la = wb.acquire(now).unwrap();
        let lb = wb.acquire(now).unwrap();
        wb.release(la, now, 100, 0);
        wb.release(lb, now, 50, 0);
        assert_eq!(wb.peek_delay(now), Ok(50));
        assert_eq!(wb.peek_delay(now + 60), Ok(0));
        assert_eq!(wb.peek_delay(now + 200), Ok(0));
        drop(b);
        wb.audit().unwrap();
    }

    #[test]
    fn two_hosts_on_one_ip() {
        let wb = Workbench::new(1 << 20);
        host(&wb, "h1", ip(1), &["/a", "/b"]);
        host(&wb, "h2", ip(1), &["/a"]);
        let l1 = wb.acquire(0).unwrap();
        assert_eq!(l1.state.scheme_authority(), b"http://h1");
        // The IP is taken while h1 is leased.
        assert_eq!(wb.acquire(0).unwrap_err(), WorkbenchError::Empty);
        l1.state.pop_url();
        wb.release(l1, 0, 4000, 2000);
        assert_eq!(wb.acquire(1999).unwrap_err(), WorkbenchError::NotReady);
        let l2 = wb.acquire(2000).unwrap();
        assert_eq!(l2.state.scheme_authority(), b"http://h2");
        l2.state.pop_url();
        assert!(matches!(wb.release(l2, 2000, 4000, 2000), Released::Parked));
        assert_eq!(wb.peek_delay(2000), Ok(2000));
        let l3 = wb.acquire(4000).unwrap();
        assert_eq!(l3.state.scheme_authority(), b"http://h1");
        wb.audit().unwrap();
    }

    #[test]
    fn budget_is_enforced() {
        let wb = Workbench::new(10);
        let s = wb.new_visit_state(b"http://a");
        wb.add_url(&s, b"/12345").unwrap();
        assert_eq!(wb.add_url(&s, b"/12345"), Err(WorkbenchError::BudgetExceeded));
        wb.add_url(&s, b"/123").unwrap();
        assert_eq!(wb.budget().used(), 10);
        s.pop_url();
        assert_eq!(wb.budget().used(), 4);
    }

    #[test]
    fn parked_state_wakes_on_new_url() {
        let wb = Workbench::new(1 << 20);
        let s = host(&wb, "a", ip(1), &[]);
        assert_eq!(wb.stats().parked, 1);
        assert_eq!(wb.peek_delay(0), Err(WorkbenchError::Empty));
        wb.add_url(&s, b"/x").unwrap();
        assert_eq!(wb.stats().parked, 0);
        assert_eq!(wb.acquire(0).unwrap().state.scheme_authority(), b"http://a");
    }

    #[test]
    fn refill_cycle() {
        let wb = Workbench::new(1 << 20);
        let s = host(&wb, "a", ip(1), &["/1"]);
        s.lock().on_disk = 2;
        let lease = wb.acquire(0).unwrap();
        lease.state.pop_url();
        let Released::NeedsRefill(s2) = wb.release(lease, 10, 100, 100) else {
            panic!("expected refill");
        };
        assert_eq!(wb.stats().refilling, 1);
        assert_eq!(wb.stats().active(), 1);
        s2.lock().on_disk = 0;
        assert!(wb.budget().try_reserve(4));
        wb.return_refilled(s2, vec![b"/2".to_vec().into(), b"/3".to_vec().into()]);
        let lease = wb.acquire(110).unwrap();
        assert_eq!(lease.state.pop_url().as_deref(), Some(&b"/2"[..]));
        wb.audit().unwrap();
    }

    #[test]
    fn retired_state_is_dropped() {
        let wb = Workbench::new(1 << 20);
        let a = host(&wb, "a", ip(1), &["/1"]);
        host(&wb, "b", ip(1), &["/1"]);
        wb.retire(&a);
        let lease = wb.acquire(0).unwrap();
        assert_eq!(lease.state.scheme_authority(), b"http://b");
        assert_eq!(wb.stats().queued, 0);
        wb.add_url(&a, b"/2").unwrap();
        assert_eq!(a.queued(), 0);
    }

    #[test]
    fn ties_broken_by_host_name() {
        let wb = Workbench::new(1 << 20);
        host(&wb, "zz", ip(1), &["/"]);
        host(&wb, "aa", ip(2), &["/"]);
        host(&wb, "mm", ip(3), &["/"]);
        let order: Vec<_> = (0..3)
            .map(|_| wb.acquire(0).unwrap().state.scheme_authority().to_vec())
            .collect();
        assert_eq!(order, [b"http://aa".to_vec(), b"http://mm".to_vec(), b"http://zz".to_vec()]);
    }
}
