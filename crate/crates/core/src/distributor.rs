//! Moves URLs from the sieve and the virtualizer into the workbench.
//!
//! Refills of hosts whose in-memory queue ran dry come first, since they keep
//! the visit breadth-first; otherwise, if fewer hosts are under visit than
//! required, one URL is read from the sieve. The required front grows each
//! time a fetch worker finds nothing to do although the front is as large as
//! required.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crossbeam::channel::{Receiver, RecvTimeoutError, Sender};
use thiserror::Error;

use crate::burl::CrawlUrl;
use crate::sieve::{Sieve, SieveError};
use crate::virtualizer::{Virtualizer, VirtualizerError};
use crate::workbench::{Location, VisitState, Workbench, WorkbenchError};

#[derive(Debug, Error)]
pub enum DistributorError {
    #[error(transparent)]
    Sieve(#[from] SieveError),
    #[error(transparent)]
    Virtualizer(#[from] VirtualizerError),
}

pub type Result<T> = std::result::Result<T, DistributorError>;

/// Adaptive target for the number of hosts under visit.
#[derive(Debug)]
pub struct FrontController {
    required: AtomicU64,
    /// Growth: `max(required + step, required * factor)`.
    step: u64,
    factor: f64,
    max_front: u64,
    min_growth_interval_ms: u64,
    last_growth: AtomicU64,
    workbench_bytes: AtomicU64,
    /// Running mean of path lengths, in bytes, times 1000.
    mean_path_len_milli: AtomicU64,
    growths: AtomicU64,
}

impl FrontController {
    pub fn new(fetch_workers: usize, workbench_bytes: u64) -> Self {
        FrontController {
            required: AtomicU64::new(2 * fetch_workers.max(1) as u64),
            step: 1,
            factor: 1.1,
            max_front: 10_000_000,
            min_growth_interval_ms: 0,
            last_growth: AtomicU64::new(0),
            workbench_bytes: AtomicU64::new(workbench_bytes),
            mean_path_len_milli: AtomicU64::new(64_000),
            growths: AtomicU64::new(0),
        }
    }

    pub fn with_growth(mut self, step: u64, factor: f64, min_interval_ms: u64) -> Self {
        self.step = step.max(1);
        self.factor = factor.max(1.0);
        self.min_growth_interval_ms = min_interval_ms;
        self
    }

    pub fn with_max_front(mut self, max_front: u64) -> Self {
        self.max_front = max_front;
        self
    }

    pub fn required(&self) -> u64 {
        self.required.load(Ordering::Relaxed)
    }

    /// Operator reset; the only way the requirement decreases.
    pub fn reset(&self, required: u64) {
        self.required.store(required.max(1), Ordering::Relaxed);
    }

    pub fn growths(&self) -> u64 {
        self.growths.load(Ordering::Relaxed)
    }

    /// A fetch worker found nothing to do. Grows the requirement if the
    /// current front is at least as large as required. Returns whether it
    /// grew.
    pub fn note_worker_wait(&self, current_front: u64, now_ms: u64) -> bool {
        let required = self.required();
        if current_front < required || required >= self.max_front {
            return false;
        }
        let last = self.last_growth.load(Ordering::Relaxed);
        if self.min_growth_interval_ms > 0 && now_ms < last + self.min_growth_interval_ms {
            return false;
        }
        if self
            .last_growth
            .compare_exchange(last, now_ms.max(last), Ordering::AcqRel, Ordering::Relaxed)
            .is_err()
        {
            return false;
        }
        let grown = (required + self.step).max((required as f64 * self.factor) as u64);
        let grown = grown.min(self.max_front);
        let ok = self
            .required
            .compare_exchange(required, grown, Ordering::AcqRel, Ordering::Relaxed)
            .is_ok();
        if ok {
            self.growths.fetch_add(1, Ordering::Relaxed);
        }
        ok
    }

    pub fn set_workbench_bytes(&self, bytes: u64) {
        self.workbench_bytes.store(bytes, Ordering::Relaxed);
    }

    pub fn observe_path_len(&self, len: usize) {
        // Exponential moving average with weight 1/64.
        let old = self.mean_path_len_milli.load(Ordering::Relaxed);
        let new = old - old / 64 + (len as u64 * 1000) / 64;
        self.mean_path_len_milli.store(new, Ordering::Relaxed);
    }

    pub fn mean_path_len(&self) -> f64 {
        self.mean_path_len_milli.load(Ordering::Relaxed) as f64 / 1000.0
    }

    /// URLs per host that fill the workbench when the front is as required.
    pub fn per_host_quota(&self) -> usize {
        let bytes = self.workbench_bytes.load(Ordering::Relaxed) as f64;
        let per_host = bytes / (self.required() as f64 * self.mean_path_len().max(1.0));
        (per_host as usize).max(1)
    }
}

/// Requests other components send to the distributor.
#[derive(Debug)]
pub enum Request {
    /// The host's in-memory queue is empty but URLs wait on disk.
    Refill(Arc<VisitState>),
    /// Drop the host and everything queued for it.
    Purge(Arc<VisitState>),
}

#[derive(Debug, Default)]
pub struct DistributorCounters {
    pub sieve_reads: AtomicU64,
    pub to_workbench: AtomicU64,
    pub virtualized: AtomicU64,
    pub refills: AtomicU64,
    pub refilled_urls: AtomicU64,
    pub new_hosts: AtomicU64,
    pub dropped: AtomicU64,
}

/// Read-only view on the current front.
pub trait FrontGauge: Send + Sync {
    /// Hosts under visit or waiting for name resolution.
    fn front(&self) -> u64;
}

pub struct Distributor {
    sieve: Arc<Sieve>,
    workbench: Arc<Workbench>,
    virtualizer: Virtualizer,
    front: Arc<FrontController>,
    states: HashMap<Box<[u8]>, Arc<VisitState>>,
    requests: Receiver<Request>,
    dns: Sender<Arc<VisitState>>,
    deferred: VecDeque<Arc<VisitState>>,
    resolving: Arc<AtomicU64>,
    pub counters: Arc<DistributorCounters>,
    /// Observer of every URL leaving the sieve, in order.
    trace: Option<Box<dyn FnMut(&CrawlUrl) + Send>>,
}

impl Distributor {
    pub fn new(
        sieve: Arc<Sieve>,
        workbench: Arc<Workbench>,
        virtualizer: Virtualizer,
        front: Arc<FrontController>,
        requests: Receiver<Request>,
        dns: Sender<Arc<VisitState>>,
        resolving: Arc<AtomicU64>,
    ) -> Self {
        Distributor {
            sieve,
            workbench,
            virtualizer,
            front,
            states: HashMap::new(),
            requests,
            dns,
            deferred: VecDeque::new(),
            resolving,
            counters: Arc::default(),
            trace: None,
        }
    }

    pub fn set_trace(&mut self, trace: Box<dyn FnMut(&CrawlUrl) + Send>) {
        self.trace = Some(trace);
    }

    /// Hosts under visit plus hosts waiting for name resolution.
    pub fn current_front(&self) -> u64 {
        self.workbench.stats().active() as u64 + self.resolving.load(Ordering::Relaxed)
    }

    pub fn known_hosts(&self) -> usize {
        self.states.len()
    }

    pub fn virtualizer(&self) -> &Virtualizer {
        &self.virtualizer
    }

    pub fn into_virtualizer(self) -> Virtualizer {
        self.virtualizer
    }

    /// Performs one unit of work; false if there was nothing to do.
    pub fn step(&mut self) -> Result<bool> {
        if let Ok(request) = self.requests.try_recv() {
            self.handle(request)?;
            return Ok(true);
        }
        if let Some(state) = self.deferred.pop_front() {
            if self.refill(&state)? {
                return Ok(true);
            }
            self.deferred.push_front(state);
        }
        if self.current_front() < self.front.required() {
            if let Some(url) = self.sieve.dequeue()? {
                self.counters.sieve_reads.fetch_add(1, Ordering::Relaxed);
                self.route_url(url)?;
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Runs [`step`](Self::step) until `stop` returns true, sleeping on the
    /// request channel when idle.
    pub fn run(&mut self, stop: impl Fn() -> bool) -> Result<()> {
        while !stop() {
            if !self.step()? {
                match self.requests.recv_timeout(Duration::from_millis(2)) {
                    Ok(request) => self.handle(request)?,
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => std::thread::sleep(Duration::from_millis(2)),
                }
            }
        }
        Ok(())
    }

    fn handle(&mut self, request: Request) -> Result<()> {
        match request {
            Request::Refill(state) => {
                if !self.refill(&state)? {
                    self.deferred.push_back(state);
                }
            }
            Request::Purge(state) => {
                self.workbench.retire(&state);
                let n = self.virtualizer.purge(state.scheme_authority())?;
                state.lock().on_disk = 0;
                self.counters.dropped.fetch_add(n, Ordering::Relaxed);
            }
        }
        Ok(())
    }

    /// Moves up to one quota of URLs from disk to the host's queue. Returns
    /// false if nothing fit in the workbench budget.
    fn refill(&mut self, state: &Arc<VisitState>) -> Result<bool> {
        if state.location() != Location::Refilling {
            // Purged meanwhile.
            return Ok(true);
        }
        let sa = state.scheme_authority();
        let budget = self.workbench.budget().clone();
        let paths = if self.virtualizer.count(sa) == 0 {
            Vec::new()
        } else {
            self.virtualizer
                .dequeue_bounded(sa, self.front.per_host_quota(), budget.available())?
        };
        let on_disk = self.virtualizer.count(sa);
        if paths.is_empty() && on_disk > 0 {
            return Ok(false);
        }
        let bytes: u64 = paths.iter().map(|p| p.len() as u64).sum();
        budget.force_reserve(bytes);
        self.counters.refills.fetch_add(1, Ordering::Relaxed);
        self.counters
            .refilled_urls
            .fetch_add(paths.len() as u64, Ordering::Relaxed);
        state.lock().on_disk = on_disk;
        if paths.is_empty() {
            self.workbench.park_refilling(state);
        } else {
            self.workbench.return_refilled(state.clone(), paths);
        }
        Ok(true)
    }

    /// Places a URL that just left the sieve.
    pub fn route_url(&mut self, url: CrawlUrl) -> Result<()> {
        if let Some(trace) = &mut self.trace {
            trace(&url);
        }
        let (sa, pq) = url.split();
        self.front.observe_path_len(pq.len());
        let state = match self.states.get(sa) {
            Some(state) => state.clone(),
            None => {
                let state = self.workbench.new_visit_state(sa);
                self.states.insert(sa.into(), state.clone());
                self.counters.new_hosts.fetch_add(1, Ordering::Relaxed);
                match self.workbench.add_url(&state, pq) {
                    Ok(()) => {
                        self.counters.to_workbench.fetch_add(1, Ordering::Relaxed);
                    }
                    Err(WorkbenchError::BudgetExceeded) => self.virtualize(&state, sa, pq)?,
                    Err(e) => unreachable!("{e}"),
                }
                self.resolving.fetch_add(1, Ordering::Relaxed);
                // The DNS side may be gone at shutdown; the host is then
                // simply not visited.
                let _ = self.dns.send(state);
                return Ok(());
            }
        };
        let (location, on_disk, queued) = {
            let data = state.lock();
            (data.location, data.on_disk, data.fifo.len())
        };
        if location == Location::Retired {
            self.counters.dropped.fetch_add(1, Ordering::Relaxed);
            return Ok(());
        }
        if on_disk == 0 && queued < self.front.per_host_quota() {
            match self.workbench.add_url(&state, pq) {
                Ok(()) => {
                    self.counters.to_workbench.fetch_add(1, Ordering::Relaxed);
                    return Ok(());
                }
                Err(WorkbenchError::BudgetExceeded) => {}
                Err(e) => unreachable!("{e}"),
            }
        }
        self.virtualize(&state, sa, pq)?;
        if self.workbench.request_refill(&state) {
            self.deferred.push_back(state);
        }
        Ok(())
    }

    fn virtualize(&mut self, state: &Arc<VisitState>, sa: &[u8], pq: &[u8]) -> Result<()> {
        self.virtualizer.append(sa, pq)?;
        state.lock().on_disk += 1;
        self.counters.virtualized.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }
}

/// Shares the distributor's notion of front with fetch workers.
pub struct SharedFront {
    workbench: Arc<Workbench>,
    resolving: Arc<AtomicU64>,
}

impl SharedFront {
    pub fn new(workbench: Arc<Workbench>, resolving: Arc<AtomicU64>) -> Self {
        SharedFront { workbench, resolving }
    }
}

impl FrontGauge for SharedFront {
    fn front(&self) -> u64 {
        self.workbench.stats().active() as u64 + self.resolving.load(Ordering::Relaxed)
    }
}
