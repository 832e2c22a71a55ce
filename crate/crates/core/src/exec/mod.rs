//! Multi-lane request executor.
//!
//! Parallel mode gives every search request its own lane (a worker thread
//! with cached scratch) and funnels insertions through one insertion lane
//! that batches them and runs list rearrangement after each batch.
//! Serialized mode runs everything in submission order on one lane.

pub mod batcher;
pub mod lanes;
mod ticket;

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, PoisonError, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam::channel::{self, Receiver, RecvTimeoutError, Sender};
use serde::{Deserialize, Serialize};

pub use batcher::{flush_size, BatchPolicy};
pub use lanes::{GrantPool, LanePool, ResourceStats};
pub use ticket::{Completion, Lane, RequestKind, Response, Ticket, Timing};

use crate::index::{AnnIndex, Candidate, IndexError, RearrangeEvent, SearchResult};

/// Queries allowed in one search request.
pub const MAX_SEARCH_BATCH: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Parallel,
    Serialized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecutorConfig {
    pub num_lanes: usize,
    pub lane_cache_bytes: usize,
    pub central_grant_bytes: usize,
    #[serde(with = "millis")]
    pub batch_flush_interval: Duration,
    pub batch_multiple: usize,
    pub batch_cap: usize,
    pub mode: Mode,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self {
            num_lanes: 32,
            lane_cache_bytes: 512 * 1024,
            central_grant_bytes: 2 * 1024 * 1024,
            batch_flush_interval: Duration::from_millis(5),
            batch_multiple: 128,
            batch_cap: 1024,
            mode: Mode::Parallel,
        }
    }
}

impl ExecutorConfig {
    pub fn validate(&self) -> Result<(), ExecError> {
        if self.num_lanes == 0 {
            return Err(ExecError::InvalidConfig("num_lanes must be at least 1".into()));
        }
        if self.batch_multiple == 0 || self.batch_cap < self.batch_multiple {
            return Err(ExecError::InvalidConfig("need batch_cap >= batch_multiple >= 1".into()));
        }
        Ok(())
    }

    pub fn batch_policy(&self) -> BatchPolicy {
        BatchPolicy { flush_interval: self.batch_flush_interval, multiple: self.batch_multiple, cap: self.batch_cap }
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64() * 1e3)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let ms = f64::deserialize(d)?;
        Duration::try_from_secs_f64(ms / 1e3).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone)]
pub enum Request {
    /// Up to [`MAX_SEARCH_BATCH`] row-major queries.
    Search { queries: Vec<f32>, k: usize, nprobe: usize },
    Insert { vectors: Vec<f32>, ids: Option<Vec<u64>> },
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum ExecError {
    #[error("all lanes busy")]
    Rejected,
    #[error("executor shut down")]
    ShutDown,
    #[error("executor busy: {0} requests in flight")]
    Busy(usize),
    #[error("invalid executor config: {0}")]
    InvalidConfig(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Index(Arc<IndexError>),
}

impl From<IndexError> for ExecError {
    fn from(e: IndexError) -> Self {
        ExecError::Index(Arc::new(e))
    }
}

/// One line per finished or rejected request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestRecord {
    #[serde(rename = "type")]
    pub kind: RequestKind,
    pub lane: String,
    pub queue_us: u64,
    pub exec_us: u64,
    pub result_count: usize,
    pub rejected: bool,
}

/// One dispatched insertion batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchRecord {
    pub size: usize,
    pub started: Instant,
    pub finished: Instant,
}

struct SearchJob {
    lane: usize,
    queries: Vec<f32>,
    k: usize,
    nprobe: usize,
    submitted: Instant,
    tx: Sender<Completion>,
}

struct InsertJob {
    vectors: Vec<f32>,
    ids: Option<Vec<u64>>,
    submitted: Instant,
    tx: Sender<Completion>,
    progress: Mutex<InsertProgress>,
}

struct InsertProgress {
    assigned: Vec<Option<u64>>,
    remaining: usize,
    error: Option<ExecError>,
    started: Option<Instant>,
}

impl InsertJob {
    fn len(&self, dim: usize) -> usize {
        self.vectors.len() / dim
    }
}

enum LaneMsg {
    Run(SearchJob),
    Stop,
}

enum InsertMsg {
    Run(Arc<InsertJob>),
    Flush(Sender<()>),
    Stop,
}

enum SerialMsg {
    Search(SearchJob),
    Insert(Arc<InsertJob>),
    Stop,
}

struct Gate {
    mode: Mode,
    closed: bool,
}

struct Shared {
    config: ExecutorConfig,
    index: Arc<dyn AnnIndex>,
    lanes: LanePool,
    grants: GrantPool,
    gate: RwLock<Gate>,
    lane_tx: Vec<Sender<LaneMsg>>,
    insert_tx: Sender<InsertMsg>,
    serial_tx: Sender<SerialMsg>,
    in_flight: AtomicUsize,
    lane_reservations: AtomicU64,
    records: Mutex<Vec<RequestRecord>>,
    batches: Mutex<Vec<BatchRecord>>,
    rearrangements: Mutex<Vec<RearrangeEvent>>,
}

pub struct Executor {
    shared: Arc<Shared>,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("config", &self.shared.config).finish_non_exhaustive()
    }
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(PoisonError::into_inner)
}

impl Executor {
    pub fn new(index: Arc<dyn AnnIndex>, config: ExecutorConfig) -> Result<Self, ExecError> {
        config.validate()?;
        let (lane_tx, lane_rx): (Vec<_>, Vec<_>) = (0..config.num_lanes).map(|_| channel::unbounded()).unzip();
        let (insert_tx, insert_rx) = channel::unbounded();
        let (serial_tx, serial_rx) = channel::unbounded();
        let shared = Arc::new(Shared {
            lanes: LanePool::new(config.num_lanes),
            grants: GrantPool::new(config.central_grant_bytes),
            gate: RwLock::new(Gate { mode: config.mode, closed: false }),
            config,
            index,
            lane_tx,
            insert_tx,
            serial_tx,
            in_flight: AtomicUsize::new(0),
            lane_reservations: AtomicU64::new(0),
            records: Mutex::new(Vec::new()),
            batches: Mutex::new(Vec::new()),
            rearrangements: Mutex::new(Vec::new()),
        });

        let spawn = |name: String, f: Box<dyn FnOnce() + Send>| {
            std::thread::Builder::new().name(name).spawn(f).expect("spawn executor worker")
        };
        let mut workers = Vec::new();
        for (i, rx) in lane_rx.into_iter().enumerate() {
            let s = shared.clone();
            workers.push(spawn(format!("search-lane-{i}"), Box::new(move || search_lane(&s, i, rx))));
        }
        let s = shared.clone();
        workers.push(spawn("insertion-lane".into(), Box::new(move || insertion_lane(&s, insert_rx))));
        let s = shared.clone();
        workers.push(spawn("serial-lane".into(), Box::new(move || serial_lane(&s, serial_rx))));
        Ok(Self { shared, workers: Mutex::new(workers) })
    }

    pub fn config(&self) -> &ExecutorConfig {
        &self.shared.config
    }

    pub fn index(&self) -> &Arc<dyn AnnIndex> {
        &self.shared.index
    }

    pub fn mode(&self) -> Mode {
        self.shared.gate.read().unwrap_or_else(PoisonError::into_inner).mode
    }

    /// Requests submitted and not yet completed.
    pub fn in_flight(&self) -> usize {
        self.shared.in_flight.load(Ordering::Acquire)
    }

    /// Switches scheduling mode; only allowed while idle.
    pub fn set_mode(&self, mode: Mode) -> Result<(), ExecError> {
        let mut gate = self.shared.gate.write().unwrap_or_else(PoisonError::into_inner);
        if gate.closed {
            return Err(ExecError::ShutDown);
        }
        let busy = self.in_flight();
        if busy > 0 {
            return Err(ExecError::Busy(busy));
        }
        gate.mode = mode;
        Ok(())
    }

    /// Admits a request. Searches are rejected at once when no lane is free.
    pub fn submit(&self, request: Request) -> Result<Ticket, ExecError> {
        let submitted = Instant::now();
        let s = &self.shared;
        let gate = s.gate.read().unwrap_or_else(PoisonError::into_inner);
        if gate.closed {
            return Err(ExecError::ShutDown);
        }
        let dim = s.index.dim();
        let (tx, rx) = channel::bounded(1);
        match request {
            Request::Search { queries, k, nprobe } => {
                let n = queries.len() / dim;
                if queries.len() % dim != 0 || n == 0 || n > MAX_SEARCH_BATCH {
                    return Err(ExecError::InvalidRequest(format!(
                        "search needs 1..={MAX_SEARCH_BATCH} queries of dimension {dim}"
                    )));
                }
                let Some(lane) = s.lanes.acquire() else {
                    s.record(RequestRecord {
                        kind: RequestKind::Search,
                        lane: Lane::None.to_string(),
                        queue_us: 0,
                        exec_us: 0,
                        result_count: 0,
                        rejected: true,
                    });
                    return Err(ExecError::Rejected);
                };
                s.in_flight.fetch_add(1, Ordering::AcqRel);
                let job = SearchJob { lane, queries, k, nprobe, submitted, tx };
                let sent = match gate.mode {
                    Mode::Parallel => s.lane_tx[lane].send(LaneMsg::Run(job)).is_ok(),
                    Mode::Serialized => s.serial_tx.send(SerialMsg::Search(job)).is_ok(),
                };
                assert!(sent, "workers outlive the open gate");
                Ok(Ticket { kind: RequestKind::Search, submitted, rx })
            }
            Request::Insert { vectors, ids } => {
                let n = vectors.len() / dim;
                if vectors.len() % dim != 0 || n == 0 {
                    return Err(ExecError::InvalidRequest(format!("insert needs >= 1 vector of dimension {dim}")));
                }
                if ids.as_ref().is_some_and(|ids| ids.len() != n) {
                    return Err(ExecError::InvalidRequest("one id per vector required".into()));
                }
                s.in_flight.fetch_add(1, Ordering::AcqRel);
                let job = Arc::new(InsertJob {
                    vectors,
                    ids,
                    submitted,
                    tx,
                    progress: Mutex::new(InsertProgress {
                        assigned: vec![None; n],
                        remaining: n,
                        error: None,
                        started: None,
                    }),
                });
                let sent = match gate.mode {
                    Mode::Parallel => s.insert_tx.send(InsertMsg::Run(job)).is_ok(),
                    Mode::Serialized => s.serial_tx.send(SerialMsg::Insert(job)).is_ok(),
                };
                assert!(sent, "workers outlive the open gate");
                Ok(Ticket { kind: RequestKind::Insert, submitted, rx })
            }
        }
    }

    /// Dispatches every pending insertion now and waits for the batches to finish.
    pub fn flush(&self) -> Result<(), ExecError> {
        let gate = self.shared.gate.read().unwrap_or_else(PoisonError::into_inner);
        if gate.closed {
            return Err(ExecError::ShutDown);
        }
        let (tx, rx) = channel::bounded(1);
        self.shared.insert_tx.send(InsertMsg::Flush(tx)).map_err(|_| ExecError::ShutDown)?;
        drop(gate);
        rx.recv().map_err(|_| ExecError::ShutDown)
    }

    /// Finishes queued work, stops the workers, and rejects later submissions.
    pub fn shutdown(&self) {
        {
            let mut gate = self.shared.gate.write().unwrap_or_else(PoisonError::into_inner);
            if gate.closed {
                return;
            }
            gate.closed = true;
        }
        for tx in &self.shared.lane_tx {
            let _ = tx.send(LaneMsg::Stop);
        }
        let _ = self.shared.insert_tx.send(InsertMsg::Stop);
        let _ = self.shared.serial_tx.send(SerialMsg::Stop);
        for h in lock(&self.workers).drain(..) {
            let _ = h.join();
        }
    }

    /// Drains the per-request log.
    pub fn take_records(&self) -> Vec<RequestRecord> {
        std::mem::take(&mut *lock(&self.shared.records))
    }

    pub fn batch_records(&self) -> Vec<BatchRecord> {
        lock(&self.shared.batches).clone()
    }

    pub fn take_rearrangements(&self) -> Vec<RearrangeEvent> {
        std::mem::take(&mut *lock(&self.shared.rearrangements))
    }

    pub fn resource_stats(&self) -> ResourceStats {
        self.shared.grants.stats(self.shared.lane_reservations.load(Ordering::Relaxed))
    }
}

impl Drop for Executor {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl Shared {
    fn record(&self, r: RequestRecord) {
        if log::log_enabled!(target: "blockivf::requests", log::Level::Debug) {
            if let Ok(line) = serde_json::to_string(&r) {
                log::debug!(target: "blockivf::requests", "{line}");
            }
        }
        lock(&self.records).push(r);
    }

    fn complete(
        &self,
        kind: RequestKind,
        lane: Lane,
        submitted: Instant,
        started: Instant,
        result: Result<Response, ExecError>,
        tx: &Sender<Completion>,
    ) {
        let finished = Instant::now();
        let timing = Timing { submitted, started, finished, lane };
        self.record(RequestRecord {
            kind,
            lane: lane.to_string(),
            queue_us: timing.queued().as_micros() as u64,
            exec_us: timing.executing().as_micros() as u64,
            result_count: result.as_ref().map_or(0, Response::result_count),
            rejected: false,
        });
        self.in_flight.fetch_sub(1, Ordering::AcqRel);
        let _ = tx.send(Completion { result, timing });
    }

    fn new_lane_cache(&self) -> Vec<Candidate> {
        self.lane_reservations.fetch_add(1, Ordering::Relaxed);
        Vec::with_capacity(lanes::candidates_in(self.config.lane_cache_bytes))
    }

    /// Runs every query of `job`, borrowing one central grant if any query's
    /// scratch demand exceeds the lane cache.
    fn run_search(&self, job: &SearchJob, cache: &mut Vec<Candidate>) -> Result<Vec<SearchResult>, ExecError> {
        let dim = self.index.dim();
        let mut grant: Option<Vec<Candidate>> = None;
        let mut out = Vec::with_capacity(job.queries.len() / dim);
        let mut result = Ok(());
        for q in job.queries.chunks_exact(dim) {
            let step = self.index.probe(q, job.nprobe).and_then(|clusters| {
                let demand = lanes::scratch_demand(self.index.scan_len(&clusters));
                let buf = if demand > self.config.lane_cache_bytes {
                    grant.get_or_insert_with(|| self.grants.take())
                } else {
                    &mut *cache
                };
                self.index.scan(q, job.k, &clusters, buf)
            });
            match step {
                Ok(r) => out.push(r),
                Err(e) => {
                    result = Err(e.into());
                    break;
                }
            }
        }
        if let Some(g) = grant {
            self.grants.give_back(g);
        }
        result.map(|_| out)
    }

    fn search(&self, job: SearchJob, lane: Lane, cache: &mut Vec<Candidate>) {
        let started = Instant::now();
        let cap = cache.capacity();
        let result = self.run_search(&job, cache);
        if cache.capacity() != cap {
            self.lane_reservations.fetch_add(1, Ordering::Relaxed);
        }
        self.lanes.release(job.lane);
        self.complete(RequestKind::Search, lane, job.submitted, started, result.map(Response::Search), &job.tx);
    }

    /// Inserts `parts` (job, first vector, count) as one batch, resolves the
    /// requests it completes, then rearranges.
    fn run_batch(&self, parts: &[(Arc<InsertJob>, usize, usize)], lane: Lane) {
        let dim = self.index.dim();
        let started = Instant::now();
        let size: usize = parts.iter().map(|p| p.2).sum();
        // consecutive parts with the same id mode go in one call
        let mut finished_jobs = Vec::new();
        let mut i = 0;
        while i < parts.len() {
            let with_ids = parts[i].0.ids.is_some();
            let mut j = i;
            let mut vectors = Vec::new();
            let mut ids = Vec::new();
            while j < parts.len() && parts[j].0.ids.is_some() == with_ids {
                let (job, start, n) = &parts[j];
                vectors.extend_from_slice(&job.vectors[start * dim..(start + n) * dim]);
                if let Some(src) = &job.ids {
                    ids.extend_from_slice(&src[*start..start + n]);
                }
                j += 1;
            }
            let outcome = self.index.insert(&vectors, with_ids.then_some(&ids[..]));
            let mut offset = 0;
            for (job, start, n) in &parts[i..j] {
                let mut p = lock(&job.progress);
                p.started.get_or_insert(started);
                match &outcome {
                    Ok(report) => p.assigned[*start..start + n].copy_from_slice(&report.assigned[offset..offset + n]),
                    Err(e) => {
                        p.error.get_or_insert_with(|| ExecError::Index(Arc::new(clone_index_error(e))));
                    }
                }
                p.remaining -= n;
                if p.remaining == 0 {
                    finished_jobs.push(job.clone());
                }
                offset += n;
            }
            i = j;
        }
        lock(&self.batches).push(BatchRecord { size, started, finished: Instant::now() });
        for job in finished_jobs {
            self.finish_insert(&job, lane);
        }
        let events = self.index.maintain();
        if !events.is_empty() {
            lock(&self.rearrangements).extend(events);
        }
    }

    fn finish_insert(&self, job: &InsertJob, lane: Lane) {
        let mut p = lock(&job.progress);
        let started = p.started.unwrap_or(job.submitted);
        let result = match p.error.take() {
            Some(e) => Err(e),
            None => Ok(Response::Insert(std::mem::take(&mut p.assigned))),
        };
        drop(p);
        self.complete(RequestKind::Insert, lane, job.submitted, started, result, &job.tx);
    }
}

/// `IndexError` holds an `io::Error` and is not `Clone`; batch failures are
/// reported to every affected ticket, so they are rebuilt per ticket.
fn clone_index_error(e: &IndexError) -> IndexError {
    match e {
        IndexError::PoolExhausted { inserted, requested } => {
            IndexError::PoolExhausted { inserted: *inserted, requested: *requested }
        }
        IndexError::Store(s) => IndexError::Store(s.clone()),
        other => IndexError::InvalidArgument(other.to_string()),
    }
}

fn search_lane(s: &Shared, lane: usize, rx: Receiver<LaneMsg>) {
    let mut cache = s.new_lane_cache();
    while let Ok(LaneMsg::Run(job)) = rx.recv() {
        s.search(job, Lane::Search(lane), &mut cache);
    }
}

fn serial_lane(s: &Shared, rx: Receiver<SerialMsg>) {
    let mut cache = s.new_lane_cache();
    for msg in rx {
        match msg {
            SerialMsg::Search(job) => s.search(job, Lane::Serial, &mut cache),
            SerialMsg::Insert(job) => {
                let n = job.len(s.index.dim());
                s.run_batch(&[(job, 0, n)], Lane::Serial);
            }
            SerialMsg::Stop => break,
        }
    }
}

fn insertion_lane(s: &Shared, rx: Receiver<InsertMsg>) {
    let dim = s.index.dim();
    let policy = s.config.batch_policy();
    // (job, next unflushed vector, arrival)
    let mut pending: VecDeque<(Arc<InsertJob>, usize, Instant)> = VecDeque::new();
    let mut pending_len = 0usize;
    let mut stopping = false;

    while !(stopping && pending_len == 0) {
        let mut acks = Vec::new();
        let first = if stopping {
            None
        } else if let Some((_, _, oldest)) = pending.front() {
            let wait = policy.flush_interval.saturating_sub(oldest.elapsed());
            match rx.recv_timeout(wait) {
                Ok(m) => Some(m),
                Err(RecvTimeoutError::Timeout) => None,
                Err(RecvTimeoutError::Disconnected) => {
                    stopping = true;
                    None
                }
            }
        } else {
            match rx.recv() {
                Ok(m) => Some(m),
                Err(_) => break,
            }
        };
        for msg in first.into_iter().chain(std::iter::from_fn(|| rx.try_recv().ok())) {
            match msg {
                InsertMsg::Run(job) => {
                    pending_len += job.len(dim);
                    pending.push_back((job, 0, Instant::now()));
                }
                InsertMsg::Flush(ack) => acks.push(ack),
                InsertMsg::Stop => stopping = true,
            }
        }

        let force = stopping || !acks.is_empty();
        loop {
            let age = pending.front().map_or(Duration::ZERO, |p| p.2.elapsed());
            let n = if force && pending_len > 0 {
                Some(pending_len.min(policy.cap))
            } else {
                flush_size(pending_len, age, &policy)
            };
            let Some(mut n) = n else { break };
            pending_len -= n;
            let mut parts = Vec::new();
            while n > 0 {
                let (job, next, _) = pending.front_mut().expect("pending count covers the queue");
                let take = (job.len(dim) - *next).min(n);
                parts.push((job.clone(), *next, take));
                *next += take;
                n -= take;
                if *next == job.len(dim) {
                    pending.pop_front();
                }
            }
            s.run_batch(&parts, Lane::Insertion);
        }
        for ack in acks {
            let _ = ack.send(());
        }
    }
}
