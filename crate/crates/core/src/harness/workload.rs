//! Timed request replay against an executor.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::oracle::recall_at_k;
use super::report::{LatencyStats, WorkloadReport};
use super::vecs::Dataset;
use super::HarnessError;
use crate::exec::{ExecError, Executor, Request, RequestKind, Response, MAX_SEARCH_BATCH};
use crate::index::distance::l2_squared;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Arrival {
    /// Evenly spaced requests.
    Fixed,
    Poisson,
}

/// Request rates are per second. Each insertion request carries
/// `insert_batch` vectors; each search request carries `search_batch` queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    pub qps_search: f64,
    pub qps_insert: f64,
    pub duration_s: f64,
    pub search_batch: usize,
    pub insert_batch: usize,
    pub k: usize,
    pub nprobe: usize,
    pub seed: u64,
    pub arrival: Arrival,
    /// Requests submitted before this offset are run but not measured.
    pub warmup_s: f64,
    /// Length of the measurement window after warmup.
    pub window_s: f64,
    /// Latency above which a request counts as timed out.
    pub timeout_ms: f64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            qps_search: 100.0,
            qps_insert: 10.0,
            duration_s: 5.0,
            search_batch: 1,
            insert_batch: 128,
            k: 10,
            nprobe: 10,
            seed: 7,
            arrival: Arrival::Fixed,
            warmup_s: 0.0,
            window_s: 10.0,
            timeout_ms: 20.0,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidSpec(m.into()));
        if !(self.qps_search >= 0.0 && self.qps_insert >= 0.0) || !self.qps_search.is_finite() || !self.qps_insert.is_finite() {
            return bad("rates must be finite and non-negative");
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("duration must be positive");
        }
        if self.search_batch == 0 || self.search_batch > MAX_SEARCH_BATCH {
            return bad("search batch must lie in [1, 10]");
        }
        if self.insert_batch == 0 || self.k == 0 || self.nprobe == 0 {
            return bad("insert batch, k and nprobe must be at least 1");
        }
        if self.warmup_s < 0.0 || self.window_s <= 0.0 {
            return bad("warmup must be non-negative and the window positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// Queries starting at this row of the query set (wrapping).
    Search { first_query: usize },
    /// Vectors starting at this row of the insertion source (wrapping).
    Insert { first_vector: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub at: Duration,
    pub kind: EventKind,
}

fn arrivals(rate: f64, duration: f64, arrival: Arrival, rng: &mut ChaCha8Rng) -> Vec<Duration> {
    if rate <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    match arrival {
        Arrival::Fixed => {
            let n = (rate * duration).floor() as usize;
            out.extend((0..n).map(|i| Duration::from_secs_f64(i as f64 / rate)));
        }
        Arrival::Poisson => {
            let exp = Exp::new(rate).expect("positive rate");
            let mut t = exp.sample(rng);
            while t < duration {
                out.push(Duration::from_secs_f64(t));
                t += exp.sample(rng);
            }
        }
    }
    out
}

/// The request timeline for `spec`, identical for identical seeds.
pub fn schedule(spec: &WorkloadSpec) -> Vec<Event> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let searches = arrivals(spec.qps_search, spec.duration_s, spec.arrival, &mut rng);
    let inserts = arrivals(spec.qps_insert, spec.duration_s, spec.arrival, &mut rng);
    let mut events: Vec<Event> = searches
        .into_iter()
        .enumerate()
        .map(|(i, at)| Event { at, kind: EventKind::Search { first_query: i * spec.search_batch } })
        .chain(
            inserts
                .into_iter()
                .enumerate()
                .map(|(i, at)| Event { at, kind: EventKind::Insert { first_vector: i * spec.insert_batch } }),
        )
        .collect();
    // inserts first on ties, so a search scheduled at the same instant sees them queued ahead
    events.sort_by_key(|e| (e.at, matches!(e.kind, EventKind::Search { .. })));
    events
}

fn wrapped_rows(data: &Dataset, first: usize, count: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(count * data.dim);
    for i in 0..count {
        out.extend_from_slice(data.row((first + i) % data.len()));
    }
    out
}

/// Queries and insertion vectors for a replay.
#[derive(Debug, Clone, Copy)]
pub struct ReplayInput<'a> {
    pub queries: &'a Dataset,
    pub inserts: &'a Dataset,
    /// Per-query true neighbor ids; enables the recall metric.
    pub ground_truth: Option<&'a [Vec<u64>]>,
    /// Label describing how the insertion stream was produced.
    pub insertion_stream: &'a str,
}

/// Result ids of every completed search request, by event position.
pub type SearchLog = Vec<(usize, Vec<Vec<u64>>)>;

/// Replays `spec` against `executor` in real time.
pub fn replay(
    spec: &WorkloadSpec,
    executor: &Executor,
    input: ReplayInput<'_>,
    experiment: &str,
) -> Result<(WorkloadReport, SearchLog), HarnessError> {
    spec.validate()?;
    if input.queries.is_empty() && spec.qps_search > 0.0 {
        return Err(HarnessError::InvalidSpec("searches scheduled but no queries given".into()));
    }
    if input.inserts.is_empty() && spec.qps_insert > 0.0 {
        return Err(HarnessError::InvalidSpec("insertions scheduled but no vectors given".into()));
    }
    let index = executor.index().clone();
    let costs_before = index.costs();
    let _ = executor.take_rearrangements();
    let events = schedule(spec);

    let start = Instant::now();
    let mut tickets = Vec::with_capacity(events.len());
    let mut lags = Vec::with_capacity(events.len());
    let mut rejections = 0;
    let (mut submitted_search, mut submitted_insert) = (0, 0);
    for (pos, ev) in events.iter().enumerate() {
        let target = start + ev.at;
        let now = Instant::now();
        if target > now {
            std::thread::sleep(target - now);
        }
        lags.push(Instant::now().saturating_duration_since(target));
        let request = match ev.kind {
            EventKind::Search { first_query } => {
                submitted_search += 1;
                Request::Search {
                    queries: wrapped_rows(input.queries, first_query, spec.search_batch),
                    k: spec.k,
                    nprobe: spec.nprobe,
                }
            }
            EventKind::Insert { first_vector } => {
                submitted_insert += 1;
                Request::Insert { vectors: wrapped_rows(input.inserts, first_vector, spec.insert_batch), ids: None }
            }
        };
        match executor.submit(request) {
            Ok(t) => tickets.push((pos, t)),
            Err(ExecError::Rejected) => rejections += 1,
            Err(e) => return Err(e.into()),
        }
    }
    let issued = Instant::now();
    executor.flush()?;

    let window = Duration::from_secs_f64(spec.warmup_s)..Duration::from_secs_f64(spec.warmup_s + spec.window_s);
    let timeout = Duration::from_secs_f64(spec.timeout_ms / 1e3);
    let mut search_ms = Vec::new();
    let mut insert_ms = Vec::new();
    let mut timeouts = 0;
    let mut failures = 0;
    let mut log: SearchLog = Vec::new();
    let mut recall_results = Vec::new();
    let mut recall_truth = Vec::new();
    for (pos, ticket) in tickets {
        let kind = ticket.kind();
        let done = ticket.wait();
        let ev = events[pos];
        let latency = done.timing.latency();
        let result = match done.result {
            Ok(r) => r,
            Err(e) => {
                log::warn!("request {pos} failed: {e}");
                failures += 1;
                continue;
            }
        };
        if let (RequestKind::Search, Response::Search(results), EventKind::Search { first_query }) = (kind, &result, ev.kind) {
            let ids: Vec<Vec<u64>> = results.iter().map(|r| r.ids.clone()).collect();
            if let Some(gt) = input.ground_truth {
                for (i, r) in ids.iter().enumerate() {
                    recall_results.push(r.clone());
                    recall_truth.push(gt[(first_query + i) % input.queries.len()].clone());
                }
            }
            log.push((pos, ids));
        }
        if !window.contains(&ev.at) {
            continue;
        }
        if latency > timeout {
            timeouts += 1;
        }
        let ms = latency.as_secs_f64() * 1e3;
        match kind {
            RequestKind::Search => search_ms.push(ms),
            RequestKind::Insert => insert_ms.push(ms),
        }
    }
    let drain = issued.elapsed();

    let search = LatencyStats::from_samples(&search_ms);
    let insert = LatencyStats::from_samples(&insert_ms);
    let recall = if recall_results.is_empty() { None } else { Some(recall_at_k(&recall_results, &recall_truth, spec.k)?) };
    let hops = index.list_hops();
    let mut hop_histogram = BTreeMap::new();
    for &h in &hops {
        *hop_histogram.entry(h).or_insert(0) += 1;
    }
    let mean_hops = if hops.is_empty() { 0.0 } else { hops.iter().sum::<usize>() as f64 / hops.len() as f64 };
    let after = index.costs();
    let costs = crate::index::CostSnapshot {
        scalars_copied: after.scalars_copied - costs_before.scalars_copied,
        reallocations: after.reallocations - costs_before.reallocations,
        blocks_allocated: after.blocks_allocated - costs_before.blocks_allocated,
        rearrangements: after.rearrangements - costs_before.rearrangements,
        merge_steps: after.merge_steps - costs_before.merge_steps,
        rearrange_scalars_moved: after.rearrange_scalars_moved - costs_before.rearrange_scalars_moved,
        rearrange_nanos: after.rearrange_nanos - costs_before.rearrange_nanos,
    };

    lags.sort();
    let p95_lag = lags.get(lags.len() * 95 / 100).copied().unwrap_or_default();
    let saturated = drain > Duration::from_secs_f64((spec.duration_s * 0.25).max(0.5))
        || p95_lag > Duration::from_millis(10)
        || rejections * 20 > submitted_search.max(1);

    let report = WorkloadReport {
        experiment: experiment.to_string(),
        backend: index.backend(),
        mode: executor.mode(),
        qps_search: spec.qps_search,
        qps_insert: spec.qps_insert,
        duration_s: spec.duration_s,
        latency_combined_ms: search.mean_ms + insert.mean_ms,
        search,
        insert,
        submitted_search,
        submitted_insert,
        rejections,
        timeouts,
        failures,
        timeout_ms: spec.timeout_ms,
        saturated,
        recall,
        hop_histogram,
        mean_hops,
        costs,
        rearrangements: executor.take_rearrangements(),
        insertion_stream: input.insertion_stream.to_string(),
        search_samples_ms: search_ms,
        insert_samples_ms: insert_ms,
    };
    Ok((report, log))
}

/// Ratio of this machine's time for a fixed distance workload to a nominal
/// reference time, at least 1. Scales hardware-bound latency thresholds.
pub fn desk_calibration_factor() -> f64 {
    const REFERENCE: Duration = Duration::from_millis(4);
    let dim = 128;
    let a: Vec<f32> = (0..4096 * dim).map(|i| (i % 97) as f32 * 0.5).collect();
    let q: Vec<f32> = (0..dim).map(|i| i as f32).collect();
    let mut best = Duration::MAX;
    for _ in 0..3 {
        let t = Instant::now();
        let mut acc = 0f32;
        for _ in 0..16 {
            for row in a.chunks_exact(dim) {
                acc += l2_squared(row, &q);
            }
        }
        std::hint::black_box(acc);
        best = best.min(t.elapsed());
    }
    (best.as_secs_f64() / REFERENCE.as_secs_f64()).max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_schedule_counts_and_ties() {
        let spec = WorkloadSpec { qps_search: 10.0, qps_insert: 2.0, duration_s: 1.0, ..WorkloadSpec::default() };
        let ev = schedule(&spec);
        let searches = ev.iter().filter(|e| matches!(e.kind, EventKind::Search { .. })).count();
        assert_eq!((searches, ev.len()), (10, 12));
        assert!(matches!(ev[0].kind, EventKind::Insert { first_vector: 0 }));
        assert!(ev.windows(2).all(|w| w[0].at <= w[1].at));
    }

    #[test]
    fn poisson_schedule_is_seeded() {
        let spec = WorkloadSpec { arrival: Arrival::Poisson, qps_search: 200.0, duration_s: 2.0, ..WorkloadSpec::default() };
        let a = schedule(&spec);
        assert_eq!(a, schedule(&spec));
        assert_ne!(a, schedule(&WorkloadSpec { seed: 99, ..spec.clone() }));
        let n = a.iter().filter(|e| matches!(e.kind, EventKind::Search { .. })).count();
        assert!((300..500).contains(&n), "{n}");
    }

    #[test]
    fn spec_validation() {
        assert!(WorkloadSpec { duration_s: 0.0, ..WorkloadSpec::default() }.validate().is_err());
        assert!(WorkloadSpec { search_batch: 11, ..WorkloadSpec::default() }.validate().is_err());
        assert!(WorkloadSpec { qps_insert: -1.0, ..WorkloadSpec::default() }.validate().is_err());
    }
}
