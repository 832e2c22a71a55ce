//! Offline experiments: block-size and threshold sweeps, recall curves.

use std::sync::Arc;
use std::time::Instant;

use super::oracle::recall_at_k;
use super::report::{RearrangeRow, RearrangeTable, SweepPoint, SweepReport};
use super::vecs::Dataset;
use super::HarnessError;
use crate::index::{AnnIndex, Backend, BaselineIvfIndex, BlockIvfIndex, IndexConfig, IvfModel, RearrangeOutcome};

pub fn build_index(backend: Backend, model: IvfModel, config: IndexConfig) -> Result<Arc<dyn AnnIndex>, HarnessError> {
    Ok(match backend {
        Backend::Block => Arc::new(BlockIvfIndex::new(model, config)?),
        Backend::Baseline => Arc::new(BaselineIvfIndex::new(model, config)?),
    })
}

/// Inserts `stream` in request-sized batches, as a producer would.
pub fn insert_in_batches(index: &dyn AnnIndex, stream: &Dataset, batch: usize) -> Result<(), HarnessError> {
    for chunk in stream.vectors.chunks(batch.max(1) * stream.dim) {
        index.insert(chunk, None)?;
    }
    Ok(())
}

/// Mean per-query search time in milliseconds; the fastest of `reps` passes.
pub fn mean_search_ms(index: &dyn AnnIndex, queries: &Dataset, k: usize, nprobe: usize, reps: usize) -> Result<f64, HarnessError> {
    let mut best = f64::INFINITY;
    for _ in 0..reps.max(1) {
        let t = Instant::now();
        for i in 0..queries.len() {
            std::hint::black_box(index.search(queries.row(i), k, nprobe)?);
        }
        best = best.min(t.elapsed().as_secs_f64() * 1e3 / queries.len().max(1) as f64);
    }
    Ok(best)
}

/// Parameters shared by the offline experiments.
#[derive(Debug, Clone)]
pub struct ExperimentInput<'a> {
    pub model: &'a IvfModel,
    pub config: IndexConfig,
    pub stream: &'a Dataset,
    pub queries: &'a Dataset,
    pub insert_batch: usize,
    pub k: usize,
    pub nprobe: usize,
    pub reps: usize,
}

/// Hop counts, padding and search time per block capacity.
pub fn block_capacity_sweep(input: &ExperimentInput<'_>, capacities: &[usize]) -> Result<SweepReport, HarnessError> {
    let mut points = Vec::new();
    for &cap in capacities {
        let config = IndexConfig { block_capacity: cap, ..input.config.clone() }.with_pool_for(input.stream.len());
        let index = BlockIvfIndex::new(input.model.clone(), config)?;
        insert_in_batches(&index, input.stream, input.insert_batch)?;
        let hops = index.list_hops();
        let mut p = SweepPoint { value: cap as f64, ..SweepPoint::default() };
        p.metrics.insert("mean_hops", hops.iter().sum::<usize>() as f64 / hops.len().max(1) as f64);
        p.metrics.insert("padding_scalars", index.padding_scalars() as f64);
        p.metrics.insert("blocks_allocated", index.costs().blocks_allocated as f64);
        p.metrics.insert("search_ms", mean_search_ms(&index, input.queries, input.k, input.nprobe, input.reps)?);
        points.push(p);
    }
    Ok(SweepReport { param: "block-capacity".into(), points })
}

/// Search time before and after the post-insertion rearrangement sweep, per threshold.
pub fn rearrangement_table(input: &ExperimentInput<'_>, thresholds: &[usize]) -> Result<RearrangeTable, HarnessError> {
    let mut rows = Vec::new();
    for &t in thresholds {
        let config = IndexConfig { rearrange_threshold: t, ..input.config.clone() }.with_pool_for(input.stream.len());
        let index = BlockIvfIndex::new(input.model.clone(), config)?;
        insert_in_batches(&index, input.stream, input.insert_batch)?;
        let before = mean_search_ms(&index, input.queries, input.k, input.nprobe, input.reps)?;
        let start = Instant::now();
        let events = index.maintain();
        let cost = start.elapsed().as_secs_f64() * 1e3;
        let (steps, before_hops, after_hops) = events.iter().fold((0, 0, 0), |acc, e| match e.outcome {
            RearrangeOutcome::Done { steps, hops_before, hops_after } => (acc.0 + steps, acc.1 + hops_before, acc.2 + hops_after),
            RearrangeOutcome::Skipped => acc,
        });
        log::debug!("threshold {t}: {} lists, {steps} steps, hops {before_hops} -> {after_hops}", events.len());
        let after = mean_search_ms(&index, input.queries, input.k, input.nprobe, input.reps)?;
        rows.push(RearrangeRow { threshold: t, latency_before_ms: before, rearrange_cost_ms: cost, latency_after_ms: after });
    }
    Ok(RearrangeTable { rows })
}

/// Recall@k and search time per nprobe on a fixed index state.
pub fn nprobe_sweep(
    index: &dyn AnnIndex,
    queries: &Dataset,
    truth: &[Vec<u64>],
    k: usize,
    values: &[usize],
) -> Result<SweepReport, HarnessError> {
    let mut points = Vec::new();
    for &nprobe in values {
        let start = Instant::now();
        let results = (0..queries.len())
            .map(|i| index.search(queries.row(i), k, nprobe).map(|r| r.ids))
            .collect::<Result<Vec<_>, _>>()?;
        let ms = start.elapsed().as_secs_f64() * 1e3 / queries.len().max(1) as f64;
        let mut p = SweepPoint { value: nprobe as f64, ..SweepPoint::default() };
        p.metrics.insert("recall", recall_at_k(&results, truth, k)?);
        p.metrics.insert("search_ms", ms);
        points.push(p);
    }
    Ok(SweepReport { param: "nprobe".into(), points })
}

/// Powers of two up to `n`, then `n` itself.
pub fn doubling_up_to(n: usize) -> Vec<usize> {
    let mut v: Vec<usize> = std::iter::successors(Some(1usize), |x| x.checked_mul(2)).take_while(|&x| x < n).collect();
    v.push(n);
    v
}
