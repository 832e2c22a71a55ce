//! IVF-flat indexes over a shared trained quantizer.
//!
//! Two backends implement [`AnnIndex`]:
//! - [`BlockIvfIndex`] keeps offline lists read-only and appends online vectors
//!   into linked blocks from the central pool, in place and lock-free.
//! - [`BaselineIvfIndex`] keeps one contiguous array per cluster and rebuilds
//!   it on every extend, copying the old contents.

mod baseline;
mod block;
pub mod distance;
pub mod kmeans;
mod model;
mod rearrange;
pub mod snapshot;
mod topk;

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use baseline::BaselineIvfIndex;
pub use block::BlockIvfIndex;
pub use kmeans::KMeansConfig;
pub use model::IvfModel;
pub use rearrange::{RearrangeEvent, RearrangeOutcome};
pub use topk::{Candidate, TopK};

use crate::store::{PoolConfig, StoreError, INTERLEAVE_GROUP};

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least {clusters} training vectors, got {vectors}")]
    InsufficientData { vectors: usize, clusters: usize },
    #[error("invalid index config: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("memory pool exhausted after inserting {inserted} of {requested} vectors")]
    PoolExhausted { inserted: usize, requested: usize },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("snapshot I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad snapshot: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Block-linked online lists.
    Block,
    /// Copy-on-extend contiguous lists.
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    pub num_clusters: usize,
    pub nprobe_default: usize,
    /// Online vectors in one cluster above which that list is rearranged.
    pub rearrange_threshold: usize,
    pub kmeans: KMeansConfig,
    /// Vectors per memory block.
    pub block_capacity: usize,
    /// Blocks in the central pool.
    pub pool_blocks: usize,
    pub interleave_group: usize,
    pub alert_watermark: f64,
    /// Threads filling one insertion batch.
    pub insert_workers: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            num_clusters: 100,
            nprobe_default: 10,
            rearrange_threshold: 256,
            kmeans: KMeansConfig::default(),
            block_capacity: 64,
            pool_blocks: 4096,
            interleave_group: INTERLEAVE_GROUP,
            alert_watermark: 0.9,
            insert_workers: 1,
        }
    }
}

impl IndexConfig {
    /// Block size and cluster count used for SIFT1M-scale deployments.
    pub fn production() -> Self {
        Self { num_clusters: 4000, nprobe_default: 40, block_capacity: 1024, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), IndexError> {
        let bad = |m: &str| Err(IndexError::InvalidConfig(m.to_string()));
        if self.num_clusters == 0 {
            return bad("num_clusters must be at least 1");
        }
        if self.nprobe_default == 0 || self.nprobe_default > self.num_clusters {
            return bad("nprobe_default must lie in [1, num_clusters]");
        }
        if self.rearrange_threshold == 0 {
            return bad("rearrange_threshold must be at least 1");
        }
        if self.insert_workers == 0 {
            return bad("insert_workers must be at least 1");
        }
        Ok(())
    }

    pub fn pool_config(&self, dim: usize) -> PoolConfig {
        PoolConfig {
            num_blocks: self.pool_blocks,
            block_capacity: self.block_capacity,
            dim,
            interleave_group: self.interleave_group,
            alert_watermark: self.alert_watermark,
        }
    }

    /// Sizes the pool so `online_vectors` insertions cannot exhaust it.
    pub fn with_pool_for(mut self, online_vectors: usize) -> Self {
        self.pool_blocks = PoolConfig::sized_for(online_vectors, self.num_clusters, self.block_capacity, 1).num_blocks;
        self
    }
}

/// Top-k answer: ascending squared L2 distance, ties by ascending id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub ids: Vec<u64>,
    pub distances: Vec<f32>,
}

impl SearchResult {
    pub fn from_candidates(c: &[Candidate]) -> Self {
        Self { ids: c.iter().map(|c| c.id).collect(), distances: c.iter().map(|c| c.dist).collect() }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Outcome of one insertion batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InsertReport {
    /// Assigned id per input vector; `None` where a supplied id was rejected as a duplicate.
    pub assigned: Vec<Option<u64>>,
}

impl InsertReport {
    pub fn inserted(&self) -> usize {
        self.assigned.iter().filter(|a| a.is_some()).count()
    }

    pub fn rejected(&self) -> Vec<usize> {
        self.assigned.iter().enumerate().filter(|(_, a)| a.is_none()).map(|(i, _)| i).collect()
    }
}

/// Instrumented costs, shared by both backends.
#[derive(Debug, Default)]
pub struct CostCounters {
    scalars_copied: AtomicU64,
    reallocations: AtomicU64,
    blocks_allocated: AtomicU64,
    rearrangements: AtomicU64,
    merge_steps: AtomicU64,
    rearrange_scalars_moved: AtomicU64,
    rearrange_nanos: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostSnapshot {
    /// Scalars written or copied by insertion paths.
    pub scalars_copied: u64,
    pub reallocations: u64,
    pub blocks_allocated: u64,
    pub rearrangements: u64,
    pub merge_steps: u64,
    pub rearrange_scalars_moved: u64,
    pub rearrange_nanos: u64,
}

impl CostCounters {
    pub(crate) fn add_copied(&self, n: usize) {
        self.scalars_copied.fetch_add(n as u64, Ordering::Relaxed);
    }

    pub(crate) fn add_reallocation(&self) {
        self.reallocations.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn add_block(&self) {
        self.blocks_allocated.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn add_rearrangement(&self, steps: usize, moved: usize, took: Duration) {
        self.rearrangements.fetch_add(1, Ordering::Relaxed);
        self.merge_steps.fetch_add(steps as u64, Ordering::Relaxed);
        self.rearrange_scalars_moved.fetch_add(moved as u64, Ordering::Relaxed);
        self.rearrange_nanos.fetch_add(took.as_nanos() as u64, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> CostSnapshot {
        CostSnapshot {
            scalars_copied: self.scalars_copied.load(Ordering::Relaxed),
            reallocations: self.reallocations.load(Ordering::Relaxed),
            blocks_allocated: self.blocks_allocated.load(Ordering::Relaxed),
            rearrangements: self.rearrangements.load(Ordering::Relaxed),
            merge_steps: self.merge_steps.load(Ordering::Relaxed),
            rearrange_scalars_moved: self.rearrange_scalars_moved.load(Ordering::Relaxed),
            rearrange_nanos: self.rearrange_nanos.load(Ordering::Relaxed),
        }
    }
}

/// Common surface of both backends, used by the executor and the harness.
pub trait AnnIndex: Send + Sync {
    fn backend(&self) -> Backend;

    fn model(&self) -> &IvfModel;

    fn dim(&self) -> usize {
        self.model().dim
    }

    fn num_clusters(&self) -> usize {
        self.model().num_clusters()
    }

    /// Vectors stored in cluster `k`, offline and online.
    fn cluster_len(&self, k: usize) -> usize;

    /// Total stored vectors.
    fn len(&self) -> usize {
        (0..self.num_clusters()).map(|k| self.cluster_len(k)).sum()
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn probe(&self, query: &[f32], nprobe: usize) -> Result<Vec<usize>, IndexError> {
        self.model().probe(query, nprobe)
    }

    /// Upper estimate of candidates scanned when probing `clusters`.
    fn scan_len(&self, clusters: &[usize]) -> usize {
        clusters.iter().map(|&k| self.cluster_len(k)).sum()
    }

    /// Scans `clusters` and returns the best `k`, using `buf` as candidate storage.
    fn scan(&self, query: &[f32], k: usize, clusters: &[usize], buf: &mut Vec<Candidate>)
        -> Result<SearchResult, IndexError>;

    fn search(&self, query: &[f32], k: usize, nprobe: usize) -> Result<SearchResult, IndexError> {
        let clusters = self.probe(query, nprobe)?;
        let mut buf = Vec::with_capacity(4 * k.max(16));
        self.scan(query, k, &clusters, &mut buf)
    }

    /// Inserts row-major `vectors`; ids are assigned when `ids` is `None`.
    fn insert(&self, vectors: &[f32], ids: Option<&[u64]>) -> Result<InsertReport, IndexError>;

    /// Post-insertion maintenance (list rearrangement). No-op by default.
    fn maintain(&self) -> Vec<RearrangeEvent> {
        Vec::new()
    }

    fn costs(&self) -> CostSnapshot;

    /// Hop count of every online block list; empty for backends without them.
    fn list_hops(&self) -> Vec<usize> {
        Vec::new()
    }
}

pub(crate) fn check_k(k: usize) -> Result<(), IndexError> {
    if k == 0 {
        Err(IndexError::InvalidArgument("k must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// Validates a row-major batch and optional id list; returns the row count.
pub(crate) fn check_batch(dim: usize, vectors: &[f32], ids: Option<&[u64]>) -> Result<usize, IndexError> {
    if !vectors.len().is_multiple_of(dim) {
        return Err(IndexError::DimensionMismatch { expected: dim, got: vectors.len() % dim });
    }
    let n = vectors.len() / dim;
    if let Some(ids) = ids {
        if ids.len() != n {
            return Err(IndexError::InvalidArgument(format!("{} ids supplied for {} vectors", ids.len(), n)));
        }
        if ids.contains(&u64::MAX) {
            return Err(IndexError::InvalidArgument("id u64::MAX is reserved".into()));
        }
    }
    Ok(n)
}
