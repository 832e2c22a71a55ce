//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::sync::{Condvar, Mutex};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use blockivf::index::{
    AnnIndex, Backend, BlockIvfIndex, Candidate, CostSnapshot, IndexError, InsertReport, IvfModel, RearrangeEvent,
    KMeansConfig, SearchResult,
};

/// Exhaustive top-k by squared L2 in f64, ties broken by id.
pub fn brute_force(rows: &[(u64, Vec<f32>)], query: &[f32], k: usize) -> Vec<(u64, f64)> {
    let mut all: Vec<(u64, f64)> = rows
        .iter()
        .map(|(id, v)| (*id, v.iter().zip(query).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum()))
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<f32> {
    let centers: Vec<f32> = (0..8 * dim).map(|_| rng.random_range(-10.0..10.0)).collect();
    let mut out = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let c = rng.random_range(0..8);
        out.extend((0..dim).map(|d| centers[c * dim + d] + rng.random_range(-2.0f32..2.0)));
    }
    out
}

pub fn fast_kmeans(seed: u64) -> KMeansConfig {
    KMeansConfig { max_iters: 4, seed, max_points_per_centroid: 32 }
}

/// Delegates to a block index; searches wait until the gate opens.
pub struct GatedIndex {
    pub inner: BlockIvfIndex,
    open: Mutex<bool>,
    cv: Condvar,
}

impl GatedIndex {
    pub fn closed(inner: BlockIvfIndex) -> Self {
        Self { inner, open: Mutex::new(false), cv: Condvar::new() }
    }

    pub fn set(&self, open: bool) {
        *self.open.lock().unwrap() = open;
        self.cv.notify_all();
    }
}

impl AnnIndex for GatedIndex {
    fn backend(&self) -> Backend {
        self.inner.backend()
    }
    fn model(&self) -> &IvfModel {
        self.inner.model()
    }
    fn cluster_len(&self, k: usize) -> usize {
        self.inner.cluster_len(k)
    }
    fn scan(&self, query: &[f32], k: usize, clusters: &[usize], buf: &mut Vec<Candidate>) -> Result<SearchResult, IndexError> {
        let mut open = self.open.lock().unwrap();
        while !*open {
            open = self.cv.wait(open).unwrap();
        }
        drop(open);
        self.inner.scan(query, k, clusters, buf)
    }
    fn insert(&self, vectors: &[f32], ids: Option<&[u64]>) -> Result<InsertReport, IndexError> {
        self.inner.insert(vectors, ids)
    }
    fn maintain(&self) -> Vec<RearrangeEvent> {
        self.inner.maintain()
    }
    fn costs(&self) -> CostSnapshot {
        self.inner.costs()
    }
}
