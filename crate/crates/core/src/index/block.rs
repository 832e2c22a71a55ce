use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Mutex, PoisonError, RwLock, RwLockReadGuard, RwLockWriteGuard};

use crossbeam::utils::Backoff;
use dashmap::DashSet;

use super::distance::nearest_row;
use super::{
    check_batch, check_k, AnnIndex, Backend, Candidate, CostCounters, CostSnapshot, IndexConfig, IndexError,
    InsertReport, IvfModel, KMeansConfig, RearrangeEvent, SearchResult, TopK,
};
use crate::store::{BlockId, CentralMemoryPool, InterleavedSegment, ScratchArena, StoreError, WalkStats};

/// Per-cluster online list state.
pub(crate) struct ClusterState {
    /// Shared by searches and insertions, taken exclusively by rearrangement.
    guard: RwLock<()>,
    /// Reserved online slots (incremented once per inserted vector).
    len: AtomicU64,
    /// Slots at or beyond this bound failed to get a block.
    limit: AtomicU64,
    head: AtomicU32,
    /// Published (block count << 32) | (tail + 1), updated in one store.
    tail: AtomicU64,
    pub(crate) dirty: AtomicBool,
}

impl ClusterState {
    fn new() -> Self {
        Self {
            guard: RwLock::new(()),
            len: AtomicU64::new(0),
            limit: AtomicU64::new(u64::MAX),
            head: AtomicU32::new(0),
            tail: AtomicU64::new(0),
            dirty: AtomicBool::new(false),
        }
    }

    pub(crate) fn read(&self) -> RwLockReadGuard<'_, ()> {
        self.guard.read().unwrap_or_else(PoisonError::into_inner)
    }

    pub(crate) fn write(&self) -> RwLockWriteGuard<'_, ()> {
        self.guard.write().unwrap_or_else(PoisonError::into_inner)
    }

    pub(crate) fn head(&self) -> Option<BlockId> {
        self.head.load(Ordering::Acquire).checked_sub(1).map(BlockId)
    }

    /// (published block count, tail block).
    pub(crate) fn tail(&self) -> (u64, Option<BlockId>) {
        let w = self.tail.load(Ordering::Acquire);
        (w >> 32, ((w & 0xffff_ffff) as u32).checked_sub(1).map(BlockId))
    }

    fn publish_tail(&self, count: u64, tail: BlockId) {
        self.tail.store((count << 32) | (tail.0 as u64 + 1), Ordering::Release);
    }

    fn online_len(&self) -> u64 {
        self.len.load(Ordering::Acquire).min(self.limit.load(Ordering::Acquire))
    }

    /// Updates head/tail after blocks `a` and `b` exchanged places.
    pub(crate) fn rename(&self, a: BlockId, b: BlockId) {
        let swap = |x: BlockId| if x == a { b } else if x == b { a } else { x };
        if let Some(h) = self.head() {
            self.head.store(swap(h).0 + 1, Ordering::Release);
        }
        if let (count, Some(t)) = self.tail() {
            self.publish_tail(count, swap(t));
        }
    }
}

/// IVF-flat index whose online lists are chains of pool blocks.
pub struct BlockIvfIndex {
    config: IndexConfig,
    model: IvfModel,
    pub(crate) pool: CentralMemoryPool,
    pub(crate) clusters: Box<[ClusterState]>,
    pub(crate) scratch: ScratchArena,
    next_id: AtomicU64,
    used_ids: DashSet<u64>,
    pub(crate) costs: CostCounters,
}

impl std::fmt::Debug for BlockIvfIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BlockIvfIndex")
            .field("config", &self.config)
            .field("pool", &self.pool)
            .finish_non_exhaustive()
    }
}

impl BlockIvfIndex {
    pub fn new(model: IvfModel, config: IndexConfig) -> Result<Self, IndexError> {
        Self::with_pool(model, config, |p| p)
    }

    /// Like [`BlockIvfIndex::new`], letting the caller adjust the pool (e.g. install an alert hook).
    pub fn with_pool(
        model: IvfModel,
        config: IndexConfig,
        customize: impl FnOnce(CentralMemoryPool) -> CentralMemoryPool,
    ) -> Result<Self, IndexError> {
        config.validate()?;
        if model.num_clusters() != config.num_clusters {
            return Err(IndexError::InvalidConfig(format!(
                "model has {} clusters, config expects {}",
                model.num_clusters(),
                config.num_clusters
            )));
        }
        let pool_config = config.pool_config(model.dim);
        let pool = customize(CentralMemoryPool::new(pool_config.clone())?);
        let used_ids = DashSet::new();
        for seg in &model.offline {
            for &id in &seg.ids {
                used_ids.insert(id);
            }
        }
        let clusters = (0..config.num_clusters).map(|_| ClusterState::new()).collect();
        Ok(Self {
            next_id: AtomicU64::new(model.next_id),
            scratch: ScratchArena::new(&pool_config),
            config,
            model,
            pool,
            clusters,
            used_ids,
            costs: CostCounters::default(),
        })
    }

    /// Trains the quantizer on `data` (row-major) and builds an empty online index.
    pub fn train(data: &[f32], dim: usize, config: IndexConfig) -> Result<Self, IndexError> {
        let km = KMeansConfig { ..config.kmeans.clone() };
        let model = IvfModel::train(data, dim, config.num_clusters, &km, config.interleave_group)?;
        Self::new(model, config)
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn pool(&self) -> &CentralMemoryPool {
        &self.pool
    }

    pub fn assign(&self, v: &[f32]) -> Result<usize, IndexError> {
        self.model.assign(v)
    }

    fn cluster(&self, k: usize) -> Result<&ClusterState, IndexError> {
        self.clusters
            .get(k)
            .ok_or_else(|| IndexError::InvalidArgument(format!("cluster {k} out of range")))
    }

    /// Online vectors in cluster `k`.
    pub fn online_len(&self, k: usize) -> usize {
        self.clusters[k].online_len() as usize
    }

    pub fn online_head(&self, k: usize) -> Option<BlockId> {
        self.clusters[k].head()
    }

    /// Blocks, hops and committed vectors of cluster `k`'s online list.
    pub fn list_stats(&self, k: usize) -> Result<WalkStats, IndexError> {
        let c = self.cluster(k)?;
        let _g = c.read();
        match c.head() {
            Some(h) => Ok(self.pool.walk_list(h, |_| {})?),
            None => Ok(WalkStats::default()),
        }
    }

    /// Committed (id, vector) pairs of cluster `k`'s online list, in list order.
    pub fn traverse_online(&self, k: usize) -> Result<Vec<(u64, Vec<f32>)>, IndexError> {
        let c = self.cluster(k)?;
        let _g = c.read();
        match c.head() {
            Some(h) => Ok(self.pool.traverse_list(h)?.entries),
            None => Ok(Vec::new()),
        }
    }

    /// Scalars reserved in online blocks but not occupied by a vector.
    pub fn padding_scalars(&self) -> usize {
        let cap = self.config.block_capacity;
        let dim = self.model.dim;
        (0..self.config.num_clusters)
            .map(|k| {
                let s = self.list_stats(k).unwrap_or_default();
                (s.blocks * cap - s.vectors) * dim
            })
            .sum()
    }

    fn insert_one(&self, k: usize, id: u64, v: &[f32]) -> Result<(), StoreError> {
        let c = &self.clusters[k];
        let _g = c.read();
        let did = c.len.fetch_add(1, Ordering::AcqRel);
        let cap = self.pool.capacity() as u64;
        let (mid, moff) = (did / cap, did % cap);
        let exhausted = || StoreError::PoolExhausted { num_blocks: self.pool.config().num_blocks };
        let backoff = Backoff::new();

        let block = if moff == 0 {
            // this caller owns block `mid`: wait for block `mid - 1` to be published
            while c.tail().0 < mid {
                if c.limit.load(Ordering::Acquire) <= did {
                    return Err(exhausted());
                }
                backoff.snooze();
            }
            if c.limit.load(Ordering::Acquire) <= did {
                return Err(exhausted());
            }
            let fresh = match self.pool.alloc_block() {
                Ok(b) => b,
                Err(e) => {
                    c.limit.fetch_min(mid * cap, Ordering::AcqRel);
                    return Err(e);
                }
            };
            self.costs.add_block();
            self.pool.set_owner(fresh, k as u32);
            match c.tail().1 {
                None => c.head.store(fresh.0 + 1, Ordering::Release),
                Some(t) => self.pool.link_blocks(t, fresh)?,
            }
            c.publish_tail(mid + 1, fresh);
            c.dirty.store(true, Ordering::Release);
            fresh
        } else {
            let (count, tail) = loop {
                let (count, tail) = c.tail();
                if count > mid {
                    break (count, tail.expect("published list has a tail"));
                }
                if c.limit.load(Ordering::Acquire) <= did {
                    return Err(exhausted());
                }
                backoff.snooze();
            };
            let mut b = tail;
            for _ in 0..(count - 1 - mid) {
                b = self.pool.prev(b).ok_or_else(|| StoreError::Corruption("broken prev link".into()))?;
            }
            b
        };

        self.pool.write_slot(block, moff as usize, id, v)?;
        self.costs.add_copied(v.len());
        Ok(())
    }

    fn assign_ids(&self, n: usize, ids: Option<&[u64]>) -> Vec<Option<u64>> {
        match ids {
            Some(ids) => ids
                .iter()
                .map(|&id| {
                    let fresh = self.used_ids.insert(id);
                    if fresh {
                        self.next_id.fetch_max(id + 1, Ordering::AcqRel);
                    }
                    fresh.then_some(id)
                })
                .collect(),
            None => {
                let base = self.next_id.fetch_add(n as u64, Ordering::AcqRel);
                (0..n as u64)
                    .map(|i| {
                        let mut id = base + i;
                        while !self.used_ids.insert(id) {
                            id = self.next_id.fetch_add(1, Ordering::AcqRel);
                        }
                        Some(id)
                    })
                    .collect()
            }
        }
    }

    /// Flattens online lists into offline segments.
    pub fn to_model(&self) -> Result<IvfModel, IndexError> {
        let dim = self.model.dim;
        let mut offline = Vec::with_capacity(self.config.num_clusters);
        for k in 0..self.config.num_clusters {
            let seg = &self.model.offline[k];
            let mut ids = seg.ids.clone();
            let mut rows = seg.to_rows();
            for (id, v) in self.traverse_online(k)? {
                ids.push(id);
                rows.extend_from_slice(&v);
            }
            offline.push(InterleavedSegment::from_rows(dim, self.config.interleave_group, ids, &rows));
        }
        Ok(IvfModel {
            dim,
            centroids: self.model.centroids.clone(),
            offline,
            next_id: self.next_id.load(Ordering::Acquire),
        })
    }
}

impl AnnIndex for BlockIvfIndex {
    fn backend(&self) -> Backend {
        Backend::Block
    }

    fn model(&self) -> &IvfModel {
        &self.model
    }

    fn cluster_len(&self, k: usize) -> usize {
        self.model.offline[k].len() + self.online_len(k)
    }

    fn scan(
        &self,
        query: &[f32],
        k: usize,
        clusters: &[usize],
        buf: &mut Vec<Candidate>,
    ) -> Result<SearchResult, IndexError> {
        check_k(k)?;
        self.model.check_dim(query)?;
        let limit = buf.capacity();
        let mut top = TopK::new(buf, k, limit);
        for &c in clusters {
            self.model.offline[c].scan(query, |id, d| top.push(d, id));
            let state = self.cluster(c)?;
            let _g = state.read();
            if let Some(head) = state.head() {
                self.pool.walk_list(head, |b| {
                    self.pool.scan_block(b, query, |id, d| top.push(d, id));
                })?;
            }
        }
        Ok(SearchResult::from_candidates(&top.finish()))
    }

    /// Lock-free batch insertion: each vector reserves a slot with one atomic
    /// increment on its cluster's length; the caller landing on offset 0 of a
    /// new block allocates and links it, the others wait for it to appear.
    fn insert(&self, vectors: &[f32], ids: Option<&[u64]>) -> Result<InsertReport, IndexError> {
        let dim = self.model.dim;
        let n = check_batch(dim, vectors, ids)?;
        let mut assigned = self.assign_ids(n, ids);
        let jobs: Vec<usize> = (0..n).filter(|&i| assigned[i].is_some()).collect();
        let next = AtomicUsize::new(0);
        let failed = Mutex::new(Vec::new());

        let work = || loop {
            let j = next.fetch_add(1, Ordering::Relaxed);
            let Some(&pos) = jobs.get(j) else { break };
            let v = &vectors[pos * dim..(pos + 1) * dim];
            let k = nearest_row(&self.model.centroids, dim, v).0;
            if let Err(e) = self.insert_one(k, assigned[pos].unwrap(), v) {
                failed.lock().unwrap_or_else(PoisonError::into_inner).push((pos, e));
            }
        };
        let workers = self.config.insert_workers.min(jobs.len()).max(1);
        if workers == 1 {
            work();
        } else {
            std::thread::scope(|s| {
                for _ in 0..workers {
                    s.spawn(work);
                }
            });
        }

        let failed = failed.into_inner().unwrap_or_else(PoisonError::into_inner);
        if failed.is_empty() {
            return Ok(InsertReport { assigned });
        }
        for (pos, e) in &failed {
            if let Some(id) = assigned[*pos].take() {
                self.used_ids.remove(&id);
            }
            if !matches!(e, StoreError::PoolExhausted { .. }) {
                return Err(e.clone().into());
            }
        }
        Err(IndexError::PoolExhausted { inserted: jobs.len() - failed.len(), requested: n })
    }

    fn maintain(&self) -> Vec<RearrangeEvent> {
        self.rearrange_sweep()
    }

    fn costs(&self) -> CostSnapshot {
        self.costs.snapshot()
    }

    fn list_hops(&self) -> Vec<usize> {
        (0..self.config.num_clusters).map(|k| self.list_stats(k).map_or(0, |s| s.hops)).collect()
    }
}
