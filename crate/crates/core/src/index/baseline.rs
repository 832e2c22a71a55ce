use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, PoisonError, RwLock};

use std::collections::HashSet;

use super::distance::nearest_row;
use super::{
    check_batch, check_k, AnnIndex, Backend, Candidate, CostCounters, CostSnapshot, IndexConfig, IndexError,
    InsertReport, IvfModel, SearchResult, TopK,
};
use crate::store::InterleavedSegment;

/// IVF-flat index with one contiguous array per cluster. Extending a cluster
/// allocates a larger array and copies the existing contents over.
pub struct BaselineIvfIndex {
    config: IndexConfig,
    model: IvfModel,
    lists: Vec<RwLock<InterleavedSegment>>,
    /// Serializes extends and guards the id set.
    extend: Mutex<HashSet<u64>>,
    next_id: AtomicU64,
    costs: CostCounters,
}

impl std::fmt::Debug for BaselineIvfIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BaselineIvfIndex").field("config", &self.config).finish_non_exhaustive()
    }
}

impl BaselineIvfIndex {
    pub fn new(model: IvfModel, config: IndexConfig) -> Result<Self, IndexError> {
        config.validate()?;
        if model.num_clusters() != config.num_clusters {
            return Err(IndexError::InvalidConfig(format!(
                "model has {} clusters, config expects {}",
                model.num_clusters(),
                config.num_clusters
            )));
        }
        let ids = model.offline.iter().flat_map(|s| s.ids.iter().copied()).collect();
        let lists = model.offline.iter().cloned().map(RwLock::new).collect();
        Ok(Self {
            next_id: AtomicU64::new(model.next_id),
            extend: Mutex::new(ids),
            lists,
            config,
            model,
            costs: CostCounters::default(),
        })
    }

    pub fn train(data: &[f32], dim: usize, config: IndexConfig) -> Result<Self, IndexError> {
        let model = IvfModel::train(data, dim, config.num_clusters, &config.kmeans, config.interleave_group)?;
        Self::new(model, config)
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }
}

impl AnnIndex for BaselineIvfIndex {
    fn backend(&self) -> Backend {
        Backend::Baseline
    }

    fn model(&self) -> &IvfModel {
        &self.model
    }

    fn cluster_len(&self, k: usize) -> usize {
        self.lists[k].read().unwrap_or_else(PoisonError::into_inner).len()
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
            let list = self
                .lists
                .get(c)
                .ok_or_else(|| IndexError::InvalidArgument(format!("cluster {c} out of range")))?
                .read()
                .unwrap_or_else(PoisonError::into_inner);
            list.scan(query, |id, d| top.push(d, id));
        }
        Ok(SearchResult::from_candidates(&top.finish()))
    }

    fn insert(&self, vectors: &[f32], ids: Option<&[u64]>) -> Result<InsertReport, IndexError> {
        let dim = self.model.dim;
        let n = check_batch(dim, vectors, ids)?;
        let mut used = self.extend.lock().unwrap_or_else(PoisonError::into_inner);

        let mut assigned = Vec::with_capacity(n);
        for i in 0..n {
            let id = match ids {
                Some(ids) => ids[i],
                None => loop {
                    let id = self.next_id.fetch_add(1, Ordering::AcqRel);
                    if !used.contains(&id) {
                        break id;
                    }
                },
            };
            if used.insert(id) {
                self.next_id.fetch_max(id + 1, Ordering::AcqRel);
                assigned.push(Some(id));
            } else {
                assigned.push(None);
            }
        }

        let mut buckets: Vec<(Vec<u64>, Vec<f32>)> = vec![(Vec::new(), Vec::new()); self.config.num_clusters];
        for (row, id) in vectors.chunks_exact(dim).zip(&assigned) {
            if let Some(id) = id {
                let (c, _) = nearest_row(&self.model.centroids, dim, row);
                buckets[c].0.push(*id);
                buckets[c].1.extend_from_slice(row);
            }
        }

        for (c, (new_ids, new_rows)) in buckets.into_iter().enumerate() {
            if new_ids.is_empty() {
                continue;
            }
            // build the enlarged copy outside the write lock, then swap it in
            let grown = {
                let old = self.lists[c].read().unwrap_or_else(PoisonError::into_inner);
                let mut ids = Vec::with_capacity(old.len() + new_ids.len());
                ids.extend_from_slice(&old.ids);
                ids.extend_from_slice(&new_ids);
                let mut rows = old.to_rows();
                rows.extend_from_slice(&new_rows);
                self.costs.add_copied(rows.len());
                InterleavedSegment::from_rows(dim, self.config.interleave_group, ids, &rows)
            };
            self.costs.add_reallocation();
            *self.lists[c].write().unwrap_or_else(PoisonError::into_inner) = grown;
        }
        Ok(InsertReport { assigned })
    }

    fn costs(&self) -> CostSnapshot {
        self.costs.snapshot()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index() -> BaselineIvfIndex {
        let model = IvfModel::from_assignment(1, vec![0.0, 100.0], &[0, 1, 2], &[1.0, 2.0, 101.0], 32);
        let config = IndexConfig { num_clusters: 2, nprobe_default: 1, ..IndexConfig::default() };
        BaselineIvfIndex::new(model, config).unwrap()
    }

    #[test]
    fn extend_copies_old_and_new() {
        let idx = index();
        let r = idx.insert(&[3.0], None).unwrap();
        assert_eq!(r.assigned, vec![Some(3)]);
        let c = idx.costs();
        assert_eq!((c.scalars_copied, c.reallocations), (3, 1));
        assert_eq!(idx.cluster_len(0), 3);
        assert_eq!(idx.search(&[2.9], 2, 1).unwrap().ids, vec![3, 1]);
    }

    #[test]
    fn duplicates_rejected() {
        let idx = index();
        let r = idx.insert(&[3.0, 4.0], Some(&[1, 9])).unwrap();
        assert_eq!(r.assigned, vec![None, Some(9)]);
        assert_eq!(idx.insert(&[5.0], None).unwrap().assigned, vec![Some(10)]);
    }
}
