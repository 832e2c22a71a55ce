//! Trained coarse quantizer plus the read-only offline lists.

use super::distance::{l2_squared, nearest_row};
use super::kmeans::{kmeans, KMeansConfig};
use super::IndexError;
use crate::store::InterleavedSegment;

#[derive(Debug, Clone, PartialEq)]
pub struct IvfModel {
    pub dim: usize,
    /// `num_clusters * dim` row-major centroids.
    pub centroids: Vec<f32>,
    /// One contiguous interleaved segment per cluster.
    pub offline: Vec<InterleavedSegment>,
    /// First id handed out to auto-numbered insertions.
    pub next_id: u64,
}

impl IvfModel {
    /// Runs k-means on `data` and files every row (id = row number) into its nearest cluster.
    pub fn train(
        data: &[f32],
        dim: usize,
        num_clusters: usize,
        kmeans_cfg: &KMeansConfig,
        group: usize,
    ) -> Result<Self, IndexError> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(IndexError::DimensionMismatch { expected: dim, got: data.len() % dim.max(1) });
        }
        if num_clusters == 0 {
            return Err(IndexError::InvalidConfig("num_clusters must be at least 1".into()));
        }
        let n = data.len() / dim;
        if n < num_clusters {
            return Err(IndexError::InsufficientData { vectors: n, clusters: num_clusters });
        }
        let km = kmeans(data, dim, num_clusters, kmeans_cfg);
        log::debug!("k-means finished after {} iterations (converged: {})", km.iterations, km.converged);
        let ids: Vec<u64> = (0..n as u64).collect();
        Ok(Self::from_assignment(dim, km.centroids, &ids, data, group))
    }

    /// Builds offline lists by assigning each row of `rows` to its nearest centroid.
    pub fn from_assignment(dim: usize, centroids: Vec<f32>, ids: &[u64], rows: &[f32], group: usize) -> Self {
        let k = centroids.len() / dim;
        let mut bucket_ids: Vec<Vec<u64>> = vec![Vec::new(); k];
        let mut bucket_rows: Vec<Vec<f32>> = vec![Vec::new(); k];
        for (&id, row) in ids.iter().zip(rows.chunks_exact(dim)) {
            let (c, _) = nearest_row(&centroids, dim, row);
            bucket_ids[c].push(id);
            bucket_rows[c].extend_from_slice(row);
        }
        let offline = bucket_ids
            .into_iter()
            .zip(bucket_rows)
            .map(|(ids, rows)| InterleavedSegment::from_rows(dim, group, ids, &rows))
            .collect();
        let next_id = ids.iter().max().map_or(0, |m| m + 1);
        Self { dim, centroids, offline, next_id }
    }

    pub fn num_clusters(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroid(&self, k: usize) -> &[f32] {
        &self.centroids[k * self.dim..(k + 1) * self.dim]
    }

    /// Total offline vectors.
    pub fn len(&self) -> usize {
        self.offline.iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check_dim(&self, v: &[f32]) -> Result<(), IndexError> {
        if v.len() == self.dim {
            Ok(())
        } else {
            Err(IndexError::DimensionMismatch { expected: self.dim, got: v.len() })
        }
    }

    /// Nearest cluster; ties go to the lowest cluster id.
    pub fn assign(&self, v: &[f32]) -> Result<usize, IndexError> {
        self.check_dim(v)?;
        Ok(nearest_row(&self.centroids, self.dim, v).0)
    }

    /// The `nprobe` nearest clusters, nearest first.
    pub fn probe(&self, query: &[f32], nprobe: usize) -> Result<Vec<usize>, IndexError> {
        self.check_dim(query)?;
        let n = self.num_clusters();
        if nprobe == 0 || nprobe > n {
            return Err(IndexError::InvalidArgument(format!("nprobe must lie in [1, {n}], got {nprobe}")));
        }
        let mut scored: Vec<(f32, usize)> =
            self.centroids.chunks_exact(self.dim).map(|c| l2_squared(c, query)).zip(0..).collect();
        let rank = |a: &(f32, usize), b: &(f32, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if nprobe < n {
            scored.select_nth_unstable_by(nprobe - 1, rank);
            scored.truncate(nprobe);
        }
        scored.sort_unstable_by(rank);
        Ok(scored.into_iter().map(|(_, c)| c).collect())
    }
}
