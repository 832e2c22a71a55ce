//! Brute-force ground truth.

use std::cmp::Ordering;

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: u64,
    pub dist: f32,
}

fn squared_l2(a: &[f32], b: &[f32]) -> f32 {
    let mut s = 0f32;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

fn rank(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.dist.total_cmp(&b.dist).then(a.id.cmp(&b.id))
}

/// Exhaustive top-`k` of `query` among row-major `rows` labelled by `ids`,
/// by squared L2 distance with ties broken by id.
pub fn exact_knn(rows: &[f32], ids: &[u64], dim: usize, query: &[f32], k: usize) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> = rows
        .chunks_exact(dim)
        .zip(ids)
        .map(|(row, &id)| Neighbor { id, dist: squared_l2(row, query) })
        .collect();
    let k = k.min(all.len());
    if k == 0 {
        return Vec::new();
    }
    all.select_nth_unstable_by(k - 1, rank);
    all.truncate(k);
    all.sort_by(rank);
    all
}

/// Ground-truth ids for every query, with row numbers as ids.
pub fn ground_truth(base: &[f32], queries: &[f32], dim: usize, k: usize) -> Vec<Vec<u64>> {
    let ids: Vec<u64> = (0..(base.len() / dim) as u64).collect();
    queries
        .chunks_exact(dim)
        .map(|q| exact_knn(base, &ids, dim, q, k).into_iter().map(|n| n.id).collect())
        .collect()
}

/// Mean over queries of |result ∩ truth| / k, using the first `k` of each.
pub fn recall_at_k(results: &[Vec<u64>], truth: &[Vec<u64>], k: usize) -> Result<f64, HarnessError> {
    if results.len() != truth.len() {
        return Err(HarnessError::Mismatch(format!("{} result lists for {} queries", results.len(), truth.len())));
    }
    if k == 0 {
        return Err(HarnessError::Mismatch("k must be at least 1".into()));
    }
    if results.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = results
        .iter()
        .zip(truth)
        .map(|(r, t)| {
            let t = &t[..k.min(t.len())];
            r.iter().take(k).filter(|id| t.contains(id)).count() as f64 / k as f64
        })
        .sum();
    Ok(total / results.len() as f64)
}
