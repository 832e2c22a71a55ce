//! k-means with k-means++ seeding and Lloyd iterations.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::distance::{l2_squared, nearest_row};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub max_iters: usize,
    pub seed: u64,
    /// Training points are subsampled to at most this many per centroid.
    pub max_points_per_centroid: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { max_iters: 25, seed: 0x5eed, max_points_per_centroid: 256 }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// `k * dim` row-major centroids.
    pub centroids: Vec<f32>,
    pub iterations: usize,
    pub converged: bool,
}

/// Clusters `n = data.len() / dim` points into `k` centroids. Deterministic for a fixed seed.
///
/// Callers guarantee `1 <= k <= n`.
pub fn kmeans(data: &[f32], dim: usize, k: usize, cfg: &KMeansConfig) -> KMeansResult {
    let n = data.len() / dim;
    assert!(k >= 1 && k <= n, "k-means needs 1 <= k <= n");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let cap = k.saturating_mul(cfg.max_points_per_centroid.max(1));
    let sampled: Vec<f32>;
    let points: &[f32] = if n > cap {
        let mut idx = sample(&mut rng, n, cap).into_vec();
        idx.sort_unstable();
        sampled = idx.iter().flat_map(|&i| data[i * dim..(i + 1) * dim].iter().copied()).collect();
        &sampled
    } else {
        data
    };
    let n = points.len() / dim;

    let mut centroids = plus_plus_init(points, dim, k, &mut rng);
    let mut assignment = vec![usize::MAX; n];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iters {
        iterations += 1;
        let mut changed = 0usize;
        for (i, p) in points.chunks_exact(dim).enumerate() {
            let (c, _) = nearest_row(&centroids, dim, p);
            if assignment[i] != c {
                assignment[i] = c;
                changed += 1;
            }
        }
        if changed == 0 {
            converged = true;
            break;
        }

        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, p) in points.chunks_exact(dim).enumerate() {
            let c = assignment[i];
            counts[c] += 1;
            for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(p) {
                *s += x as f64;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for d in 0..dim {
                    centroids[c * dim + d] = (sums[c * dim + d] / counts[c] as f64) as f32;
                }
            }
        }
        repair_empty(&mut centroids, &mut counts, dim, &mut rng);
    }

    KMeansResult { centroids, iterations, converged }
}

fn plus_plus_init(points: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = points.len() / dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&points[first * dim..(first + 1) * dim]);
    let mut best: Vec<f32> = points.chunks_exact(dim).map(|p| l2_squared(p, &centroids[..dim])).collect();

    for _ in 1..k {
        let total: f64 = best.iter().map(|&d| d as f64).sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in best.iter().enumerate() {
                target -= d as f64;
                if target < 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // all remaining points coincide with chosen centroids
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(&points[pick * dim..(pick + 1) * dim]);
        let c = &centroids[start..];
        for (b, p) in best.iter_mut().zip(points.chunks_exact(dim)) {
            let d = l2_squared(p, c);
            if d < *b {
                *b = d;
            }
        }
    }
    centroids
}

/// Gives each empty cluster half of the largest cluster by splitting its
/// centroid into two slightly perturbed copies.
fn repair_empty(centroids: &mut [f32], counts: &mut [usize], dim: usize, rng: &mut ChaCha8Rng) {
    const EPS: f32 = 1.0 / 1024.0;
    for empty in 0..counts.len() {
        if counts[empty] != 0 {
            continue;
        }
        let largest = (0..counts.len()).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap();
        if counts[largest] < 2 {
            continue;
        }
        for d in 0..dim {
            let x = centroids[largest * dim + d];
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            centroids[empty * dim + d] = x * (1.0 + sign * EPS);
            centroids[largest * dim + d] = x * (1.0 - sign * EPS);
        }
        counts[empty] = counts[largest] / 2;
        counts[largest] -= counts[empty];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_corners() {
        let data = [0.0, 0.0, 0.0, 10.0, 10.0, 0.0, 10.0, 10.0];
        let r = kmeans(&data, 2, 4, &KMeansConfig::default());
        let mut got: Vec<(i32, i32)> =
            r.centroids.chunks(2).map(|c| (c[0].round() as i32, c[1].round() as i32)).collect();
        got.sort();
        assert_eq!(got, vec![(0, 0), (0, 10), (10, 0), (10, 10)]);
    }

    #[test]
    fn deterministic_under_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f32> = (0..2000 * 8).map(|_| rng.random::<f32>()).collect();
        let cfg = KMeansConfig { max_iters: 10, seed: 42, max_points_per_centroid: 64 };
        let a = kmeans(&data, 8, 20, &cfg);
        let b = kmeans(&data, 8, 20, &cfg);
        assert_eq!(a.centroids, b.centroids);
    }

    #[test]
    fn duplicate_points_do_not_leave_empty_clusters_unfilled() {
        let data = vec![1.0f32; 50];
        let r = kmeans(&data, 1, 5, &KMeansConfig::default());
        assert_eq!(r.centroids.len(), 5);
        assert!(r.centroids.iter().all(|c| c.is_finite()));
    }
}
