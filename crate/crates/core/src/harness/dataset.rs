//! Seeded synthetic data with the same interface as file-backed datasets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Zipf};
use serde::{Deserialize, Serialize};

use super::vecs::Dataset;
use crate::index::IvfModel;

/// Isotropic Gaussian mixture with uniformly placed component means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub n: usize,
    pub dim: usize,
    pub components: usize,
    /// Component means are drawn from `[0, extent)` per dimension.
    pub extent: f32,
    pub spread: f32,
    pub seed: u64,
}

impl MixtureSpec {
    /// 10,000 vectors of dimension 128, shaped like the small SIFT base set.
    pub fn sift_small(seed: u64) -> Self {
        Self { n: 10_000, dim: 128, components: 64, extent: 100.0, spread: 12.0, seed }
    }
}

pub fn gaussian_mixture(spec: &MixtureSpec) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means: Vec<f32> =
        (0..spec.components.max(1) * spec.dim).map(|_| rng.random::<f32>() * spec.extent).collect();
    let noise = Normal::new(0.0f32, spec.spread.max(f32::MIN_POSITIVE)).expect("finite spread");
    let mut vectors = Vec::with_capacity(spec.n * spec.dim);
    for _ in 0..spec.n {
        let c = rng.random_range(0..spec.components.max(1));
        let mean = &means[c * spec.dim..(c + 1) * spec.dim];
        vectors.extend(mean.iter().map(|m| m + noise.sample(&mut rng)));
    }
    Dataset::new(spec.dim, vectors)
}

/// Base, query and held-out insertion sets drawn from one mixture.
#[derive(Debug, Clone)]
pub struct Split {
    pub base: Dataset,
    pub queries: Dataset,
    pub held_out: Dataset,
}

pub fn mixture_split(spec: &MixtureSpec, queries: usize, held_out: usize) -> Split {
    let all = gaussian_mixture(&MixtureSpec { n: spec.n + queries + held_out, ..spec.clone() });
    Split {
        base: all.slice(0..spec.n),
        queries: all.slice(spec.n..spec.n + queries),
        held_out: all.slice(spec.n + queries..spec.n + queries + held_out),
    }
}

/// Reorders `source` into a stream whose cluster choice follows a Zipf law
/// with the given exponent: a seeded ranking of clusters is drawn, each draw
/// picks a rank, and the next unused vector of that cluster is emitted.
/// Clusters that run dry restart from their first vector.
///
/// The skew stands in for production hot-key traffic; it is not derived from
/// any real insertion log.
pub fn zipf_stream(model: &IvfModel, source: &Dataset, count: usize, exponent: f64, seed: u64) -> Dataset {
    let dim = source.dim;
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); model.num_clusters()];
    for i in 0..source.len() {
        let c = model.assign(source.row(i)).expect("source matches model dimension");
        buckets[c].push(i);
    }
    let mut ranked: Vec<usize> = (0..buckets.len()).filter(|&c| !buckets[c].is_empty()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ranked.shuffle(&mut rng);
    if ranked.is_empty() || count == 0 {
        return Dataset::new(dim, Vec::new());
    }
    let zipf = Zipf::new(ranked.len() as f64, exponent).expect("valid Zipf parameters");
    let mut cursor = vec![0usize; buckets.len()];
    let mut out = Vec::with_capacity(count * dim);
    for _ in 0..count {
        let rank = (zipf.sample(&mut rng) as usize).clamp(1, ranked.len()) - 1;
        let c = ranked[rank];
        let i = buckets[c][cursor[c] % buckets[c].len()];
        cursor[c] += 1;
        out.extend_from_slice(source.row(i));
    }
    Dataset::new(dim, out)
}
