//! Benchmark harness: datasets, ground truth, workload replay and reports.

pub mod dataset;
pub mod experiments;
pub mod oracle;
pub mod report;
pub mod vecs;
pub mod workload;

pub use dataset::{gaussian_mixture, mixture_split, zipf_stream, MixtureSpec, Split};
pub use oracle::{exact_knn, ground_truth, recall_at_k, Neighbor};
pub use report::{emit, Format, LatencyStats, RearrangeTable, ReplayReport, Report, SweepReport, WorkloadReport};
pub use vecs::{load_fvecs, load_ivecs, save_fvecs, save_ivecs, Dataset, VecsError};
pub use workload::{replay, schedule, Arrival, ReplayInput, WorkloadSpec};

use crate::exec::ExecError;
use crate::index::IndexError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Vecs(#[from] VecsError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("invalid workload: {0}")]
    InvalidSpec(String),
    #[error("mismatched inputs: {0}")]
    Mismatch(String),
}
