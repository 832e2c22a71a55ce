//! Block-based in-place insertion for IVF-flat approximate nearest neighbor search.

pub mod exec;
pub mod harness;
pub mod index;
pub mod store;

pub use index::{AnnIndex, Backend, BaselineIvfIndex, BlockIvfIndex, IndexConfig, IndexError, SearchResult};
