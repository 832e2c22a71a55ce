//! Pre-partitioned block storage for online inverted lists.

mod arena;
pub mod layout;
mod pool;

pub use layout::{interleaved_offset, InterleavedSegment, INTERLEAVE_GROUP};
pub use pool::{
    BlockHeader, BlockId, CentralMemoryPool, ListTraversal, PoolConfig, ScratchArena, ScratchSegment, SwapReport,
    Utilization, WalkStats,
};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("invalid pool config: {0}")]
    InvalidConfig(String),
    #[error("could not reserve a {bytes}-byte arena")]
    ArenaReservation { bytes: usize },
    #[error("memory pool exhausted: all {num_blocks} blocks allocated")]
    PoolExhausted { num_blocks: usize },
    #[error("block {block} already has a successor")]
    AlreadyLinked { block: u32 },
    #[error("block {block} is already part of a list")]
    NotFresh { block: u32 },
    #[error("block {block} is not a list head")]
    NotAHead { block: u32 },
    #[error("block {block} has not been allocated")]
    UnknownBlock { block: u32 },
    #[error("slot {slot} out of bounds for block capacity {capacity}")]
    SlotOutOfBounds { slot: usize, capacity: usize },
    #[error("slot {slot} of block {block} is already occupied")]
    SlotOccupied { block: u32, slot: usize },
    #[error("slot {slot} is not committed (block size {size})")]
    ReadOutOfBounds { slot: usize, size: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("id u64::MAX is reserved")]
    InvalidId,
    #[error("corrupted block list: {0}")]
    Corruption(String),
}
