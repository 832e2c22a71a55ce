//! The central memory pool: a single up-front arena split into fixed-capacity
//! memory blocks, handed out by an atomic bump cursor.
//!
//! Every block carries a small header (prev/next links, committed size, owner
//! cluster, flags), an id list and an interleaved vector payload. Blocks are
//! never recycled, so a block index stays valid for the lifetime of the pool.

use std::fmt;
use std::io::{self, Write};
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Mutex, MutexGuard};

use serde::{Deserialize, Serialize};

use super::arena::zeroed_slice;
use super::layout::{self, INTERLEAVE_GROUP};
use super::StoreError;

const PREV: usize = 0;
const NEXT: usize = 1;
const SIZE: usize = 2;
const OWNER: usize = 3;
const FLAGS: usize = 4;
const HEADER_WORDS: usize = 5;

const FLAG_MERGED: u32 = 1;

/// Index of a block inside the central pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockId(pub u32);

impl BlockId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    // links are stored as index + 1 so a zeroed header means "absent"
    #[inline]
    fn encode(link: Option<BlockId>) -> u32 {
        link.map_or(0, |b| b.0 + 1)
    }

    #[inline]
    fn decode(word: u32) -> Option<BlockId> {
        word.checked_sub(1).map(BlockId)
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub num_blocks: usize,
    pub block_capacity: usize,
    pub dim: usize,
    /// Vectors per interleave group; 32 outside of unit tests.
    pub interleave_group: usize,
    /// Utilization fraction above which the alert hook fires once.
    pub alert_watermark: f64,
}

impl PoolConfig {
    pub fn new(num_blocks: usize, block_capacity: usize, dim: usize) -> Self {
        Self {
            num_blocks,
            block_capacity,
            dim,
            interleave_group: INTERLEAVE_GROUP,
            alert_watermark: 0.9,
        }
    }

    /// Enough blocks to absorb `vectors` insertions spread over `num_clusters`
    /// lists: every list can leave at most one partially filled block.
    pub fn sized_for(vectors: usize, num_clusters: usize, block_capacity: usize, dim: usize) -> Self {
        let blocks = vectors.div_ceil(block_capacity.max(1)) + num_clusters;
        Self::new(blocks.max(1), block_capacity, dim)
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        let bad = |msg: &str| Err(StoreError::InvalidConfig(msg.to_string()));
        if self.num_blocks == 0 {
            return bad("num_blocks must be at least 1");
        }
        if self.num_blocks >= u32::MAX as usize {
            return bad("num_blocks must fit a 32-bit block index");
        }
        if self.block_capacity == 0 {
            return bad("block_capacity must be at least 1");
        }
        if self.dim == 0 {
            return bad("dim must be at least 1");
        }
        if self.interleave_group == 0 {
            return bad("interleave_group must be at least 1");
        }
        if !(self.alert_watermark > 0.0 && self.alert_watermark <= 1.0) {
            return bad("alert_watermark must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn block_scalars(&self) -> usize {
        self.block_capacity * self.dim
    }

    /// Bytes reserved by the arena (payload, ids and headers), if representable.
    pub fn arena_bytes(&self) -> Option<usize> {
        let payload = self.num_blocks.checked_mul(self.block_scalars())?.checked_mul(4)?;
        let ids = self.num_blocks.checked_mul(self.block_capacity)?.checked_mul(8)?;
        let headers = self.num_blocks.checked_mul(HEADER_WORDS * 4)?;
        payload.checked_add(ids)?.checked_add(headers)
    }
}

/// Snapshot of a block header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockHeader {
    pub prev: Option<BlockId>,
    pub next: Option<BlockId>,
    pub capacity: usize,
    /// Committed (search-visible) slot count.
    pub size: usize,
    pub owner: Option<u32>,
    /// Set when rearrangement placed this block physically right after its predecessor.
    pub merged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Utilization {
    pub allocated: usize,
    pub num_blocks: usize,
}

impl Utilization {
    pub fn fraction(&self) -> f64 {
        self.allocated as f64 / self.num_blocks as f64
    }
}

type AlertHook = Box<dyn Fn(Utilization) + Send + Sync>;

/// Result of walking a block list.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WalkStats {
    pub blocks: usize,
    /// Header jumps followed; a merged successor is read in place and is not a hop.
    pub hops: usize,
    pub vectors: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ListTraversal {
    pub entries: Vec<(u64, Vec<f32>)>,
    pub stats: WalkStats,
}

pub struct CentralMemoryPool {
    config: PoolConfig,
    cursor: AtomicUsize,
    headers: Box<[AtomicU32]>,
    // id + 1 per slot; 0 marks a slot whose write has not been published
    ids: Box<[AtomicU64]>,
    payload: Box<[AtomicU32]>,
    alert_fired: AtomicBool,
    alert: Option<AlertHook>,
}

impl fmt::Debug for CentralMemoryPool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CentralMemoryPool")
            .field("config", &self.config)
            .field("cursor", &self.cursor())
            .finish_non_exhaustive()
    }
}

impl CentralMemoryPool {
    pub fn new(config: PoolConfig) -> Result<Self, StoreError> {
        config.validate()?;
        let too_big = || StoreError::ArenaReservation { bytes: usize::MAX };
        let slots = config.num_blocks.checked_mul(config.block_capacity).ok_or_else(too_big)?;
        let scalars = slots.checked_mul(config.dim).ok_or_else(too_big)?;
        let headers = zeroed_slice(config.num_blocks * HEADER_WORDS)?;
        let ids = zeroed_slice(slots)?;
        let payload = zeroed_slice(scalars)?;
        Ok(Self {
            config,
            cursor: AtomicUsize::new(0),
            headers,
            ids,
            payload,
            alert_fired: AtomicBool::new(false),
            alert: None,
        })
    }

    /// Installs the utilization alert hook. Without one, the alert is logged.
    pub fn with_alert(mut self, hook: impl Fn(Utilization) + Send + Sync + 'static) -> Self {
        self.alert = Some(Box::new(hook));
        self
    }

    pub fn config(&self) -> &PoolConfig {
        &self.config
    }

    pub fn capacity(&self) -> usize {
        self.config.block_capacity
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn cursor(&self) -> usize {
        self.cursor.load(Ordering::Acquire)
    }

    pub fn utilization(&self) -> Utilization {
        Utilization { allocated: self.cursor(), num_blocks: self.config.num_blocks }
    }

    /// Hands out the next block. Lock-free; a failed call does not advance the cursor.
    pub fn alloc_block(&self) -> Result<BlockId, StoreError> {
        let n = self.config.num_blocks;
        let mut cur = self.cursor.load(Ordering::Acquire);
        loop {
            if cur >= n {
                return Err(StoreError::PoolExhausted { num_blocks: n });
            }
            match self.cursor.compare_exchange_weak(cur, cur + 1, Ordering::AcqRel, Ordering::Acquire) {
                Ok(_) => break,
                Err(actual) => cur = actual,
            }
        }
        let util = Utilization { allocated: cur + 1, num_blocks: n };
        if util.fraction() > self.config.alert_watermark && !self.alert_fired.swap(true, Ordering::AcqRel) {
            match &self.alert {
                Some(hook) => hook(util),
                None => log::warn!(
                    "memory pool utilization {:.1}% crossed the {:.0}% watermark",
                    util.fraction() * 100.0,
                    self.config.alert_watermark * 100.0
                ),
            }
        }
        Ok(BlockId(cur as u32))
    }

    #[inline]
    fn word(&self, block: BlockId, field: usize) -> &AtomicU32 {
        &self.headers[block.index() * HEADER_WORDS + field]
    }

    #[inline]
    fn slot_ids(&self, block: BlockId) -> &[AtomicU64] {
        let cap = self.config.block_capacity;
        &self.ids[block.index() * cap..(block.index() + 1) * cap]
    }

    #[inline]
    fn block_payload(&self, block: BlockId) -> &[AtomicU32] {
        let n = self.config.block_scalars();
        &self.payload[block.index() * n..(block.index() + 1) * n]
    }

    fn check_allocated(&self, block: BlockId) -> Result<(), StoreError> {
        if block.index() < self.cursor() {
            Ok(())
        } else {
            Err(StoreError::UnknownBlock { block: block.0 })
        }
    }

    pub fn header(&self, block: BlockId) -> BlockHeader {
        BlockHeader {
            prev: self.prev(block),
            next: self.next(block),
            capacity: self.config.block_capacity,
            size: self.size(block),
            owner: self.owner(block),
            merged: self.is_merged(block),
        }
    }

    #[inline]
    pub fn prev(&self, block: BlockId) -> Option<BlockId> {
        BlockId::decode(self.word(block, PREV).load(Ordering::Acquire))
    }

    #[inline]
    pub fn next(&self, block: BlockId) -> Option<BlockId> {
        BlockId::decode(self.word(block, NEXT).load(Ordering::Acquire))
    }

    /// Committed slot count.
    #[inline]
    pub fn size(&self, block: BlockId) -> usize {
        self.word(block, SIZE).load(Ordering::Acquire) as usize
    }

    #[inline]
    pub fn owner(&self, block: BlockId) -> Option<u32> {
        self.word(block, OWNER).load(Ordering::Acquire).checked_sub(1)
    }

    #[inline]
    pub fn is_merged(&self, block: BlockId) -> bool {
        self.word(block, FLAGS).load(Ordering::Acquire) & FLAG_MERGED != 0
    }

    pub(crate) fn set_owner(&self, block: BlockId, cluster: u32) {
        self.word(block, OWNER).store(cluster + 1, Ordering::Release);
    }

    pub(crate) fn set_merged(&self, block: BlockId, merged: bool) {
        let w = self.word(block, FLAGS);
        if merged {
            w.fetch_or(FLAG_MERGED, Ordering::AcqRel);
        } else {
            w.fetch_and(!FLAG_MERGED, Ordering::AcqRel);
        }
    }

    fn set_prev(&self, block: BlockId, prev: Option<BlockId>) {
        self.word(block, PREV).store(BlockId::encode(prev), Ordering::Release);
    }

    fn set_next(&self, block: BlockId, next: Option<BlockId>) {
        self.word(block, NEXT).store(BlockId::encode(next), Ordering::Release);
    }

    /// Appends `fresh` after `tail`.
    pub fn link_blocks(&self, tail: BlockId, fresh: BlockId) -> Result<(), StoreError> {
        self.check_allocated(tail)?;
        self.check_allocated(fresh)?;
        if tail == fresh || self.prev(fresh).is_some() || self.next(fresh).is_some() {
            return Err(StoreError::NotFresh { block: fresh.0 });
        }
        self.word(tail, NEXT)
            .compare_exchange(0, BlockId::encode(Some(fresh)), Ordering::AcqRel, Ordering::Acquire)
            .map_err(|_| StoreError::AlreadyLinked { block: tail.0 })?;
        self.set_prev(fresh, Some(tail));
        Ok(())
    }

    /// Stores `id` and `vector` in `slot`, then advances the committed size
    /// over every contiguous published slot.
    pub fn write_slot(&self, block: BlockId, slot: usize, id: u64, vector: &[f32]) -> Result<(), StoreError> {
        self.check_allocated(block)?;
        let cap = self.config.block_capacity;
        if slot >= cap {
            return Err(StoreError::SlotOutOfBounds { slot, capacity: cap });
        }
        if vector.len() != self.config.dim {
            return Err(StoreError::DimensionMismatch { expected: self.config.dim, got: vector.len() });
        }
        if id == u64::MAX {
            return Err(StoreError::InvalidId);
        }
        let ids = self.slot_ids(block);
        if ids[slot].load(Ordering::Acquire) != 0 {
            return Err(StoreError::SlotOccupied { block: block.0, slot });
        }
        let payload = self.block_payload(block);
        let (dim, group) = (self.config.dim, self.config.interleave_group);
        for (d, &x) in vector.iter().enumerate() {
            payload[layout::interleaved_offset(slot, d, dim, cap, group)].store(x.to_bits(), Ordering::Relaxed);
        }
        ids[slot]
            .compare_exchange(0, id + 1, Ordering::SeqCst, Ordering::SeqCst)
            .map_err(|_| StoreError::SlotOccupied { block: block.0, slot })?;
        self.commit_prefix(block);
        Ok(())
    }

    fn commit_prefix(&self, block: BlockId) {
        let cap = self.config.block_capacity;
        let ids = self.slot_ids(block);
        let size = self.word(block, SIZE);
        let mut s = size.load(Ordering::SeqCst) as usize;
        while s < cap && ids[s].load(Ordering::SeqCst) != 0 {
            match size.compare_exchange(s as u32, s as u32 + 1, Ordering::SeqCst, Ordering::SeqCst) {
                Ok(_) => s += 1,
                Err(actual) => s = actual as usize,
            }
        }
    }

    pub fn read_slot(&self, block: BlockId, slot: usize) -> Result<(u64, Vec<f32>), StoreError> {
        self.check_allocated(block)?;
        let size = self.size(block);
        if slot >= size {
            return Err(StoreError::ReadOutOfBounds { slot, size });
        }
        let mut v = vec![0f32; self.config.dim];
        let id = self.read_slot_into(block, slot, &mut v);
        Ok((id, v))
    }

    /// Unchecked variant for slots already known to be committed.
    pub(crate) fn read_slot_into(&self, block: BlockId, slot: usize, out: &mut [f32]) -> u64 {
        let id = self.slot_ids(block)[slot].load(Ordering::Acquire) - 1;
        let c = &self.config;
        layout::gather(self.block_payload(block), slot, c.dim, c.block_capacity, c.interleave_group, out);
        id
    }

    /// Squared L2 distances from `query` to every committed vector of `block`.
    pub fn scan_block<F: FnMut(u64, f32)>(&self, block: BlockId, query: &[f32], mut emit: F) -> usize {
        let size = self.size(block);
        let ids = self.slot_ids(block);
        let c = &self.config;
        layout::scan_interleaved(self.block_payload(block), query, c.block_capacity, size, c.interleave_group, |slot, d| {
            emit(ids[slot].load(Ordering::Acquire) - 1, d)
        });
        size
    }

    /// Visits every block of the list starting at `head`, in link order.
    pub fn walk_list<F: FnMut(BlockId)>(&self, head: BlockId, mut visit: F) -> Result<WalkStats, StoreError> {
        let mut stats = WalkStats::default();
        let mut cur = Some(head);
        let limit = self.cursor();
        while let Some(b) = cur {
            if stats.blocks >= limit {
                return Err(StoreError::Corruption(format!("cycle detected in list starting at block {head}")));
            }
            if stats.blocks > 0 && !self.is_merged(b) {
                stats.hops += 1;
            }
            stats.blocks += 1;
            stats.vectors += self.size(b);
            visit(b);
            cur = self.next(b);
        }
        Ok(stats)
    }

    /// All committed (id, vector) pairs of the list in block then slot order.
    pub fn traverse_list(&self, head: BlockId) -> Result<ListTraversal, StoreError> {
        self.check_allocated(head)?;
        if self.prev(head).is_some() {
            return Err(StoreError::NotAHead { block: head.0 });
        }
        let mut entries = Vec::new();
        let dim = self.config.dim;
        let stats = self.walk_list(head, |b| {
            for slot in 0..self.size(b) {
                let mut v = vec![0f32; dim];
                let id = self.read_slot_into(b, slot, &mut v);
                entries.push((id, v));
            }
        })?;
        Ok(ListTraversal { entries, stats })
    }

    /// Exchanges the physical placement of blocks `p` and `q`, keeping every
    /// list's logical order. Contents and headers are swapped through
    /// `scratch`, links that referenced either block are renamed, and merged
    /// flags that no longer describe a physical adjacency are cleared.
    ///
    /// Callers must exclude readers and writers of the lists owning `p` and `q`.
    pub(crate) fn swap_blocks(&self, p: BlockId, q: BlockId, scratch: &mut ScratchSegment) -> SwapReport {
        debug_assert_ne!(p, q);
        let mut report = SwapReport::default();
        let neighbours = |b: BlockId| [self.prev(b), self.next(b)];
        let mut touched: Vec<BlockId> = vec![p, q];
        touched.extend(neighbours(p).into_iter().flatten());
        touched.extend(neighbours(q).into_iter().flatten());

        scratch.load_from(self, p);
        self.copy_block(q, p);
        scratch.store_into(self, q);
        report.scalars_moved = 3 * self.config.block_scalars();

        let rename = |link: Option<BlockId>| match link {
            Some(b) if b == p => Some(q),
            Some(b) if b == q => Some(p),
            other => other,
        };
        for b in [p, q] {
            self.set_prev(b, rename(self.prev(b)));
            self.set_next(b, rename(self.next(b)));
        }
        for b in [p, q] {
            if let Some(pr) = self.prev(b) {
                self.set_next(pr, Some(b));
            }
            if let Some(nx) = self.next(b) {
                self.set_prev(nx, Some(b));
            }
        }
        touched.extend(neighbours(p).into_iter().flatten());
        touched.extend(neighbours(q).into_iter().flatten());
        touched.sort();
        touched.dedup();
        for b in touched {
            if self.is_merged(b) && self.prev(b).map(|pr| pr.0 + 1) != Some(b.0) {
                self.set_merged(b, false);
                report.split.push(b);
            }
        }
        report
    }

    fn copy_block(&self, from: BlockId, to: BlockId) {
        for f in 0..HEADER_WORDS {
            self.word(to, f).store(self.word(from, f).load(Ordering::Acquire), Ordering::Release);
        }
        for (dst, src) in self.slot_ids(to).iter().zip(self.slot_ids(from)) {
            dst.store(src.load(Ordering::Acquire), Ordering::Release);
        }
        for (dst, src) in self.block_payload(to).iter().zip(self.block_payload(from)) {
            dst.store(src.load(Ordering::Relaxed), Ordering::Relaxed);
        }
    }

    /// One line per allocated block: `index prev next size ids`.
    pub fn dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        let show = |b: Option<BlockId>| b.map_or("-".to_string(), |b| b.to_string());
        for i in 0..self.cursor() {
            let b = BlockId(i as u32);
            let ids: Vec<String> = (0..self.size(b))
                .map(|s| (self.slot_ids(b)[s].load(Ordering::Acquire) - 1).to_string())
                .collect();
            writeln!(w, "{} {} {} {} {}", i, show(self.prev(b)), show(self.next(b)), self.size(b), ids.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct SwapReport {
    /// Blocks whose merged flag was cleared because their predecessor moved.
    pub split: Vec<BlockId>,
    pub scalars_moved: usize,
}

/// Temporary segment holding one block's content during a swap.
#[derive(Debug)]
pub struct ScratchSegment {
    header: [u32; HEADER_WORDS],
    ids: Vec<u64>,
    payload: Vec<u32>,
}

impl ScratchSegment {
    fn load_from(&mut self, pool: &CentralMemoryPool, b: BlockId) {
        for (f, h) in self.header.iter_mut().enumerate() {
            *h = pool.word(b, f).load(Ordering::Acquire);
        }
        for (dst, src) in self.ids.iter_mut().zip(pool.slot_ids(b)) {
            *dst = src.load(Ordering::Acquire);
        }
        for (dst, src) in self.payload.iter_mut().zip(pool.block_payload(b)) {
            *dst = src.load(Ordering::Relaxed);
        }
    }

    fn store_into(&self, pool: &CentralMemoryPool, b: BlockId) {
        for (f, &h) in self.header.iter().enumerate() {
            pool.word(b, f).store(h, Ordering::Release);
        }
        for (dst, &src) in pool.slot_ids(b).iter().zip(&self.ids) {
            dst.store(src, Ordering::Release);
        }
        for (dst, &src) in pool.block_payload(b).iter().zip(&self.payload) {
            dst.store(src, Ordering::Relaxed);
        }
    }
}

/// Small dedicated arena for rearrangement temporaries, separate from the
/// main pool. Holding the segment also serializes rearrangements.
#[derive(Debug)]
pub struct ScratchArena {
    segment: Mutex<ScratchSegment>,
}

impl ScratchArena {
    pub fn new(config: &PoolConfig) -> Self {
        Self {
            segment: Mutex::new(ScratchSegment {
                header: [0; HEADER_WORDS],
                ids: vec![0; config.block_capacity],
                payload: vec![0; config.block_scalars()],
            }),
        }
    }

    /// `None` when another rearrangement holds the segment.
    pub fn try_acquire(&self) -> Option<MutexGuard<'_, ScratchSegment>> {
        self.segment.try_lock().ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::sync::Arc;

    fn pool(blocks: usize, cap: usize, dim: usize) -> CentralMemoryPool {
        CentralMemoryPool::new(PoolConfig::new(blocks, cap, dim)).unwrap()
    }

    #[test]
    fn fresh_pool() {
        let p = pool(8, 4, 2);
        assert_eq!(p.cursor(), 0);
        assert_eq!(p.utilization().allocated, 0);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(CentralMemoryPool::new(PoolConfig::new(0, 4, 2)).is_err());
        assert!(CentralMemoryPool::new(PoolConfig::new(4, 0, 2)).is_err());
        assert!(CentralMemoryPool::new(PoolConfig::new(4, 4, 0)).is_err());
        let mut c = PoolConfig::new(4, 4, 2);
        c.alert_watermark = 0.0;
        assert!(CentralMemoryPool::new(c.clone()).is_err());
        c.alert_watermark = 1.5;
        assert!(CentralMemoryPool::new(c).is_err());
    }

    #[test]
    fn bump_allocation_and_exhaustion() {
        let p = pool(2, 4, 2);
        assert_eq!(p.alloc_block().unwrap(), BlockId(0));
        assert_eq!(p.cursor(), 1);
        assert_eq!(p.alloc_block().unwrap(), BlockId(1));
        assert!(matches!(p.alloc_block(), Err(StoreError::PoolExhausted { num_blocks: 2 })));
        assert_eq!(p.cursor(), 2, "failed allocation must not consume an index");
    }

    #[test]
    fn alert_fires_once_past_watermark() {
        let hits = Arc::new(AtomicUsize::new(0));
        let h = hits.clone();
        let p = pool(10, 1, 1).with_alert(move |u| {
            assert!(u.fraction() > 0.9);
            h.fetch_add(1, Ordering::SeqCst);
        });
        for _ in 0..9 {
            p.alloc_block().unwrap();
        }
        assert_eq!(hits.load(Ordering::SeqCst), 0);
        p.alloc_block().unwrap();
        assert_eq!(hits.load(Ordering::SeqCst), 1);
        assert!(p.alloc_block().is_err());
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn concurrent_allocation_is_a_permutation_of_the_prefix() {
        let p = Arc::new(pool(64, 1, 1));
        let handles: Vec<_> = (0..64)
            .map(|_| {
                let p = p.clone();
                std::thread::spawn(move || p.alloc_block().unwrap().0)
            })
            .collect();
        let got: HashSet<u32> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert_eq!(got, (0..64).collect());
        assert!(p.alloc_block().is_err());
    }

    #[test]
    fn linking_and_traversal_order() {
        let p = pool(4, 2, 1);
        let b: Vec<_> = (0..3).map(|_| p.alloc_block().unwrap()).collect();
        p.link_blocks(b[0], b[1]).unwrap();
        p.link_blocks(b[1], b[2]).unwrap();
        for (blk, ids) in b.iter().zip([[0u64, 2], [6, 7], [9, 10]]) {
            for (slot, id) in ids.iter().enumerate() {
                p.write_slot(*blk, slot, *id, &[*id as f32]).unwrap();
            }
        }
        let t = p.traverse_list(b[0]).unwrap();
        let ids: Vec<u64> = t.entries.iter().map(|e| e.0).collect();
        assert_eq!(ids, vec![0, 2, 6, 7, 9, 10]);
        assert_eq!(t.stats.hops, 2);
        assert_eq!(t.stats.blocks, 3);
        assert!(matches!(p.traverse_list(b[1]), Err(StoreError::NotAHead { .. })));
    }

    #[test]
    fn double_link_rejected() {
        let p = pool(4, 2, 1);
        let a = p.alloc_block().unwrap();
        let b = p.alloc_block().unwrap();
        let c = p.alloc_block().unwrap();
        p.link_blocks(a, b).unwrap();
        assert!(p.link_blocks(a, b).is_err());
        assert!(matches!(p.link_blocks(a, c), Err(StoreError::AlreadyLinked { .. })));
    }

    #[test]
    fn slot_layout_matches_offsets() {
        let p = pool(1, 64, 2);
        let b = p.alloc_block().unwrap();
        p.write_slot(b, 0, 1, &[7.0, 9.0]).unwrap();
        p.write_slot(b, 1, 2, &[3.0, 4.0]).unwrap();
        p.write_slot(b, 32, 3, &[5.0, 6.0]).unwrap();
        let raw = p.block_payload(b);
        let at = |i: usize| f32::from_bits(raw[i].load(Ordering::Relaxed));
        assert_eq!((at(0), at(32)), (7.0, 9.0));
        assert_eq!((at(1), at(33)), (3.0, 4.0));
        assert_eq!((at(64), at(96)), (5.0, 6.0));
    }

    #[test]
    fn slot_errors() {
        let p = pool(1, 4, 2);
        let b = p.alloc_block().unwrap();
        assert!(matches!(p.read_slot(b, 0), Err(StoreError::ReadOutOfBounds { .. })));
        assert!(matches!(p.write_slot(b, 4, 0, &[0.0, 0.0]), Err(StoreError::SlotOutOfBounds { .. })));
        assert!(matches!(p.write_slot(b, 0, 0, &[0.0]), Err(StoreError::DimensionMismatch { .. })));
        p.write_slot(b, 0, 5, &[7.0, 9.0]).unwrap();
        assert_eq!(p.read_slot(b, 0).unwrap(), (5, vec![7.0, 9.0]));
        assert!(matches!(p.write_slot(b, 0, 6, &[1.0, 1.0]), Err(StoreError::SlotOccupied { .. })));
        assert!(matches!(p.write_slot(BlockId(3), 0, 6, &[1.0, 1.0]), Err(StoreError::UnknownBlock { .. })));
    }

    #[test]
    fn committed_size_covers_only_a_contiguous_prefix() {
        let p = pool(1, 4, 1);
        let b = p.alloc_block().unwrap();
        p.write_slot(b, 1, 11, &[1.0]).unwrap();
        assert_eq!(p.size(b), 0);
        p.write_slot(b, 0, 10, &[0.0]).unwrap();
        assert_eq!(p.size(b), 2);
        p.write_slot(b, 3, 13, &[3.0]).unwrap();
        assert_eq!(p.size(b), 2);
        p.write_slot(b, 2, 12, &[2.0]).unwrap();
        assert_eq!(p.size(b), 4);
    }

    #[test]
    fn hop_count_follows_block_formula() {
        for (n, cap) in [(1usize, 4usize), (4, 4), (5, 4), (17, 4), (100, 7)] {
            let p = pool(n.div_ceil(cap), cap, 1);
            let mut blocks: Vec<BlockId> = Vec::new();
            for i in 0..n {
                if i % cap == 0 {
                    let b = p.alloc_block().unwrap();
                    if let Some(&t) = blocks.last() {
                        p.link_blocks(t, b).unwrap();
                    }
                    blocks.push(b);
                }
                p.write_slot(*blocks.last().unwrap(), i % cap, i as u64, &[i as f32]).unwrap();
            }
            let t = p.traverse_list(blocks[0]).unwrap();
            assert_eq!(t.stats.hops, n.div_ceil(cap) - 1);
            assert_eq!(t.entries.len(), n);
        }
    }

    #[test]
    fn swap_keeps_logical_order_for_adjacent_blocks() {
        // list: 0 -> 2 -> 1, swapping physical 1 and 2 gives 0 -> 1 -> 2
        let p = pool(3, 1, 1);
        let b: Vec<_> = (0..3).map(|_| p.alloc_block().unwrap()).collect();
        p.link_blocks(b[0], b[2]).unwrap();
        p.link_blocks(b[2], b[1]).unwrap();
        for (blk, id) in [(0u32, 100u64), (2, 200), (1, 300)] {
            p.write_slot(BlockId(blk), 0, id, &[id as f32]).unwrap();
        }
        let arena = ScratchArena::new(p.config());
        let mut s = arena.try_acquire().unwrap();
        p.swap_blocks(BlockId(1), BlockId(2), &mut s);
        let t = p.traverse_list(BlockId(0)).unwrap();
        assert_eq!(t.entries.iter().map(|e| e.0).collect::<Vec<_>>(), vec![100, 200, 300]);
        assert_eq!(p.next(BlockId(0)), Some(BlockId(1)));
        assert_eq!(p.next(BlockId(1)), Some(BlockId(2)));
        assert_eq!(p.next(BlockId(2)), None);
        assert!(arena.try_acquire().is_none());
    }

    #[test]
    fn dump_format() {
        let p = pool(2, 2, 1);
        let a = p.alloc_block().unwrap();
        let b = p.alloc_block().unwrap();
        p.link_blocks(a, b).unwrap();
        p.write_slot(a, 0, 4, &[0.0]).unwrap();
        p.write_slot(a, 1, 5, &[0.0]).unwrap();
        let mut out = Vec::new();
        p.dump(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "0 - 1 2 4,5\n1 0 - 0 \n");
    }

    #[test]
    #[ignore = "reserves the full SIFT1M-scale arena; run manually on a large machine"]
    fn sift1m_scale_pool() {
        let c = PoolConfig::new(4000 * 1_000_000usize.div_ceil(1024), 1024, 128);
        let p = CentralMemoryPool::new(c).unwrap();
        assert_eq!(p.cursor(), 0);
    }

    #[test]
    fn sift1m_scale_sizing() {
        let c = PoolConfig::new(4000 * 1_000_000usize.div_ceil(1024), 1024, 128);
        c.validate().unwrap();
        assert_eq!(c.num_blocks, 3_908_000);
        assert_eq!(c.arena_bytes(), Some(3_908_000 * (1024 * 128 * 4 + 1024 * 8 + 20)));
    }
}
