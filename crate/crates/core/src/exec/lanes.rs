//! Two-tier scratch resources: one cached buffer per lane plus a shared
//! pool of larger grants for searches whose demand exceeds the lane cache.

use std::mem::size_of;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Mutex, PoisonError};

use crossbeam::queue::ArrayQueue;
use serde::Serialize;

use crate::index::Candidate;

/// Fixed set of lane ids handed out through a lock-free queue.
#[derive(Debug)]
pub struct LanePool {
    free: ArrayQueue<usize>,
    held: Box<[AtomicBool]>,
}

impl LanePool {
    pub fn new(num_lanes: usize) -> Self {
        assert!(num_lanes >= 1, "need at least one lane");
        let free = ArrayQueue::new(num_lanes);
        for lane in 0..num_lanes {
            free.push(lane).expect("queue sized for every lane");
        }
        Self { free, held: (0..num_lanes).map(|_| AtomicBool::new(false)).collect() }
    }

    pub fn num_lanes(&self) -> usize {
        self.held.len()
    }

    /// A free lane, or `None` when every lane is held. Never blocks.
    pub fn acquire(&self) -> Option<usize> {
        let lane = self.free.pop()?;
        let was_held = self.held[lane].swap(true, Ordering::AcqRel);
        assert!(!was_held, "lane {lane} handed out twice");
        Some(lane)
    }

    pub fn release(&self, lane: usize) {
        let was_held = self.held[lane].swap(false, Ordering::AcqRel);
        assert!(was_held, "lane {lane} released while free");
        self.free.push(lane).expect("released lane fits back into the queue");
    }

    /// Lanes currently held.
    pub fn in_use(&self) -> usize {
        self.num_lanes() - self.free.len()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ResourceStats {
    /// Buffers reserved for lane caches (at startup, or when one had to grow).
    pub lane_reservations: u64,
    pub grants_issued: u64,
    pub grants_returned: u64,
    /// Grant buffers created because none was free.
    pub grant_reservations: u64,
}

/// Overflow buffers recycled between searches.
#[derive(Debug)]
pub struct GrantPool {
    grant_len: usize,
    free: Mutex<Vec<Vec<Candidate>>>,
    issued: AtomicU64,
    returned: AtomicU64,
    reserved: AtomicU64,
}

impl GrantPool {
    pub fn new(grant_bytes: usize) -> Self {
        Self {
            grant_len: candidates_in(grant_bytes),
            free: Mutex::new(Vec::new()),
            issued: AtomicU64::new(0),
            returned: AtomicU64::new(0),
            reserved: AtomicU64::new(0),
        }
    }

    pub fn take(&self) -> Vec<Candidate> {
        self.issued.fetch_add(1, Ordering::Relaxed);
        let recycled = self.free.lock().unwrap_or_else(PoisonError::into_inner).pop();
        recycled.unwrap_or_else(|| {
            self.reserved.fetch_add(1, Ordering::Relaxed);
            Vec::with_capacity(self.grant_len)
        })
    }

    pub fn give_back(&self, mut grant: Vec<Candidate>) {
        grant.clear();
        self.returned.fetch_add(1, Ordering::Relaxed);
        self.free.lock().unwrap_or_else(PoisonError::into_inner).push(grant);
    }

    pub fn stats(&self, lane_reservations: u64) -> ResourceStats {
        ResourceStats {
            lane_reservations,
            grants_issued: self.issued.load(Ordering::Relaxed),
            grants_returned: self.returned.load(Ordering::Relaxed),
            grant_reservations: self.reserved.load(Ordering::Relaxed),
        }
    }
}

/// Candidate records fitting in `bytes`, at least one.
pub fn candidates_in(bytes: usize) -> usize {
    (bytes / size_of::<Candidate>()).max(1)
}

/// Scratch bytes a search over `scan_len` stored vectors may need.
pub fn scratch_demand(scan_len: usize) -> usize {
    scan_len.saturating_mul(size_of::<Candidate>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn exhaustion_and_reuse() {
        let pool = LanePool::new(2);
        let a = pool.acquire().unwrap();
        let b = pool.acquire().unwrap();
        assert_ne!(a, b);
        assert_eq!(pool.acquire(), None);
        pool.release(a);
        assert_eq!(pool.acquire(), Some(a));
        assert_eq!(pool.in_use(), 2);
    }

    #[test]
    #[should_panic(expected = "released while free")]
    fn double_release_panics() {
        let pool = LanePool::new(1);
        let a = pool.acquire().unwrap();
        pool.release(a);
        pool.release(a);
    }

    #[test]
    fn stress_never_double_books() {
        let pool = Arc::new(LanePool::new(8));
        let handles: Vec<_> = (0..16)
            .map(|_| {
                let pool = pool.clone();
                std::thread::spawn(move || {
                    let mut got = 0;
                    while got < 1000 / 16 + 1 {
                        if let Some(l) = pool.acquire() {
                            std::thread::yield_now();
                            pool.release(l);
                            got += 1;
                        }
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(pool.in_use(), 0);
    }

    #[test]
    fn grants_are_recycled() {
        let g = GrantPool::new(1024);
        let a = g.take();
        assert_eq!(a.capacity(), 1024 / size_of::<Candidate>());
        g.give_back(a);
        let b = g.take();
        g.give_back(b);
        let s = g.stats(0);
        assert_eq!((s.grants_issued, s.grants_returned, s.grant_reservations), (2, 2, 1));
    }
}
