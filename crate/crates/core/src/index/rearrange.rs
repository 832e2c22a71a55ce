//! Online defragmentation of block lists.
//!
//! A list is walked from its head along the run of blocks that already sit
//! physically after their predecessor. The first block that breaks the run is
//! swapped into the slot right after the run, evicting whatever block lives
//! there into the vacated position. A block that starts another list's run is
//! never evicted, so a step grows the run of the list being rearranged
//! without shortening anyone else's.

use std::sync::atomic::Ordering;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::block::BlockIvfIndex;
use super::{AnnIndex, IndexError};
use crate::store::{BlockId, ScratchSegment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RearrangeOutcome {
    /// Merge steps were attempted; `steps` of them changed the layout.
    Done { steps: usize, hops_before: usize, hops_after: usize },
    /// The scratch arena was busy with another rearrangement.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RearrangeEvent {
    pub cluster: usize,
    pub outcome: RearrangeOutcome,
    #[serde(with = "duration_us")]
    pub cost: Duration,
}

mod duration_us {
    use serde::Serializer;
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_micros() as u64)
    }
}

enum Step {
    Merged { moved: usize },
    Blocked,
}

impl BlockIvfIndex {
    /// Whether cluster `k` holds more online vectors than the rearrangement threshold.
    pub fn exceed(&self, k: usize) -> bool {
        self.online_len(k) > self.config().rearrange_threshold
    }

    /// Rearranges cluster `k` until its list is contiguous or no further step applies.
    pub fn rearrange(&self, k: usize) -> Result<RearrangeOutcome, IndexError> {
        self.run(k, usize::MAX)
    }

    /// Performs at most one merge step on cluster `k`.
    pub fn rearrange_step(&self, k: usize) -> Result<RearrangeOutcome, IndexError> {
        self.run(k, 1)
    }

    /// Rearranges every dirty cluster over the threshold.
    pub(crate) fn rearrange_sweep(&self) -> Vec<RearrangeEvent> {
        let mut events = Vec::new();
        for k in 0..self.num_clusters() {
            let dirty = &self.clusters[k].dirty;
            if !self.exceed(k) || !dirty.swap(false, Ordering::AcqRel) {
                continue;
            }
            let start = Instant::now();
            match self.rearrange(k) {
                Ok(outcome) => {
                    if outcome == RearrangeOutcome::Skipped {
                        dirty.store(true, Ordering::Release);
                    }
                    events.push(RearrangeEvent { cluster: k, outcome, cost: start.elapsed() });
                }
                Err(e) => {
                    dirty.store(true, Ordering::Release);
                    log::error!("rearranging cluster {k} failed: {e}");
                }
            }
        }
        events
    }

    fn run(&self, k: usize, max_steps: usize) -> Result<RearrangeOutcome, IndexError> {
        if k >= self.num_clusters() {
            return Err(IndexError::InvalidArgument(format!("cluster {k} out of range")));
        }
        let Some(mut scratch) = self.scratch.try_acquire() else {
            return Ok(RearrangeOutcome::Skipped);
        };
        let start = Instant::now();
        let hops_before = self.list_stats(k)?.hops;
        let bound = self.pool.cursor() + 1;
        let (mut steps, mut moved) = (0, 0);
        while steps < max_steps.min(bound) {
            match self.merge_step(k, &mut scratch)? {
                Step::Merged { moved: m } => {
                    steps += 1;
                    moved += m;
                }
                Step::Blocked => break,
            }
        }
        let hops_after = self.list_stats(k)?.hops;
        if steps > 0 {
            self.costs.add_rearrangement(steps, moved, start.elapsed());
        }
        Ok(RearrangeOutcome::Done { steps, hops_before, hops_after })
    }

    fn merge_step(&self, k: usize, scratch: &mut ScratchSegment) -> Result<Step, IndexError> {
        let pool = &self.pool;
        let own = &self.clusters[k];
        let _own = own.write();
        let Some(mut mi) = own.head() else { return Ok(Step::Blocked) };
        while let Some(n) = pool.next(mi).filter(|&n| pool.is_merged(n)) {
            mi = n;
        }
        let Some(mj) = pool.next(mi) else { return Ok(Step::Blocked) };
        let t = BlockId(mi.0 + 1);
        if mj == t {
            pool.set_merged(t, true);
            return Ok(Step::Merged { moved: 0 });
        }
        if t.index() >= pool.cursor() {
            return Ok(Step::Blocked);
        }
        let Some(other) = pool.owner(t).map(|o| o as usize) else { return Ok(Step::Blocked) };
        let _other = (other != k).then(|| self.clusters[other].write());
        if other != k && pool.next(t).is_some_and(|n| pool.is_merged(n)) {
            return Ok(Step::Blocked);
        }

        let report = pool.swap_blocks(mj, t, scratch);
        own.rename(mj, t);
        if other != k {
            self.clusters[other].rename(mj, t);
        }
        pool.set_merged(t, true);
        Ok(Step::Merged { moved: report.scalars_moved })
    }
}
