//! Dimension-interleaved vector layout.
//!
//! Vectors are stored in groups of `group` slots (32 in production). Inside a
//! group the scalars are dimension-major: all slots' dimension 0, then all
//! slots' dimension 1, and so on. A kernel scanning one dimension therefore
//! reads `group` consecutive scalars.
//!
//! When the capacity is not a multiple of the group width the trailing group
//! is narrower, so the mapping stays a bijection onto `[0, capacity * dim)`.

use std::sync::atomic::{AtomicU32, Ordering};

/// Vectors per interleave group.
pub const INTERLEAVE_GROUP: usize = 32;

/// Width of the group holding `slot` for a segment of `capacity` slots.
#[inline]
pub fn group_width(slot: usize, capacity: usize, group: usize) -> usize {
    let start = (slot / group) * group;
    group.min(capacity - start)
}

/// Offset of the scalar for (`slot`, `d`) in a segment of `capacity` slots.
///
/// For full groups this is `(slot / group) * group * dim + d * group + slot % group`.
#[inline]
pub fn interleaved_offset(slot: usize, d: usize, dim: usize, capacity: usize, group: usize) -> usize {
    debug_assert!(slot < capacity && d < dim);
    let start = (slot / group) * group;
    let width = group.min(capacity - start);
    start * dim + d * width + (slot - start)
}

/// Read access to a run of scalars, either plain or atomic storage.
pub trait ScalarSource {
    fn scalar(&self, offset: usize) -> f32;
}

impl ScalarSource for [f32] {
    #[inline]
    fn scalar(&self, offset: usize) -> f32 {
        self[offset]
    }
}

impl ScalarSource for [AtomicU32] {
    #[inline]
    fn scalar(&self, offset: usize) -> f32 {
        f32::from_bits(self[offset].load(Ordering::Relaxed))
    }
}

/// Squared L2 distances from `query` to the first `len` slots of an
/// interleaved segment with `capacity` slots, reported as `(slot, distance)`.
///
/// Each distance accumulates dimensions in ascending order, so results are
/// bit-identical to [`crate::index::distance::l2_squared`] on the row-major vector.
pub fn scan_interleaved<S, F>(
    payload: &S,
    query: &[f32],
    capacity: usize,
    len: usize,
    group: usize,
    mut emit: F,
) where
    S: ScalarSource + ?Sized,
    F: FnMut(usize, f32),
{
    let dim = query.len();
    let mut acc = [0f32; 64];
    let mut start = 0;
    while start < len {
        let width = group.min(capacity - start);
        let live = width.min(len - start);
        let base = start * dim;
        // group widths above 64 only appear in tests; fall back to a heap buffer
        if width <= acc.len() {
            let acc = &mut acc[..width];
            acc.fill(0.0);
            for (d, &q) in query.iter().enumerate() {
                let row = base + d * width;
                for (lane, a) in acc.iter_mut().enumerate().take(live) {
                    let diff = payload.scalar(row + lane) - q;
                    *a += diff * diff;
                }
            }
            for (lane, &a) in acc.iter().enumerate().take(live) {
                emit(start + lane, a);
            }
        } else {
            let mut acc = vec![0f32; live];
            for (d, &q) in query.iter().enumerate() {
                let row = base + d * width;
                for (lane, a) in acc.iter_mut().enumerate() {
                    let diff = payload.scalar(row + lane) - q;
                    *a += diff * diff;
                }
            }
            for (lane, &a) in acc.iter().enumerate() {
                emit(start + lane, a);
            }
        }
        start += width;
    }
}

/// Copies the vector at `slot` out of an interleaved segment.
pub fn gather<S: ScalarSource + ?Sized>(
    payload: &S,
    slot: usize,
    dim: usize,
    capacity: usize,
    group: usize,
    out: &mut [f32],
) {
    for (d, o) in out.iter_mut().enumerate().take(dim) {
        *o = payload.scalar(interleaved_offset(slot, d, dim, capacity, group));
    }
}

/// A plain (non-atomic) interleaved segment of ids and vectors. Used for
/// read-only offline lists and for the copy-based baseline lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InterleavedSegment {
    pub dim: usize,
    pub group: usize,
    pub ids: Vec<u64>,
    pub payload: Vec<f32>,
}

impl InterleavedSegment {
    pub fn new(dim: usize, group: usize) -> Self {
        Self { dim, group, ids: Vec::new(), payload: Vec::new() }
    }

    /// Builds a segment from row-major vectors.
    pub fn from_rows(dim: usize, group: usize, ids: Vec<u64>, rows: &[f32]) -> Self {
        assert_eq!(rows.len(), ids.len() * dim);
        let capacity = ids.len();
        let mut payload = vec![0f32; capacity * dim];
        for (slot, row) in rows.chunks_exact(dim.max(1)).enumerate() {
            for (d, &x) in row.iter().enumerate() {
                payload[interleaved_offset(slot, d, dim, capacity, group)] = x;
            }
        }
        Self { dim, group, ids, payload }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn vector(&self, slot: usize) -> Vec<f32> {
        let mut out = vec![0f32; self.dim];
        gather(self.payload.as_slice(), slot, self.dim, self.len(), self.group, &mut out);
        out
    }

    /// Row-major copy of all vectors.
    pub fn to_rows(&self) -> Vec<f32> {
        let mut out = vec![0f32; self.len() * self.dim];
        for slot in 0..self.len() {
            gather(
                self.payload.as_slice(),
                slot,
                self.dim,
                self.len(),
                self.group,
                &mut out[slot * self.dim..(slot + 1) * self.dim],
            );
        }
        out
    }

    pub fn scan<F: FnMut(u64, f32)>(&self, query: &[f32], mut emit: F) {
        let ids = &self.ids;
        scan_interleaved(self.payload.as_slice(), query, self.len(), self.len(), self.group, |slot, d| {
            emit(ids[slot], d)
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_for_full_groups() {
        // dim=2, capacity 64: slot 0 -> 0 and 32, slot 1 -> 1 and 33, slot 32 -> 64 and 96
        assert_eq!(interleaved_offset(0, 0, 2, 64, 32), 0);
        assert_eq!(interleaved_offset(0, 1, 2, 64, 32), 32);
        assert_eq!(interleaved_offset(1, 0, 2, 64, 32), 1);
        assert_eq!(interleaved_offset(1, 1, 2, 64, 32), 33);
        assert_eq!(interleaved_offset(32, 0, 2, 64, 32), 64);
        assert_eq!(interleaved_offset(32, 1, 2, 64, 32), 96);
    }

    #[test]
    fn full_group_matches_closed_form() {
        let (dim, cap, g) = (5, 96, 32);
        for slot in 0..cap {
            for d in 0..dim {
                let closed = (slot / g) * g * dim + d * g + slot % g;
                assert_eq!(interleaved_offset(slot, d, dim, cap, g), closed);
            }
        }
    }

    #[test]
    fn partial_trailing_group_is_dense() {
        // capacity 40 = one full group of 32 plus a group of 8
        let (dim, cap, g) = (3, 40, 32);
        assert_eq!(interleaved_offset(32, 0, dim, cap, g), 96);
        assert_eq!(interleaved_offset(32, 1, dim, cap, g), 104);
        assert_eq!(interleaved_offset(39, 2, dim, cap, g), 119);
    }

    #[test]
    fn segment_round_trip_and_scan() {
        let rows: Vec<f32> = (0..7 * 3).map(|x| x as f32).collect();
        let seg = InterleavedSegment::from_rows(3, 4, (10..17).collect(), &rows);
        assert_eq!(seg.to_rows(), rows);
        assert_eq!(seg.vector(5), vec![15.0, 16.0, 17.0]);
        let mut hits = Vec::new();
        seg.scan(&[0.0, 1.0, 2.0], |id, d| hits.push((id, d)));
        assert_eq!(hits.len(), 7);
        assert_eq!(hits[0], (10, 0.0));
        assert_eq!(hits[1], (11, 27.0));
    }
}
