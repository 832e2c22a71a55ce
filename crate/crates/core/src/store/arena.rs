use std::alloc::{self, Layout};
use std::sync::atomic::{AtomicU32, AtomicU64};

use super::StoreError;

/// Atomic integer types whose all-zero bit pattern is a valid value.
///
/// # Safety
/// Implementors must have the same size, alignment and bit validity as their
/// underlying integer, so zeroed memory is a valid instance.
pub unsafe trait ZeroableAtomic: Sized {}

// SAFETY: the std atomics have the same in-memory representation as their integer types.
unsafe impl ZeroableAtomic for AtomicU32 {}
// SAFETY: as above.
unsafe impl ZeroableAtomic for AtomicU64 {}

/// Reserves `len` zero-initialized atomics in one allocation.
///
/// Zeroed pages come straight from the allocator, so large arenas are not
/// touched until used. Failure is reported instead of aborting.
pub fn zeroed_slice<T: ZeroableAtomic>(len: usize) -> Result<Box<[T]>, StoreError> {
    if len == 0 {
        return Ok(Vec::new().into_boxed_slice());
    }
    let layout = Layout::array::<T>(len).map_err(|_| StoreError::ArenaReservation {
        bytes: len.saturating_mul(std::mem::size_of::<T>()),
    })?;
    // SAFETY: layout has non-zero size since len > 0 and T is not a ZST.
    let ptr = unsafe { alloc::alloc_zeroed(layout) } as *mut T;
    if ptr.is_null() {
        return Err(StoreError::ArenaReservation { bytes: layout.size() });
    }
    // SAFETY: ptr was allocated by the global allocator with the layout of
    // [T; len], and zeroed memory is a valid T per ZeroableAtomic.
    Ok(unsafe { Box::from_raw(std::ptr::slice_from_raw_parts_mut(ptr, len)) })
}
