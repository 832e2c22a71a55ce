/// Squared Euclidean distance, accumulated in dimension order.
#[inline]
pub fn l2_squared(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0f32;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Index of the nearest row of `rows` (row-major, `dim` wide); ties go to the lowest index.
pub fn nearest_row(rows: &[f32], dim: usize, v: &[f32]) -> (usize, f32) {
    let mut best = (0, f32::INFINITY);
    for (i, row) in rows.chunks_exact(dim).enumerate() {
        let d = l2_squared(row, v);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}
