//! Finite differences on gridded quantities: second-order central in the
//! interior, first-order one-sided (inward) on the boundary.

use crate::model::Grid3;

/// Derivative along `axis` (0 = t, 1 = ξ1, 2 = ξ2) at flat index `idx` of the
/// gridded quantity `q`.
#[inline]
pub fn diff<F: Fn(usize) -> f64>(grid: &Grid3, idx: usize, axis: usize, q: F) -> f64 {
    let (t, i, j) = grid.unindex(idx);
    let (k, n) = match axis {
        0 => (t, grid.n0),
        1 => (i, grid.n1),
        _ => (j, grid.n2),
    };
    let h = grid.spacing()[axis];
    let s = grid.stride(axis);
    if k == 0 {
        (q(idx + s) - q(idx)) / h
    } else if k + 1 == n {
        (q(idx) - q(idx - s)) / h
    } else {
        (q(idx + s) - q(idx - s)) / (2.0 * h)
    }
}

/// [`diff`] applied to every gridpoint of a plane of values.
pub fn diff_field(grid: &Grid3, values: &[f64], axis: usize) -> Vec<f64> {
    (0..grid.len()).map(|idx| diff(grid, idx, axis, |k| values[k])).collect()
}

/// Whether gridpoint `idx` has both neighbours along `axis`.
#[inline]
pub fn is_interior_along(grid: &Grid3, idx: usize, axis: usize) -> bool {
    let (t, i, j) = grid.unindex(idx);
    match axis {
        0 => t > 0 && t + 1 < grid.n0,
        1 => i > 0 && i + 1 < grid.n1,
        _ => j > 0 && j + 1 < grid.n2,
    }
}
