use crate::error::Result;
use crate::sparse::{binarize, pattern_power_sum, PatternMatrix};
use crate::statespace::Gramian;

/// `T(I + W̄ + … + W̄ˢ)`, the support of a truncated Neumann series of `W⁻¹`.
pub fn predict_pattern_neumann(w: &Gramian, s: usize) -> Result<PatternMatrix> {
    pattern_power_sum(&binarize(&w.matrix), s)
}

/// Scalar band `{(i, j) : |i − j| ≤ β}` lifted to blocks: block `(I, J)` is
/// kept when any scalar pair inside it lies in the band.
pub fn banded_pattern(block_sizes: &[usize], beta: usize) -> PatternMatrix {
    let mut offsets = Vec::with_capacity(block_sizes.len() + 1);
    offsets.push(0usize);
    for s in block_sizes {
        offsets.push(offsets.last().unwrap() + s);
    }
    let nb = block_sizes.len();
    let rows = (0..nb)
        .map(|i| {
            let (lo, hi) = (offsets[i], offsets[i + 1] - 1);
            // First block whose last scalar reaches lo − β.
            let first = offsets[1..].partition_point(|&end| end - 1 + beta < lo);
            let last = offsets[..nb].partition_point(|&start| start <= hi + beta);
            (first..last).collect()
        })
        .collect();
    PatternMatrix::from_rows(nb, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_zero_is_block_diagonal() {
        let p = banded_pattern(&[3, 3, 3], 0);
        assert_eq!(p, PatternMatrix::identity(3));
    }

    #[test]
    fn wide_band_is_full() {
        assert_eq!(banded_pattern(&[2, 1, 3], 6), PatternMatrix::full(3));
    }

    #[test]
    fn any_overlap_conversion() {
        // Scalars 0..3 | 3..6 | 6..9; β = 1 reaches across each boundary.
        let p = banded_pattern(&[3, 3, 3], 1);
        assert!(p.contains(0, 1) && p.contains(1, 2) && !p.contains(0, 2));
        let p = banded_pattern(&[3, 3, 3], 4);
        assert!(p.contains(0, 2));
    }
}
