//! Boolean block-sparsity patterns.
//!
//! A [`PatternMatrix`] stores a set of `(row, col)` pairs in compressed
//! sparse row form with sorted, de-duplicated column indices. It is used for
//! interconnection matrices, predicted supports of lifted matrices and the
//! masks of the sparsified Newton-Schulz iteration.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl PatternMatrix {
    /// Builds a pattern from arbitrary (possibly repeated) index pairs.
    pub fn from_entries(
        nrows: usize,
        ncols: usize,
        entries: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); nrows];
        for (i, j) in entries {
            if i >= nrows || j >= ncols {
                return Err(Error::invalid(
                    "entries",
                    format!("index ({i}, {j}) out of range for {nrows}x{ncols} pattern"),
                ));
            }
            rows[i].push(j);
        }
        Ok(Self::from_rows(ncols, rows))
    }

    /// Builds a pattern from per-row column lists; columns must be in range.
    pub(crate) fn from_rows(ncols: usize, mut rows: Vec<Vec<usize>>) -> Self {
        let nrows = rows.len();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for r in rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
            debug_assert!(r.last().is_none_or(|&c| c < ncols));
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        PatternMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
        }
    }

    pub fn empty(n: usize) -> Self {
        Self::from_rows(n, vec![Vec::new(); n])
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows(n, (0..n).map(|i| vec![i]).collect())
    }

    pub fn full(n: usize) -> Self {
        Self::from_rows(n, (0..n).map(|_| (0..n).collect()).collect())
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Dimension of a square pattern.
    pub fn dimension(&self) -> usize {
        debug_assert_eq!(self.nrows, self.ncols);
        self.nrows
    }

    pub fn is_square(&self) -> bool {
        self.nrows == self.ncols
    }

    /// Number of stored pairs.
    pub fn len(&self) -> usize {
        self.col_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.col_idx.is_empty()
    }

    /// Sorted column indices of row `i`.
    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i < self.nrows && self.row(i).binary_search(&j).is_ok()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).iter().map(move |&j| (i, j)))
    }

    pub fn transpose(&self) -> Self {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); self.ncols];
        for (i, j) in self.entries() {
            rows[j].push(i);
        }
        Self::from_rows(self.nrows, rows)
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "pattern union")?;
        let rows = (0..self.nrows)
            .map(|i| {
                let mut r = self.row(i).to_vec();
                r.extend_from_slice(other.row(i));
                r
            })
            .collect();
        Ok(Self::from_rows(self.ncols, rows))
    }

    /// `P ∪ Pᵀ` for square patterns.
    pub fn symmetrize(&self) -> Self {
        debug_assert!(self.is_square());
        self.union(&self.transpose())
            .expect("transpose of a square pattern has the same shape")
    }

    pub fn is_symmetric(&self) -> bool {
        self.is_square() && *self == self.transpose()
    }

    /// Set containment `self ⊆ other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return false;
        }
        (0..self.nrows).all(|i| {
            let theirs = other.row(i);
            self.row(i).iter().all(|j| theirs.binary_search(j).is_ok())
        })
    }

    /// Pairs of `self` that are missing from `other`.
    pub fn difference(&self, other: &Self) -> Vec<(usize, usize)> {
        self.entries()
            .filter(|&(i, j)| !other.contains(i, j))
            .collect()
    }

    /// Largest `|i - j|` over stored pairs.
    pub fn bandwidth(&self) -> usize {
        self.entries().map(|(i, j)| i.abs_diff(j)).max().unwrap_or(0)
    }

    /// Per-row entry counts.
    pub fn row_counts(&self) -> Vec<usize> {
        (0..self.nrows).map(|i| self.row(i).len()).collect()
    }

    /// Per-column entry counts (in-degree when rows are sources).
    pub fn col_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.ncols];
        for &j in &self.col_idx {
            counts[j] += 1;
        }
        counts
    }

    fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::DimensionMismatch {
                op,
                left: format!("{}x{}", self.nrows, self.ncols),
                right: format!("{}x{}", other.nrows, other.ncols),
            });
        }
        Ok(())
    }
}

/// Boolean product: `(i, j)` is set iff some `k` has `(i, k) ∈ lhs` and
/// `(k, j) ∈ rhs`.
pub fn pattern_product(lhs: &PatternMatrix, rhs: &PatternMatrix) -> Result<PatternMatrix> {
    if lhs.ncols != rhs.nrows {
        return Err(Error::DimensionMismatch {
            op: "pattern product",
            left: format!("{}x{}", lhs.nrows, lhs.ncols),
            right: format!("{}x{}", rhs.nrows, rhs.ncols),
        });
    }
    let ncols = rhs.ncols;
    let rows: Vec<Vec<usize>> = (0..lhs.nrows)
        .into_par_iter()
        .map_init(
            || vec![false; ncols],
            |seen, i| {
                let mut out = Vec::new();
                for &k in lhs.row(i) {
                    for &j in rhs.row(k) {
                        if !seen[j] {
                            seen[j] = true;
                            out.push(j);
                        }
                    }
                }
                for &j in &out {
                    seen[j] = false;
                }
                out
            },
        )
        .collect();
    Ok(PatternMatrix::from_rows(ncols, rows))
}

/// `T(I + P + P² + … + Pˢ)`: `(i, j)` is set iff `j` is reachable from `i`
/// along at most `s` edges of `P`. Computed by breadth-first search from every
/// row, never by forming powers.
pub fn pattern_power_sum(pattern: &PatternMatrix, s: usize) -> Result<PatternMatrix> {
    if !pattern.is_square() {
        return Err(Error::invalid(
            "pattern",
            format!(
                "power sum needs a square pattern, got {}x{}",
                pattern.nrows, pattern.ncols
            ),
        ));
    }
    let n = pattern.nrows;
    let rows: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![usize::MAX; n], VecDeque::new()),
            |(depth, queue), src| {
                let mut reached = vec![src];
                depth[src] = 0;
                queue.push_back(src);
                while let Some(v) = queue.pop_front() {
                    let d = depth[v];
                    if d == s {
                        continue;
                    }
                    for &w in pattern.row(v) {
                        if depth[w] == usize::MAX {
                            depth[w] = d + 1;
                            reached.push(w);
                            queue.push_back(w);
                        }
                    }
                }
                for &v in &reached {
                    depth[v] = usize::MAX;
                }
                reached
            },
        )
        .collect();
    Ok(PatternMatrix::from_rows(n, rows))
}
