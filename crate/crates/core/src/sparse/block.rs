//! Block compressed sparse row storage.
//!
//! Blocks are kept in row-major order inside one contiguous value buffer.
//! Block row `i` has `row_sizes[i]` scalar rows and block column `j` has
//! `col_sizes[j]` scalar columns, so blocks need not be square or uniform.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::pattern::PatternMatrix;
use crate::error::{Error, Result};

/// Blocks whose Frobenius norm falls below this are structural zeros.
pub const PRUNE_TOL: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSparseMatrix {
    row_sizes: Vec<usize>,
    col_sizes: Vec<usize>,
    row_offsets: Vec<usize>,
    col_offsets: Vec<usize>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    val_ptr: Vec<usize>,
    values: Vec<f64>,
}

/// One assembled block row: sorted block columns and their concatenated
/// row-major values.
pub(crate) type BlockRow = (Vec<usize>, Vec<f64>);

fn prefix_sums(sizes: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(sizes.len() + 1);
    let mut acc = 0;
    out.push(0);
    for &s in sizes {
        acc += s;
        out.push(acc);
    }
    out
}

fn check_sizes(arg: &'static str, sizes: &[usize]) -> Result<()> {
    if sizes.contains(&0) {
        return Err(Error::invalid(arg, "block sizes must be positive"));
    }
    Ok(())
}

/// Frobenius norm computed with scaling so tiny blocks do not underflow.
pub(crate) fn block_norm(block: &[f64]) -> f64 {
    let scale = block.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    scale * block.iter().map(|v| (v / scale).powi(2)).sum::<f64>().sqrt()
}

#[inline]
pub(crate) fn is_structural_zero(block: &[f64]) -> bool {
    block_norm(block) < PRUNE_TOL
}

#[inline(always)]
fn gemm_fixed<const R: usize, const K: usize, const Q: usize>(a: &[f64], b: &[f64], c: &mut [f64]) {
    let (a, b, c) = (&a[..R * K], &b[..K * Q], &mut c[..R * Q]);
    for ii in 0..R {
        for kk in 0..K {
            let aik = a[ii * K + kk];
            for jj in 0..Q {
                c[ii * Q + jj] += aik * b[kk * Q + jj];
            }
        }
    }
}

/// `c[r×q] += alpha · a[r×k] · b[k×q]`, all row-major.
#[inline]
pub(crate) fn gemm_acc(alpha: f64, a: &[f64], b: &[f64], c: &mut [f64], r: usize, k: usize, q: usize) {
    if alpha == 1.0 {
        match (r, k, q) {
            (1, 1, 1) => return c[0] += a[0] * b[0],
            (2, 2, 2) => return gemm_fixed::<2, 2, 2>(a, b, c),
            (3, 3, 3) => return gemm_fixed::<3, 3, 3>(a, b, c),
            (4, 4, 4) => return gemm_fixed::<4, 4, 4>(a, b, c),
            _ => {}
        }
    }
    for ii in 0..r {
        let crow = &mut c[ii * q..(ii + 1) * q];
        for kk in 0..k {
            let aik = alpha * a[ii * k + kk];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[kk * q..(kk + 1) * q];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aik * bv;
            }
        }
    }
}

impl BlockSparseMatrix {
    /// Zero matrix with the given block partition.
    pub fn zeros(row_sizes: Vec<usize>, col_sizes: Vec<usize>) -> Result<Self> {
        check_sizes("row_sizes", &row_sizes)?;
        check_sizes("col_sizes", &col_sizes)?;
        let nbr = row_sizes.len();
        Ok(BlockSparseMatrix {
            row_offsets: prefix_sums(&row_sizes),
            col_offsets: prefix_sums(&col_sizes),
            row_sizes,
            col_sizes,
            row_ptr: vec![0; nbr + 1],
            col_idx: Vec::new(),
            val_ptr: vec![0],
            values: Vec::new(),
        })
    }

    /// Block identity; every diagonal block is a square identity of `sizes[i]`.
    pub fn identity(sizes: &[usize]) -> Result<Self> {
        Self::from_blocks(
            sizes.to_vec(),
            sizes.to_vec(),
            sizes.iter().enumerate().map(|(i, &s)| {
                let mut b = vec![0.0; s * s];
                for d in 0..s {
                    b[d * s + d] = 1.0;
                }
                ((i, i), b)
            }),
        )
    }

    /// Builds a matrix from `((block_row, block_col), row-major values)`
    /// triples. Repeated coordinates are summed; structural zeros are pruned.
    pub fn from_blocks(
        row_sizes: Vec<usize>,
        col_sizes: Vec<usize>,
        blocks: impl IntoIterator<Item = ((usize, usize), Vec<f64>)>,
    ) -> Result<Self> {
        check_sizes("row_sizes", &row_sizes)?;
        check_sizes("col_sizes", &col_sizes)?;
        let (nbr, nbc) = (row_sizes.len(), col_sizes.len());
        let mut map: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        for ((i, j), vals) in blocks {
            if i >= nbr || j >= nbc {
                return Err(Error::invalid(
                    "blocks",
                    format!("block ({i}, {j}) outside a {nbr}x{nbc} block grid"),
                ));
            }
            let expected = row_sizes[i] * col_sizes[j];
            if vals.len() != expected {
                return Err(Error::BlockShape {
                    row: i,
                    col: j,
                    got: vals.len(),
                    expected,
                });
            }
            match map.get_mut(&(i, j)) {
                Some(acc) => acc.iter_mut().zip(&vals).for_each(|(a, v)| *a += v),
                None => {
                    map.insert((i, j), vals);
                }
            }
        }
        let mut rows: Vec<BlockRow> = vec![(Vec::new(), Vec::new()); nbr];
        for ((i, j), vals) in map {
            if is_structural_zero(&vals) {
                continue;
            }
            rows[i].0.push(j);
            rows[i].1.extend_from_slice(&vals);
        }
        Ok(Self::from_rows(row_sizes, col_sizes, rows))
    }

    /// Assembles pre-sorted, pre-pruned rows. Sizes are trusted.
    pub(crate) fn from_rows(row_sizes: Vec<usize>, col_sizes: Vec<usize>, rows: Vec<BlockRow>) -> Self {
        let nnzb: usize = rows.iter().map(|r| r.0.len()).sum();
        let nvals: usize = rows.iter().map(|r| r.1.len()).sum();
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::with_capacity(nnzb);
        let mut val_ptr = Vec::with_capacity(nnzb + 1);
        let mut values = Vec::with_capacity(nvals);
        row_ptr.push(0);
        val_ptr.push(0);
        for (i, (cols, vals)) in rows.into_iter().enumerate() {
            let mut off = 0;
            for j in cols {
                let len = row_sizes[i] * col_sizes[j];
                col_idx.push(j);
                values.extend_from_slice(&vals[off..off + len]);
                val_ptr.push(values.len());
                off += len;
            }
            row_ptr.push(col_idx.len());
        }
        BlockSparseMatrix {
            row_offsets: prefix_sums(&row_sizes),
            col_offsets: prefix_sums(&col_sizes),
            row_sizes,
            col_sizes,
            row_ptr,
            col_idx,
            val_ptr,
            values,
        }
    }

    /// Block-diagonal matrix from dense square or rectangular blocks.
    pub fn block_diagonal(blocks: &[DMatrix<f64>]) -> Result<Self> {
        let row_sizes = blocks.iter().map(|b| b.nrows()).collect();
        let col_sizes = blocks.iter().map(|b| b.ncols()).collect();
        Self::from_blocks(
            row_sizes,
            col_sizes,
            blocks.iter().enumerate().map(|(i, b)| ((i, i), row_major(b))),
        )
    }

    /// Splits a dense matrix into blocks, dropping structural-zero blocks.
    pub fn from_dense(dense: &DMatrix<f64>, row_sizes: Vec<usize>, col_sizes: Vec<usize>) -> Result<Self> {
        let (r, c): (usize, usize) = (row_sizes.iter().sum(), col_sizes.iter().sum());
        if dense.nrows() != r || dense.ncols() != c {
            return Err(Error::DimensionMismatch {
                op: "from_dense",
                left: format!("{}x{}", dense.nrows(), dense.ncols()),
                right: format!("{r}x{c} (block partition)"),
            });
        }
        let ro = prefix_sums(&row_sizes);
        let co = prefix_sums(&col_sizes);
        let mut blocks = Vec::new();
        for i in 0..row_sizes.len() {
            for j in 0..col_sizes.len() {
                let view = dense.view((ro[i], co[j]), (row_sizes[i], col_sizes[j]));
                if view.iter().any(|v| *v != 0.0) {
                    blocks.push(((i, j), row_major(&view.into_owned())));
                }
            }
        }
        Self::from_blocks(row_sizes, col_sizes, blocks)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows(), self.ncols());
        for (i, j, blk) in self.iter_blocks() {
            let (r, c) = (self.row_sizes[i], self.col_sizes[j]);
            let (r0, c0) = (self.row_offsets[i], self.col_offsets[j]);
            for a in 0..r {
                for b in 0..c {
                    out[(r0 + a, c0 + b)] = blk[a * c + b];
                }
            }
        }
        out
    }

    pub fn row_sizes(&self) -> &[usize] {
        &self.row_sizes
    }

    pub fn col_sizes(&self) -> &[usize] {
        &self.col_sizes
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_offsets(&self) -> &[usize] {
        &self.col_offsets
    }

    pub fn block_rows(&self) -> usize {
        self.row_sizes.len()
    }

    pub fn block_cols(&self) -> usize {
        self.col_sizes.len()
    }

    /// Scalar row count.
    pub fn nrows(&self) -> usize {
        *self.row_offsets.last().unwrap()
    }

    /// Scalar column count.
    pub fn ncols(&self) -> usize {
        *self.col_offsets.last().unwrap()
    }

    pub fn nnz_blocks(&self) -> usize {
        self.col_idx.len()
    }

    /// Stored scalar entries (block storage, including zeros inside blocks).
    pub fn stored_entries(&self) -> usize {
        self.values.len()
    }

    /// Scalar entries that are actually nonzero.
    pub fn count_nonzeros(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }

    pub fn is_zero(&self) -> bool {
        self.col_idx.is_empty()
    }

    /// `"RxC (BRxBC blocks)"`, used in error messages.
    pub fn shape_string(&self) -> String {
        format!(
            "{}x{} ({}x{} blocks)",
            self.nrows(),
            self.ncols(),
            self.block_rows(),
            self.block_cols()
        )
    }

    pub fn same_partition(&self, other: &Self) -> bool {
        self.row_sizes == other.row_sizes && self.col_sizes == other.col_sizes
    }

    /// Square block grid whose diagonal blocks are square.
    pub fn is_square_partition(&self) -> bool {
        self.row_sizes == self.col_sizes
    }

    /// Block columns and values of block row `i`.
    pub fn row_blocks(&self, i: usize) -> impl Iterator<Item = (usize, &[f64])> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1])
            .map(move |k| (self.col_idx[k], &self.values[self.val_ptr[k]..self.val_ptr[k + 1]]))
    }

    pub fn row_block_cols(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn iter_blocks(&self) -> impl Iterator<Item = (usize, usize, &[f64])> + '_ {
        (0..self.block_rows()).flat_map(move |i| self.row_blocks(i).map(move |(j, b)| (i, j, b)))
    }

    /// Row-major block `(i, j)` if stored.
    pub fn block(&self, i: usize, j: usize) -> Option<&[f64]> {
        if i >= self.block_rows() {
            return None;
        }
        let cols = self.row_block_cols(i);
        cols.binary_search(&j).ok().map(|p| {
            let k = self.row_ptr[i] + p;
            &self.values[self.val_ptr[k]..self.val_ptr[k + 1]]
        })
    }

    /// Block `(i, j)` as a dense matrix (zeros if absent).
    pub fn block_dense(&self, i: usize, j: usize) -> DMatrix<f64> {
        let (r, c) = (self.row_sizes[i], self.col_sizes[j]);
        match self.block(i, j) {
            Some(b) => DMatrix::from_row_slice(r, c, b),
            None => DMatrix::zeros(r, c),
        }
    }

    /// Scalar entry lookup.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        let i = self.row_offsets.partition_point(|&o| o <= row) - 1;
        let j = self.col_offsets.partition_point(|&o| o <= col) - 1;
        match self.block(i, j) {
            Some(b) => b[(row - self.row_offsets[i]) * self.col_sizes[j] + (col - self.col_offsets[j])],
            None => 0.0,
        }
    }

    /// Nonzero scalar entries as `(row, col, value)` in row-major block order.
    pub fn scalar_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.iter_blocks().flat_map(move |(i, j, b)| {
            let (r0, c0, c) = (self.row_offsets[i], self.col_offsets[j], self.col_sizes[j]);
            b.iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(move |(k, &v)| (r0 + k / c, c0 + k % c, v))
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&self, alpha: f64) -> Self {
        if alpha == 0.0 {
            return Self::zeros(self.row_sizes.clone(), self.col_sizes.clone())
                .expect("partition already validated");
        }
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out.prune()
    }

    /// Drops blocks that have become structural zeros.
    fn prune(self) -> Self {
        if !self.iter_blocks().any(|(_, _, b)| is_structural_zero(b)) {
            return self;
        }
        let rows = (0..self.block_rows())
            .map(|i| {
                let mut cols = Vec::new();
                let mut vals = Vec::new();
                for (j, b) in self.row_blocks(i) {
                    if !is_structural_zero(b) {
                        cols.push(j);
                        vals.extend_from_slice(b);
                    }
                }
                (cols, vals)
            })
            .collect();
        Self::from_rows(self.row_sizes.clone(), self.col_sizes.clone(), rows)
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols() {
            return Err(Error::DimensionMismatch {
                op: "matvec",
                left: self.shape_string(),
                right: format!("vector of length {}", x.len()),
            });
        }
        let mut y = vec![0.0; self.nrows()];
        for i in 0..self.block_rows() {
            let r0 = self.row_offsets[i];
            let r = self.row_sizes[i];
            let yi = &mut y[r0..r0 + r];
            for (j, b) in self.row_blocks(i) {
                let c0 = self.col_offsets[j];
                let c = self.col_sizes[j];
                let xj = &x[c0..c0 + c];
                for a in 0..r {
                    let row = &b[a * c..(a + 1) * c];
                    yi[a] += row.iter().zip(xj).map(|(u, v)| u * v).sum::<f64>();
                }
            }
        }
        Ok(y)
    }

    /// `y = Aᵀ x`.
    pub fn matvec_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.nrows() {
            return Err(Error::DimensionMismatch {
                op: "matvec_transpose",
                left: self.shape_string(),
                right: format!("vector of length {}", x.len()),
            });
        }
        let mut y = vec![0.0; self.ncols()];
        for i in 0..self.block_rows() {
            let r0 = self.row_offsets[i];
            let r = self.row_sizes[i];
            let xi = &x[r0..r0 + r];
            for (j, b) in self.row_blocks(i) {
                let c0 = self.col_offsets[j];
                let c = self.col_sizes[j];
                let yj = &mut y[c0..c0 + c];
                for a in 0..r {
                    let xa = xi[a];
                    if xa == 0.0 {
                        continue;
                    }
                    for (yv, bv) in yj.iter_mut().zip(&b[a * c..(a + 1) * c]) {
                        *yv += xa * bv;
                    }
                }
            }
        }
        Ok(y)
    }

    /// `A + mu·I` for a square block partition.
    pub fn add_identity(&self, mu: f64) -> Result<Self> {
        if !self.is_square_partition() {
            return Err(Error::invalid(
                "matrix",
                format!("identity shift needs a square block partition, got {}", self.shape_string()),
            ));
        }
        let eye = Self::identity(&self.row_sizes)?;
        sp_add(self, &eye, 1.0, mu)
    }

    /// Largest `|a_ij - a_ji|` and where it occurs.
    pub fn max_asymmetry(&self) -> Result<(f64, usize, usize)> {
        if !self.is_square_partition() {
            return Err(Error::invalid("matrix", "symmetry needs a square block partition"));
        }
        let mut worst = (0.0, 0, 0);
        for (i, j, b) in self.iter_blocks() {
            let (r, c) = (self.row_sizes[i], self.col_sizes[j]);
            let mirror = self.block(j, i);
            for a in 0..r {
                for bb in 0..c {
                    let v = b[a * c + bb];
                    let w = mirror.map_or(0.0, |m| m[bb * r + a]);
                    let d = (v - w).abs();
                    if d > worst.0 {
                        worst = (d, self.row_offsets[i] + a, self.col_offsets[j] + bb);
                    }
                }
            }
        }
        Ok(worst)
    }

    /// Checks symmetry to `rel_tol · max|a|`.
    pub fn check_symmetric(&self, rel_tol: f64) -> Result<()> {
        let (dev, row, col) = self.max_asymmetry()?;
        if dev > rel_tol * self.max_abs().max(f64::MIN_POSITIVE) {
            return Err(Error::NotSymmetric {
                row,
                col,
                deviation: dev,
            });
        }
        Ok(())
    }

    /// Block-level support as a pattern.
    pub fn block_pattern(&self) -> PatternMatrix {
        let rows = (0..self.block_rows())
            .map(|i| self.row_block_cols(i).to_vec())
            .collect();
        PatternMatrix::from_rows(self.block_cols(), rows)
    }

    /// Same partition with every stored value replaced by `f(value)`; blocks
    /// that become structural zeros are pruned.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = f(*v));
        out.prune()
    }

    /// Restricts the matrix to block coordinates accepted by `keep`.
    pub fn filter_blocks(&self, keep: impl Fn(usize, usize) -> bool) -> Self {
        let rows = (0..self.block_rows())
            .map(|i| {
                let mut cols = Vec::new();
                let mut vals = Vec::new();
                for (j, b) in self.row_blocks(i) {
                    if keep(i, j) {
                        cols.push(j);
                        vals.extend_from_slice(b);
                    }
                }
                (cols, vals)
            })
            .collect();
        Self::from_rows(self.row_sizes.clone(), self.col_sizes.clone(), rows)
    }
}

/// Row-major copy of a dense matrix.
pub fn row_major<S>(m: &nalgebra::Matrix<f64, nalgebra::Dyn, nalgebra::Dyn, S>) -> Vec<f64>
where
    S: nalgebra::storage::Storage<f64, nalgebra::Dyn, nalgebra::Dyn>,
{
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Per-thread accumulator for one output block row.
struct RowAccumulator {
    slot: Vec<usize>,
    allowed: Vec<bool>,
    cols: Vec<usize>,
    starts: Vec<usize>,
    vals: Vec<f64>,
}

impl RowAccumulator {
    fn new(ncb: usize) -> Self {
        RowAccumulator {
            slot: vec![usize::MAX; ncb],
            allowed: vec![false; ncb],
            cols: Vec::new(),
            starts: Vec::new(),
            vals: Vec::new(),
        }
    }

    fn finish(&mut self, r: usize, col_sizes: &[usize]) -> BlockRow {
        let mut order: Vec<usize> = (0..self.cols.len()).collect();
        order.sort_unstable_by_key(|&k| self.cols[k]);
        let mut cols = Vec::with_capacity(order.len());
        let mut vals = Vec::with_capacity(self.vals.len());
        for k in order {
            let j = self.cols[k];
            let len = r * col_sizes[j];
            let blk = &self.vals[self.starts[k]..self.starts[k] + len];
            if !is_structural_zero(blk) {
                cols.push(j);
                vals.extend_from_slice(blk);
            }
            self.slot[j] = usize::MAX;
        }
        self.cols.clear();
        self.starts.clear();
        self.vals.clear();
        (cols, vals)
    }
}

fn product_row(
    a: &BlockSparseMatrix,
    b: &BlockSparseMatrix,
    i: usize,
    mask: Option<&PatternMatrix>,
    acc: &mut RowAccumulator,
) -> BlockRow {
    if let Some(m) = mask {
        for &j in m.row(i) {
            acc.allowed[j] = true;
        }
    }
    let r = a.row_sizes[i];
    for (k, ablk) in a.row_blocks(i) {
        let kk = a.col_sizes[k];
        for (j, bblk) in b.row_blocks(k) {
            if mask.is_some() && !acc.allowed[j] {
                continue;
            }
            let q = b.col_sizes[j];
            let s = if acc.slot[j] == usize::MAX {
                let s = acc.vals.len();
                acc.vals.resize(s + r * q, 0.0);
                acc.slot[j] = acc.cols.len();
                acc.cols.push(j);
                acc.starts.push(s);
                s
            } else {
                acc.starts[acc.slot[j]]
            };
            gemm_acc(1.0, ablk, bblk, &mut acc.vals[s..s + r * q], r, kk, q);
        }
    }
    if let Some(m) = mask {
        for &j in m.row(i) {
            acc.allowed[j] = false;
        }
    }
    acc.finish(r, &b.col_sizes)
}

fn multiply(a: &BlockSparseMatrix, b: &BlockSparseMatrix, mask: Option<&PatternMatrix>) -> Result<BlockSparseMatrix> {
    if a.col_sizes != b.row_sizes {
        return Err(Error::DimensionMismatch {
            op: "spgemm",
            left: a.shape_string(),
            right: b.shape_string(),
        });
    }
    if let Some(m) = mask {
        if m.nrows() != a.block_rows() || m.ncols() != b.block_cols() {
            return Err(Error::DimensionMismatch {
                op: "masked spgemm",
                left: format!("{}x{} product blocks", a.block_rows(), b.block_cols()),
                right: format!("{}x{} mask", m.nrows(), m.ncols()),
            });
        }
    }
    let ncb = b.block_cols();
    let rows: Vec<BlockRow> = (0..a.block_rows())
        .into_par_iter()
        .map_init(|| RowAccumulator::new(ncb), |acc, i| product_row(a, b, i, mask, acc))
        .collect();
    Ok(BlockSparseMatrix::from_rows(
        a.row_sizes.clone(),
        b.col_sizes.clone(),
        rows,
    ))
}

/// Exact block-sparse product `A·B`.
pub fn spgemm(a: &BlockSparseMatrix, b: &BlockSparseMatrix) -> Result<BlockSparseMatrix> {
    multiply(a, b, None)
}

/// `H₁(A·B)`: the product evaluated only on block coordinates in `mask`.
pub fn spgemm_masked(a: &BlockSparseMatrix, b: &BlockSparseMatrix, mask: &PatternMatrix) -> Result<BlockSparseMatrix> {
    multiply(a, b, Some(mask))
}

/// `alpha·A + beta·B` over the union of both supports.
pub fn sp_add(a: &BlockSparseMatrix, b: &BlockSparseMatrix, alpha: f64, beta: f64) -> Result<BlockSparseMatrix> {
    if !a.same_partition(b) {
        return Err(Error::DimensionMismatch {
            op: "sp_add",
            left: a.shape_string(),
            right: b.shape_string(),
        });
    }
    let rows: Vec<BlockRow> = (0..a.block_rows())
        .into_par_iter()
        .map(|i| {
            let r = a.row_sizes[i];
            let mut cols = Vec::new();
            let mut vals = Vec::new();
            let mut ia = a.row_blocks(i).peekable();
            let mut ib = b.row_blocks(i).peekable();
            let mut scratch = Vec::new();
            loop {
                let (j, ba, bb) = match (ia.peek(), ib.peek()) {
                    (None, None) => break,
                    (Some(&(ja, _)), Some(&(jb, _))) if ja == jb => {
                        let (_, x) = ia.next().unwrap();
                        let (_, y) = ib.next().unwrap();
                        (ja, Some(x), Some(y))
                    }
                    (Some(&(ja, _)), Some(&(jb, _))) if ja < jb => {
                        let (_, x) = ia.next().unwrap();
                        (ja, Some(x), None)
                    }
                    (Some(_), None) => {
                        let (ja, x) = ia.next().unwrap();
                        (ja, Some(x), None)
                    }
                    _ => {
                        let (jb, y) = ib.next().unwrap();
                        (jb, None, Some(y))
                    }
                };
                let len = r * a.col_sizes[j];
                scratch.clear();
                scratch.resize(len, 0.0);
                if let Some(x) = ba {
                    scratch.iter_mut().zip(x).for_each(|(s, v)| *s += alpha * v);
                }
                if let Some(y) = bb {
                    scratch.iter_mut().zip(y).for_each(|(s, v)| *s += beta * v);
                }
                if !is_structural_zero(&scratch) {
                    cols.push(j);
                    vals.extend_from_slice(&scratch);
                }
            }
            (cols, vals)
        })
        .collect();
    Ok(BlockSparseMatrix::from_rows(
        a.row_sizes.clone(),
        a.col_sizes.clone(),
        rows,
    ))
}

/// Block transpose; `(Aᵀ)ᵀ == A` exactly.
pub fn transpose(a: &BlockSparseMatrix) -> BlockSparseMatrix {
    let nbc = a.block_cols();
    let mut rows: Vec<BlockRow> = vec![(Vec::new(), Vec::new()); nbc];
    for (i, j, b) in a.iter_blocks() {
        let (r, c) = (a.row_sizes[i], a.col_sizes[j]);
        rows[j].0.push(i);
        let dst = &mut rows[j].1;
        for bb in 0..c {
            for aa in 0..r {
                dst.push(b[aa * c + bb]);
            }
        }
    }
    BlockSparseMatrix::from_rows(a.col_sizes.clone(), a.row_sizes.clone(), rows)
}

/// Block support of `A`: `(i, j)` is present iff block `(i, j)` holds an entry
/// with nonzero magnitude.
pub fn binarize(a: &BlockSparseMatrix) -> PatternMatrix {
    let rows = (0..a.block_rows())
        .map(|i| {
            a.row_blocks(i)
                .filter(|(_, b)| b.iter().any(|v| v.abs() > 0.0))
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    PatternMatrix::from_rows(a.block_cols(), rows)
}

/// Sparsification operator H₁: keeps only blocks whose coordinates are in `p`.
pub fn mask_h1(z: &BlockSparseMatrix, p: &PatternMatrix) -> Result<BlockSparseMatrix> {
    if p.nrows() != z.block_rows() || p.ncols() != z.block_cols() {
        return Err(Error::DimensionMismatch {
            op: "mask_h1",
            left: z.shape_string(),
            right: format!("{}x{} pattern", p.nrows(), p.ncols()),
        });
    }
    Ok(z.filter_blocks(|i, j| p.contains(i, j)))
}

/// Sparsification operator H₂: zeroes every entry with `|z| <= phi`.
pub fn drop_h2(z: &BlockSparseMatrix, phi: f64) -> Result<BlockSparseMatrix> {
    if !(phi >= 0.0) {
        return Err(Error::invalid("phi", format!("dropping parameter must be >= 0, got {phi}")));
    }
    if phi == 0.0 {
        return Ok(z.clone());
    }
    let rows = (0..z.block_rows())
        .map(|i| {
            let mut cols = Vec::new();
            let mut vals = Vec::new();
            for (j, b) in z.row_blocks(i) {
                if b.iter().any(|v| v.abs() > phi) {
                    cols.push(j);
                    vals.extend(b.iter().map(|&v| if v.abs() > phi { v } else { 0.0 }));
                }
            }
            (cols, vals)
        })
        .collect();
    Ok(BlockSparseMatrix::from_rows(
        z.row_sizes.clone(),
        z.col_sizes.clone(),
        rows,
    ))
}
