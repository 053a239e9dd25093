use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::report::{ApproxInverse, SpaiMethod, SpaiReport, SpaiStatus};
use crate::error::{Error, Result};
use crate::sparse::{transpose, BlockSparseMatrix, PatternMatrix};
use crate::statespace::Gramian;

/// Solution of one block column: `(block rows, values per block, residuals)`.
type ColumnSolve = (Vec<usize>, Vec<Vec<f64>>, Vec<f64>);

/// Least squares `min ‖B − M V‖` column by column; QR when `M` has full
/// column rank, SVD otherwise.
fn least_squares(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() >= m.ncols() {
        let qr = m.clone().qr();
        let r = qr.r();
        let top = (0..r.ncols()).map(|k| r[(k, k)].abs()).fold(0.0, f64::max);
        if (0..r.ncols()).all(|k| r[(k, k)].abs() > 1e-13 * top) {
            let qtb = qr.q().transpose() * rhs;
            if let Some(v) = r.solve_upper_triangular(&qtb) {
                return v;
            }
        }
    }
    m.clone()
        .svd(true, true)
        .solve(rhs, 1e-13 * m.amax())
        .expect("both factors computed")
}

fn solve_block_column(
    wt: &BlockSparseMatrix,
    pattern_t: &PatternMatrix,
    jb: usize,
) -> ColumnSolve {
    let sizes = wt.row_sizes();
    let allowed = pattern_t.row(jb);
    let nj = sizes[jb];
    if allowed.is_empty() {
        return (Vec::new(), Vec::new(), vec![1.0; nj]);
    }
    // Column positions of the unknowns.
    let mut col_pos = Vec::with_capacity(allowed.len());
    let mut ncols = 0;
    for &ib in allowed {
        col_pos.push(ncols);
        ncols += sizes[ib];
    }
    // Rows of W touched by the allowed columns.
    let mut row_blocks: Vec<usize> = allowed.iter().flat_map(|&ib| wt.row_block_cols(ib).iter().copied()).collect();
    row_blocks.sort_unstable();
    row_blocks.dedup();
    let mut row_pos = vec![usize::MAX; wt.block_cols()];
    let mut nrows = 0;
    for &kb in &row_blocks {
        row_pos[kb] = nrows;
        nrows += sizes[kb];
    }
    let mut m = DMatrix::zeros(nrows, ncols);
    for (c, &ib) in allowed.iter().enumerate() {
        for (kb, blk) in wt.row_blocks(ib) {
            // Wᵀ(I, K)[b, a] = W(K, I)[a, b].
            let (si, sk) = (sizes[ib], sizes[kb]);
            for b in 0..si {
                for a in 0..sk {
                    m[(row_pos[kb] + a, col_pos[c] + b)] = blk[b * sk + a];
                }
            }
        }
    }
    let mut rhs = DMatrix::zeros(nrows, nj);
    let target_present = row_pos[jb] != usize::MAX;
    if target_present {
        for d in 0..nj {
            rhs[(row_pos[jb] + d, d)] = 1.0;
        }
    }
    let v = least_squares(&m, &rhs);
    let fit = &m * &v - &rhs;
    let residuals = (0..nj)
        .map(|d| {
            let missing = if target_present { 0.0 } else { 1.0 };
            (fit.column(d).norm_squared() + missing).sqrt()
        })
        .collect();
    let blocks = allowed
        .iter()
        .enumerate()
        .map(|(c, &ib)| {
            // Block (I, J) of X, row-major si x nj.
            let si = sizes[ib];
            let mut out = vec![0.0; si * nj];
            for a in 0..si {
                for d in 0..nj {
                    out[a * nj + d] = v[(col_pos[c] + a, d)];
                }
            }
            out
        })
        .collect();
    (allowed.to_vec(), blocks, residuals)
}

/// Frobenius-norm sparse approximate inverse: each scalar column `x_j`
/// minimizes `‖e_j − W x_j‖₂` over the rows allowed by block column `j` of
/// `pattern`. Columns are independent and solved in parallel.
pub fn frobenius_spai(w: &Gramian, pattern: &PatternMatrix) -> Result<ApproxInverse> {
    let wm = &w.matrix;
    if pattern.nrows() != wm.block_rows() || pattern.ncols() != wm.block_cols() {
        return Err(Error::DimensionMismatch {
            op: "frobenius_spai",
            left: wm.shape_string(),
            right: format!("{}x{} pattern", pattern.nrows(), pattern.ncols()),
        });
    }
    let start = Instant::now();
    let wt = transpose(wm);
    let pattern_t = pattern.transpose();
    let solved: Vec<ColumnSolve> = (0..wm.block_cols())
        .into_par_iter()
        .map(|jb| solve_block_column(&wt, &pattern_t, jb))
        .collect();

    let mut report = SpaiReport::new(SpaiMethod::Frobenius);
    let mut blocks = Vec::new();
    for (jb, (rows, vals, res)) in solved.into_iter().enumerate() {
        if rows.is_empty() {
            let c0 = wm.col_offsets()[jb];
            report.empty_columns.extend(c0..c0 + wm.col_sizes()[jb]);
        }
        report.column_residuals.extend(res);
        blocks.extend(rows.into_iter().zip(vals).map(|(ib, v)| ((ib, jb), v)));
    }
    let x = BlockSparseMatrix::from_blocks(wm.row_sizes().to_vec(), wm.col_sizes().to_vec(), blocks)?;
    report.objective = Some(report.column_residuals.iter().map(|r| r * r).sum::<f64>().sqrt());
    report.status = SpaiStatus::Converged;
    report.mu = w.mu;
    report.total_seconds = start.elapsed().as_secs_f64();
    Ok(ApproxInverse {
        x,
        report,
        method: SpaiMethod::Frobenius,
    })
}
