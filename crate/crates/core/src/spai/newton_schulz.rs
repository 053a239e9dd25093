use std::time::Instant;

use nalgebra::DMatrix;

use super::report::{ApproxInverse, IterationRecord, NewtonSchulzConfig, SpaiMethod, SpaiReport, SpaiStatus};
use crate::error::{Error, Result};
use crate::sparse::spectral::{
    extreme_singular_values_with, lanczos_extremes, Ends, SingularInterval, SpectralOptions,
};
use crate::sparse::{drop_h2, mask_h1, sp_add, spgemm, spgemm_masked, transpose, BlockSparseMatrix, PatternMatrix};
use crate::statespace::Gramian;

/// `((κ²−1)/(κ²+1))^{2^k}`, evaluated in log space.
pub fn error_bound(kappa: f64, k: u32) -> Result<f64> {
    if !(kappa >= 1.0) || kappa.is_infinite() {
        return Err(Error::invalid("kappa", format!("condition number must be finite and >= 1, got {kappa}")));
    }
    if kappa == 1.0 {
        return Ok(0.0);
    }
    let log_q = (-2.0 / (kappa * kappa + 1.0)).ln_1p();
    Ok((log_q * 2f64.powi(k as i32)).exp())
}

/// `X₀ = 2/(a² + b²)·W`.
pub fn initial_guess(w: &Gramian, sv: &SingularInterval) -> Result<BlockSparseMatrix> {
    if !(sv.b > 0.0) {
        return Err(Error::invalid("interval", "largest singular value must be positive"));
    }
    Ok(w.matrix.scale(2.0 / (sv.a * sv.a + sv.b * sv.b)))
}

/// Extreme singular values of a Gramian, rejecting matrices that are not
/// numerically positive definite.
pub fn definite_interval(w: &Gramian, seed: u64) -> Result<SingularInterval> {
    let sv = extreme_singular_values_with(
        &w.matrix,
        &SpectralOptions {
            tol: 1e-10,
            max_iter: 400,
            seed,
        },
    )?;
    check_definite(&sv)?;
    Ok(sv)
}

fn check_definite(sv: &SingularInterval) -> Result<()> {
    if !(sv.a > 0.0) || sv.a <= 1e-14 * sv.b {
        return Err(Error::NotPositiveDefinite { a: sv.a });
    }
    Ok(())
}

/// `‖I − W X‖₂` by Lanczos on `EᵀE`.
fn residual_norm(
    dim: usize,
    apply_w: &dyn Fn(&[f64]) -> Vec<f64>,
    apply_x: &dyn Fn(&[f64]) -> Vec<f64>,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> f64 {
    let e = |v: &[f64]| -> Vec<f64> {
        let wx = apply_w(&apply_x(v));
        v.iter().zip(wx).map(|(a, b)| a - b).collect()
    };
    // W and X are symmetric, so Eᵀ = I − X W.
    let et = |v: &[f64]| -> Vec<f64> {
        let xw = apply_x(&apply_w(v));
        v.iter().zip(xw).map(|(a, b)| a - b).collect()
    };
    let opts = SpectralOptions {
        tol,
        max_iter,
        seed,
    };
    lanczos_extremes(dim, |v| et(&e(v)), &opts, Ends::Largest).max.max(0.0).sqrt()
}

/// `‖I − W X‖₂` for symmetric `W` and `X`, estimated by Lanczos.
pub fn inverse_residual(w: &BlockSparseMatrix, x: &BlockSparseMatrix, opts: &SpectralOptions) -> Result<f64> {
    if !w.same_partition(x) || !w.is_square_partition() {
        return Err(Error::DimensionMismatch {
            op: "inverse_residual",
            left: w.shape_string(),
            right: x.shape_string(),
        });
    }
    let apply_w = |v: &[f64]| w.matvec(v).expect("square");
    let apply_x = |v: &[f64]| x.matvec(v).expect("square");
    Ok(residual_norm(w.nrows(), &apply_w, &apply_x, opts.tol, opts.max_iter, opts.seed))
}

struct Tracker {
    report: SpaiReport,
    increases: usize,
    kappa: f64,
}

impl Tracker {
    /// Records iteration `k` and returns a terminal status if one applies.
    fn record(&mut self, cfg: &NewtonSchulzConfig, k: usize, epsilon: f64, nnz: usize, seconds: f64) -> Option<SpaiStatus> {
        let bound = error_bound(self.kappa, k.min(u32::MAX as usize) as u32).unwrap_or(f64::NAN);
        let prev = self.report.iterations.last().map(|r| r.epsilon);
        let best = self.report.iterations.iter().map(|r| r.epsilon).fold(f64::INFINITY, f64::min);
        self.report.iterations.push(IterationRecord {
            k,
            epsilon,
            bound,
            nnz_blocks: nnz,
            seconds,
        });
        if epsilon <= cfg.tol {
            return Some(SpaiStatus::Converged);
        }
        if !epsilon.is_finite() {
            return Some(SpaiStatus::Diverged);
        }
        if let Some(prev) = prev {
            if epsilon > cfg.divergence_factor * prev {
                self.increases += 1;
                if self.increases >= 2 {
                    return Some(SpaiStatus::Diverged);
                }
            } else {
                self.increases = 0;
            }
            if cfg.stop_on_stall && best < 0.5 && epsilon >= prev {
                return Some(SpaiStatus::Stalled);
            }
        }
        if k >= cfg.max_iter {
            return Some(SpaiStatus::MaxIter);
        }
        None
    }
}

/// Newton-Schulz iteration `Z_k = X_k(2I − W X_k)`, `X_{k+1} = H(Z_k)`.
///
/// Sparse mode returns the iterate with the smallest residual, which differs
/// from the last one when the iteration stalls or diverges.
///
/// In sparse mode `H = H₂ ∘ H₁` (mask to the symmetrized pattern, then drop
/// entries `|z| ≤ φ`), and the initial guess is sparsified the same way so
/// every iterate lies inside the pattern. Dense mode applies no
/// sparsification and runs on dense storage.
pub fn newton_schulz(w: &Gramian, cfg: &NewtonSchulzConfig) -> Result<ApproxInverse> {
    cfg.validate()?;
    let sv = match cfg.interval {
        Some(sv) => {
            check_definite(&sv)?;
            sv
        }
        None => definite_interval(w, cfg.seed)?,
    };
    let mut tracker = Tracker {
        report: SpaiReport::new(SpaiMethod::NewtonSchulz),
        increases: 0,
        kappa: (sv.b / sv.a).max(1.0),
    };
    tracker.report.kappa_used = Some(tracker.kappa);
    tracker.report.interval = Some(sv);
    tracker.report.mu = w.mu;
    let start = Instant::now();
    let x = if cfg.dense {
        dense_iteration(w, &sv, cfg, &mut tracker)?
    } else {
        sparse_iteration(w, &sv, cfg, &mut tracker)?
    };
    tracker.report.total_seconds = start.elapsed().as_secs_f64();
    Ok(ApproxInverse {
        x,
        report: tracker.report,
        method: SpaiMethod::NewtonSchulz,
    })
}

fn dense_iteration(
    w: &Gramian,
    sv: &SingularInterval,
    cfg: &NewtonSchulzConfig,
    tracker: &mut Tracker,
) -> Result<BlockSparseMatrix> {
    let wd = w.matrix.to_dense();
    let dim = wd.nrows();
    let mut x: DMatrix<f64> = &wd * (2.0 / (sv.a * sv.a + sv.b * sv.b));
    let tol = cfg.residual_tol();
    for k in 0.. {
        let t0 = Instant::now();
        let apply_w = |v: &[f64]| (&wd * nalgebra::DVector::from_column_slice(v)).as_slice().to_vec();
        let apply_x = |v: &[f64]| (&x * nalgebra::DVector::from_column_slice(v)).as_slice().to_vec();
        let eps = residual_norm(dim, &apply_w, &apply_x, tol, cfg.residual_max_iter(), cfg.seed);
        let nnz = w.matrix.block_rows() * w.matrix.block_cols();
        if let Some(status) = tracker.record(cfg, k, eps, nnz, t0.elapsed().as_secs_f64()) {
            tracker.report.status = status;
            break;
        }
        let wx = &wd * &x;
        let mut z = &x * 2.0 - &x * wx;
        z = (&z + z.transpose()) * 0.5;
        x = z;
        if let Some(last) = tracker.report.iterations.last_mut() {
            last.seconds = t0.elapsed().as_secs_f64();
        }
    }
    tracker.report.selected_iteration = tracker.report.iterations.last().map(|r| r.k);
    BlockSparseMatrix::from_dense(&x, w.matrix.row_sizes().to_vec(), w.matrix.col_sizes().to_vec())
}

/// Pattern restricted to `j >= i`.
fn upper(p: &PatternMatrix) -> PatternMatrix {
    PatternMatrix::from_entries(p.nrows(), p.ncols(), p.entries().filter(|&(i, j)| j >= i))
        .expect("subset of a valid pattern")
}

/// Completes a block-upper-triangular symmetric matrix from its upper part.
fn mirror_upper(u: &BlockSparseMatrix) -> Result<BlockSparseMatrix> {
    let strict = u.filter_blocks(|i, j| j > i);
    sp_add(u, &transpose(&strict), 1.0, 1.0)
}

fn sparsify(z: &BlockSparseMatrix, mask: Option<&PatternMatrix>, phi: Option<f64>) -> Result<BlockSparseMatrix> {
    let masked = match mask {
        Some(p) => mask_h1(z, p)?,
        None => z.clone(),
    };
    match phi {
        Some(phi) if phi > 0.0 => drop_h2(&masked, phi),
        _ => Ok(masked),
    }
}

fn sparse_iteration(
    w: &Gramian,
    sv: &SingularInterval,
    cfg: &NewtonSchulzConfig,
    tracker: &mut Tracker,
) -> Result<BlockSparseMatrix> {
    let wm = &w.matrix;
    let mask = match &cfg.pattern {
        Some(p) => {
            if p.nrows() != wm.block_rows() || p.ncols() != wm.block_cols() {
                return Err(Error::DimensionMismatch {
                    op: "newton_schulz pattern",
                    left: wm.shape_string(),
                    right: format!("{}x{} pattern", p.nrows(), p.ncols()),
                });
            }
            Some(p.symmetrize())
        }
        None => None,
    };
    let upper_mask = mask.as_ref().map(upper);
    let mut x = sparsify(&initial_guess(w, sv)?, mask.as_ref(), cfg.phi)?;
    let mut best: Option<(usize, f64, BlockSparseMatrix)> = None;
    let tol = cfg.residual_tol();
    let dim = wm.nrows();
    for k in 0.. {
        let t0 = Instant::now();
        let apply_w = |v: &[f64]| wm.matvec(v).expect("square");
        let apply_x = |v: &[f64]| x.matvec(v).expect("square");
        let eps = residual_norm(dim, &apply_w, &apply_x, tol, cfg.residual_max_iter(), cfg.seed);
        if best.as_ref().is_none_or(|b| eps < b.1) {
            best = Some((k, eps, x.clone()));
        }
        if let Some(status) = tracker.record(cfg, k, eps, x.nnz_blocks(), t0.elapsed().as_secs_f64()) {
            tracker.report.status = status;
            break;
        }
        // Z = 2X − X(WX), evaluated on the upper half of the mask and mirrored.
        let wx = spgemm(wm, &x)?;
        let xwx = match &upper_mask {
            Some(u) => mirror_upper(&spgemm_masked(&x, &wx, u)?)?,
            None => spgemm(&x, &wx)?,
        };
        let z = sp_add(&x, &xwx, 2.0, -1.0)?;
        x = sparsify(&z, mask.as_ref(), cfg.phi)?;
        if let Some(last) = tracker.report.iterations.last_mut() {
            last.seconds = t0.elapsed().as_secs_f64();
        }
    }
    match best {
        Some((k, _, bx)) => {
            tracker.report.selected_iteration = Some(k);
            Ok(bx)
        }
        None => Ok(x),
    }
}

/// Forms `W_r = W + μI` and runs [`newton_schulz`] on it with the shifted
/// interval `[a + μ, b + μ]`.
pub fn regularize_and_invert(w: &Gramian, mu: f64, cfg: &NewtonSchulzConfig) -> Result<ApproxInverse> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::invalid("mu", format!("must be finite and nonnegative, got {mu}")));
    }
    let sv = match cfg.interval {
        Some(sv) => sv,
        None => extreme_singular_values_with(
            &w.matrix,
            &SpectralOptions {
                tol: 1e-10,
                max_iter: 400,
                seed: cfg.seed,
            },
        )?,
    };
    let shifted = SingularInterval {
        a: sv.a + mu,
        b: sv.b + mu,
        kappa: (sv.a + mu > 0.0).then(|| (sv.b + mu) / (sv.a + mu)),
        ..sv
    };
    let wr = Gramian {
        matrix: if mu > 0.0 { w.matrix.add_identity(mu)? } else { w.matrix.clone() },
        p: w.p,
        mu: w.mu + mu,
        kind: w.kind,
    };
    let mut inner = cfg.clone();
    inner.interval = Some(shifted);
    let mut out = newton_schulz(&wr, &inner)?;
    out.report.kappa_original = sv.kappa;
    out.report.mu = wr.mu;
    Ok(out)
}
