//! Extreme eigenvalue and spectral-norm estimation.
//!
//! Everything here is matrix-free: operators are supplied as closures and
//! only matrix-vector products are used, so one step costs `O(nnz)`. The
//! Krylov basis is built by Lanczos with full reorthogonalization from a
//! seeded pseudo-random start vector. Ritz values are extracted from the
//! tridiagonal projection by Sturm-sequence bisection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::block::{sp_add, BlockSparseMatrix};
use crate::error::{Error, Result};

pub const DEFAULT_SEED: u64 = 0x5eed_2015;

/// Smallest and largest singular value estimates of a symmetric positive
/// semidefinite matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingularInterval {
    pub a: f64,
    pub b: f64,
    /// `b / a`; `None` when `a == 0`.
    pub kappa: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub seed: u64,
}

impl SingularInterval {
    /// Interval from known values (no estimation involved).
    pub fn exact(a: f64, b: f64) -> Self {
        SingularInterval {
            a,
            b,
            kappa: (a > 0.0).then(|| b / a),
            converged: true,
            iterations: 0,
            seed: 0,
        }
    }
}

/// Settings for the Krylov estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions {
            tol: 1e-10,
            max_iter: 400,
            seed: DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LanczosExtremes {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
    pub converged: bool,
}

/// Number of eigenvalues of the symmetric tridiagonal `(alpha, beta)` that
/// are strictly below `x`.
fn sturm_count(alpha: &[f64], beta: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut d = 1.0;
    for i in 0..alpha.len() {
        let off = if i == 0 { 0.0 } else { beta[i - 1] * beta[i - 1] };
        d = alpha[i] - x - if i == 0 { 0.0 } else { off / d };
        if d == 0.0 {
            d = -f64::EPSILON * (alpha[i].abs() + x.abs()).max(f64::MIN_POSITIVE);
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

/// The `k`-th smallest eigenvalue (0-based) of a symmetric tridiagonal.
fn tridiag_eigenvalue(alpha: &[f64], beta: &[f64], k: usize) -> f64 {
    let n = alpha.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { beta[i - 1].abs() } else { 0.0 } + if i + 1 < n { beta[i].abs() } else { 0.0 };
        lo = lo.min(alpha[i] - r);
        hi = hi.max(alpha[i] + r);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(alpha, beta, mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Last component of the unit eigenvector of the tridiagonal for eigenvalue
/// `theta`, by two steps of inverse iteration.
fn ritz_last_component(alpha: &[f64], beta: &[f64], theta: f64) -> f64 {
    let n = alpha.len();
    if n == 1 {
        return 1.0;
    }
    let scale = alpha.iter().chain(beta.iter()).fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let shift = theta + scale * 1e-13;
    let mut v = vec![1.0; n];
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    for _ in 0..2 {
        // Thomas algorithm on (T - shift I) x = v.
        let sub = |i: usize| beta[i - 1];
        let mut diag = alpha[0] - shift;
        if diag == 0.0 {
            diag = scale * 1e-300;
        }
        c[0] = beta[0] / diag;
        d[0] = v[0] / diag;
        for i in 1..n {
            let mut m = alpha[i] - shift - sub(i) * c[i - 1];
            if m == 0.0 {
                m = scale * 1e-300;
            }
            c[i] = if i + 1 < n { beta[i] / m } else { 0.0 };
            d[i] = (v[i] - sub(i) * d[i - 1]) / m;
        }
        v[n - 1] = d[n - 1];
        for i in (0..n - 1).rev() {
            v[i] = d[i] - c[i] * v[i + 1];
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return 1.0;
        }
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v[n - 1]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn random_unit(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
    let n = norm2(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Ritz-pair convergence test: residual `beta·|s_last|`, with the
/// eigenvalue error estimated as `min(res, res²/gap)`.
fn ritz_converged(alpha: &[f64], beta: &[f64], beta_next: f64, theta: f64, gap: f64, tol: f64, scale: f64) -> bool {
    let res = beta_next * ritz_last_component(alpha, beta, theta).abs();
    let err = if gap > 0.0 { res.min(res * res / gap) } else { res };
    err <= tol * scale
}

/// Which Ritz values must meet the tolerance before Lanczos stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Ends {
    Both,
    Largest,
}

/// Lanczos with full reorthogonalization for the extreme eigenvalues of a
/// symmetric operator of dimension `dim`.
pub(crate) fn lanczos_extremes(
    dim: usize,
    apply: impl Fn(&[f64]) -> Vec<f64>,
    opts: &SpectralOptions,
    ends: Ends,
) -> LanczosExtremes {
    if dim == 0 {
        return LanczosExtremes {
            min: 0.0,
            max: 0.0,
            steps: 0,
            converged: true,
        };
    }
    let max_steps = opts.max_iter.max(1).min(dim);
    let mut basis: Vec<Vec<f64>> = vec![random_unit(dim, opts.seed)];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut result = LanczosExtremes {
        min: 0.0,
        max: 0.0,
        steps: 0,
        converged: false,
    };
    for j in 0..max_steps {
        let q = &basis[j];
        let mut w = apply(q);
        let a = dot(&w, q);
        alpha.push(a);
        // Two passes of classical Gram-Schmidt against the whole basis.
        for _ in 0..2 {
            for v in &basis {
                let c = dot(&w, v);
                w.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
            }
        }
        let b = norm2(&w);
        let off = &beta[..j];
        let lo = tridiag_eigenvalue(&alpha, off, 0);
        let hi = tridiag_eigenvalue(&alpha, off, j);
        let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
        result.min = lo;
        result.max = hi;
        result.steps = j + 1;
        if b <= 1e-14 * scale || j + 1 == dim {
            result.converged = true;
            break;
        }
        if j >= 2 {
            let lo2 = tridiag_eigenvalue(&alpha, off, 1);
            let hi2 = tridiag_eigenvalue(&alpha, off, j - 1);
            if ritz_converged(&alpha, off, b, hi, hi - hi2, opts.tol, scale)
                && (ends == Ends::Largest || ritz_converged(&alpha, off, b, lo, lo2 - lo, opts.tol, scale))
            {
                result.converged = true;
                break;
            }
        }
        beta.push(b);
        basis.push(w.into_iter().map(|x| x / b).collect());
    }
    result
}

/// Largest singular value of an operator given `v ↦ Av` and `u ↦ Aᵀu`.
/// Returns the estimate and whether it converged.
pub fn spectral_norm_op(
    ncols: usize,
    apply: impl Fn(&[f64]) -> Vec<f64>,
    apply_t: impl Fn(&[f64]) -> Vec<f64>,
    opts: &SpectralOptions,
) -> (f64, bool) {
    let res = lanczos_extremes(ncols, |v| apply_t(&apply(v)), opts, Ends::Largest);
    (res.max.max(0.0).sqrt(), res.converged)
}

/// Spectral norm of a block-sparse matrix.
pub fn spectral_norm(a: &BlockSparseMatrix, opts: &SpectralOptions) -> (f64, bool) {
    if a.is_zero() {
        return (0.0, true);
    }
    spectral_norm_op(
        a.ncols(),
        |v| a.matvec(v).expect("dimension checked"),
        |u| a.matvec_transpose(u).expect("dimension checked"),
        opts,
    )
}

/// `‖A − B‖₂` to relative tolerance `1e-6`. A symmetric difference is
/// handled through its extreme eigenvalues.
pub fn two_norm_error(a: &BlockSparseMatrix, b: &BlockSparseMatrix) -> Result<f64> {
    let diff = sp_add(a, b, 1.0, -1.0)?;
    let opts = SpectralOptions {
        tol: 1e-6,
        ..Default::default()
    };
    if diff.is_zero() {
        return Ok(0.0);
    }
    if diff.is_square_partition() && diff.check_symmetric(1e-12).is_ok() {
        let res = lanczos_extremes(diff.nrows(), |v| diff.matvec(v).expect("square"), &opts, Ends::Both);
        return Ok(res.min.abs().max(res.max.abs()));
    }
    Ok(spectral_norm(&diff, &opts).0)
}

/// Extreme singular values of a symmetric positive semidefinite matrix.
///
/// `b` is the largest Ritz value of `W`; `a` is `b` minus the largest Ritz
/// value of the shifted operator `bI − W`. Both come out of one Krylov
/// sequence since the Krylov space is shift invariant.
pub fn extreme_singular_values(w: &BlockSparseMatrix, tol: f64, max_iter: usize) -> Result<SingularInterval> {
    extreme_singular_values_with(
        w,
        &SpectralOptions {
            tol,
            max_iter,
            seed: DEFAULT_SEED,
        },
    )
}

pub fn extreme_singular_values_with(w: &BlockSparseMatrix, opts: &SpectralOptions) -> Result<SingularInterval> {
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::invalid("tol/max_iter", "need tol > 0 and max_iter >= 1"));
    }
    w.check_symmetric(1e-8)?;
    if w.is_zero() {
        return Ok(SingularInterval {
            a: 0.0,
            b: 0.0,
            kappa: None,
            converged: true,
            iterations: 0,
            seed: opts.seed,
        });
    }
    let res = lanczos_extremes(w.nrows(), |v| w.matvec(v).expect("square"), opts, Ends::Both);
    let b = res.max.max(0.0);
    let shifted_top = b - res.min;
    let a = (b - shifted_top).max(0.0);
    Ok(SingularInterval {
        a,
        b,
        kappa: (a > 0.0).then(|| b / a),
        converged: res.converged,
        iterations: res.steps,
        seed: opts.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn diag(v: &[f64]) -> BlockSparseMatrix {
        let d = DMatrix::from_diagonal(&DVector::from_row_slice(v));
        BlockSparseMatrix::from_dense(&d, vec![1; v.len()], vec![1; v.len()]).unwrap()
    }

    #[test]
    fn identity_interval() {
        let sv = extreme_singular_values(&BlockSparseMatrix::identity(&[5]).unwrap(), 1e-12, 100).unwrap();
        assert!((sv.a - 1.0).abs() < 1e-12 && (sv.b - 1.0).abs() < 1e-12);
        assert!((sv.kappa.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_interval() {
        let sv = extreme_singular_values(&diag(&[1.0, 4.0]), 1e-12, 100).unwrap();
        assert!((sv.a - 1.0).abs() < 1e-12, "{sv:?}");
        assert!((sv.b - 4.0).abs() < 1e-12);
        assert!((sv.kappa.unwrap() - 4.0).abs() < 1e-11);
    }

    #[test]
    fn zero_matrix_has_no_kappa() {
        let z = BlockSparseMatrix::zeros(vec![2], vec![2]).unwrap();
        let sv = extreme_singular_values(&z, 1e-8, 10).unwrap();
        assert_eq!((sv.a, sv.b, sv.kappa), (0.0, 0.0, None));
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let a = BlockSparseMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[1., 1., 0., 1.]), vec![2], vec![2]).unwrap();
        assert!(matches!(extreme_singular_values(&a, 1e-8, 10), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn norm_of_diagonal_difference() {
        let a = diag(&[1.5, 2.1]);
        let b = diag(&[1.0, 2.0]);
        assert!((two_norm_error(&a, &b).unwrap() - 0.5).abs() < 1e-9);
        assert_eq!(two_norm_error(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn tridiagonal_bisection() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3.
        let (al, be) = ([2.0, 2.0], [1.0]);
        assert!((tridiag_eigenvalue(&al, &be, 0) - 1.0).abs() < 1e-14);
        assert!((tridiag_eigenvalue(&al, &be, 1) - 3.0).abs() < 1e-14);
    }
}
