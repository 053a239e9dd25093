//! Interconnected linear systems, their lifted representations and
//! finite-time Gramians.
//!
//! Subsystem `i` evolves as
//! `x_i(k+1) = A_ii x_i(k) + Σ_{j ∈ M_i} A_ij x_j(k) + B_i u_i(k)` with
//! output `y_i(k) = C_i x_i(k) + D_i u_i(k)`. Stacking all subsystems gives
//! the global matrices `A, B, C, D`.
//!
//! Lifting over a window `p` stacks `p + 1` consecutive samples. The
//! classical form orders lifted vectors time-major; the structure-preserving
//! form orders them subsystem-major so that lifted matrices stay block-sparse
//! per subsystem.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::spectral::{spectral_norm, SpectralOptions};
use crate::sparse::{binarize, sp_add, spgemm, transpose, BlockSparseMatrix, PatternMatrix};

/// Coupling block attached to the directed edge `(i, j)`: subsystem `i`
/// is driven by the state of subsystem `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    /// Row-major `n x n` block.
    #[serde(rename = "A_ij")]
    pub a: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterconnectedSystem {
    #[serde(rename = "N")]
    pub subsystems: usize,
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub edges: Vec<Edge>,
    /// Row-major `A_ii` blocks.
    pub diag: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
    /// Generator parameters and other provenance.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub meta: serde_json::Value,
}

impl InterconnectedSystem {
    /// Structural checks: block counts, block lengths, edge indices and
    /// nonzero coupling blocks.
    pub fn validate(&self) -> Result<()> {
        let (nn, n, m, r) = (self.subsystems, self.n, self.m, self.r);
        if nn == 0 || n == 0 || m == 0 || r == 0 {
            return Err(Error::invalid("system", "N, n, m and r must all be positive"));
        }
        let check = |name: &'static str, blocks: &[Vec<f64>], len: usize| -> Result<()> {
            if blocks.len() != nn {
                return Err(Error::invalid(name, format!("expected {nn} blocks, got {}", blocks.len())));
            }
            for (i, blk) in blocks.iter().enumerate() {
                if blk.len() != len {
                    return Err(Error::BlockShape {
                        row: i,
                        col: i,
                        got: blk.len(),
                        expected: len,
                    });
                }
            }
            Ok(())
        };
        check("diag", &self.diag, n * n)?;
        check("B", &self.b, n * m)?;
        check("C", &self.c, r * n)?;
        check("D", &self.d, r * m)?;
        for e in &self.edges {
            if e.i >= nn || e.j >= nn {
                return Err(Error::invalid(
                    "edges",
                    format!("edge ({}, {}) out of range for N = {nn}", e.i, e.j),
                ));
            }
            if e.a.len() != n * n {
                return Err(Error::BlockShape {
                    row: e.i,
                    col: e.j,
                    got: e.a.len(),
                    expected: n * n,
                });
            }
            if e.a.iter().all(|v| *v == 0.0) {
                return Err(Error::ZeroEdgeBlock { i: e.i, j: e.j });
            }
        }
        Ok(())
    }

    /// Neighbour set `{j : (i, j) ∈ E, j ≠ i}`, sorted.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter(|e| e.i == i && e.j != i)
            .map(|e| e.j)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Interconnection pattern `Ā`: edges plus nonzero diagonal blocks.
    pub fn interconnection_pattern(&self) -> PatternMatrix {
        let diag = self
            .diag
            .iter()
            .enumerate()
            .filter(|(_, b)| b.iter().any(|v| *v != 0.0))
            .map(|(i, _)| (i, i));
        let edges = self.edges.iter().map(|e| (e.i, e.j));
        PatternMatrix::from_entries(self.subsystems, self.subsystems, diag.chain(edges))
            .expect("indices validated")
    }

    pub fn state_dim(&self) -> usize {
        self.subsystems * self.n
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let sys: Self = serde_json::from_str(text)?;
        sys.validate()?;
        Ok(sys)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let sys: Self = serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?;
        sys.validate()?;
        Ok(sys)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Global matrices of the stacked system.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMatrices {
    pub a: BlockSparseMatrix,
    pub b: BlockSparseMatrix,
    pub c: BlockSparseMatrix,
    pub d: BlockSparseMatrix,
}

pub fn assemble_global(sys: &InterconnectedSystem) -> Result<GlobalMatrices> {
    sys.validate()?;
    let nn = sys.subsystems;
    let sizes = |s: usize| vec![s; nn];
    let diag_of = |blocks: &[Vec<f64>]| blocks.iter().cloned().enumerate().map(|(i, b)| ((i, i), b)).collect::<Vec<_>>();
    let mut a_blocks = diag_of(&sys.diag);
    a_blocks.extend(sys.edges.iter().map(|e| ((e.i, e.j), e.a.clone())));
    Ok(GlobalMatrices {
        a: BlockSparseMatrix::from_blocks(sizes(sys.n), sizes(sys.n), a_blocks)?,
        b: BlockSparseMatrix::from_blocks(sizes(sys.n), sizes(sys.m), diag_of(&sys.b))?,
        c: BlockSparseMatrix::from_blocks(sizes(sys.r), sizes(sys.n), diag_of(&sys.c))?,
        d: BlockSparseMatrix::from_blocks(sizes(sys.r), sizes(sys.m), diag_of(&sys.d))?,
    })
}

/// Accumulates sub-blocks into the blocks of a block-sparse matrix.
struct Assembler {
    row_sizes: Vec<usize>,
    col_sizes: Vec<usize>,
    blocks: HashMap<(usize, usize), Vec<f64>>,
}

impl Assembler {
    fn new(row_sizes: Vec<usize>, col_sizes: Vec<usize>) -> Self {
        Assembler {
            row_sizes,
            col_sizes,
            blocks: HashMap::new(),
        }
    }

    /// Places the row-major `rows x cols` slice `src` at offset `(r0, c0)`
    /// inside block `(i, j)`.
    #[allow(clippy::too_many_arguments)]
    fn put(&mut self, i: usize, j: usize, r0: usize, c0: usize, rows: usize, cols: usize, src: &[f64]) {
        let width = self.col_sizes[j];
        let len = self.row_sizes[i] * width;
        let dst = self.blocks.entry((i, j)).or_insert_with(|| vec![0.0; len]);
        for a in 0..rows {
            dst[(r0 + a) * width + c0..(r0 + a) * width + c0 + cols].copy_from_slice(&src[a * cols..(a + 1) * cols]);
        }
    }

    fn finish(self) -> Result<BlockSparseMatrix> {
        BlockSparseMatrix::from_blocks(self.row_sizes, self.col_sizes, self.blocks)
    }
}

/// Lifted representation of a system over a window `p`.
#[derive(Debug, Clone)]
pub struct LiftedModel {
    pub p: usize,
    pub subsystems: usize,
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub global: GlobalMatrices,
    /// Time-major observability matrix `[C; CA; …; CA^p]`.
    pub o_p: BlockSparseMatrix,
    /// Time-major impulse response matrix.
    pub gamma_p: BlockSparseMatrix,
    /// Time-major controllability matrix `[A^{p-1}B … AB B 0]`.
    pub r_p: BlockSparseMatrix,
    pub cal_o: BlockSparseMatrix,
    pub cal_g: BlockSparseMatrix,
    pub cal_r: BlockSparseMatrix,
    pub a_pow_p: BlockSparseMatrix,
    /// `perm_y[s] = t` means structured output index `s` reads classical index `t`.
    pub perm_y: Vec<usize>,
    pub perm_u: Vec<usize>,
    /// Highest power kept in the observability Gramian sum.
    pub obs_last_power: usize,
    /// Highest power kept in the controllability Gramian sum.
    pub ctrl_last_power: usize,
    /// Bound on the Gramian terms dropped by truncation, if any.
    pub truncation_residual: Option<f64>,
}

/// `A^0, …, A^k` as block-sparse matrices.
fn powers(a: &BlockSparseMatrix, k: usize) -> Result<Vec<BlockSparseMatrix>> {
    let mut out = vec![BlockSparseMatrix::identity(a.row_sizes())?];
    for t in 0..k {
        let next = spgemm(&out[t], a)?;
        out.push(next);
    }
    Ok(out)
}

/// Structure index `i·(p+1)·w + t·w + l` ↦ classical index `t·N·w + i·w + l`.
fn lifting_permutation(subsystems: usize, p: usize, w: usize) -> Vec<usize> {
    let mut perm = Vec::with_capacity(subsystems * (p + 1) * w);
    for i in 0..subsystems {
        for t in 0..=p {
            for l in 0..w {
                perm.push(t * subsystems * w + i * w + l);
            }
        }
    }
    perm
}

/// `out[s] = v[perm[s]]`.
pub fn apply_permutation(perm: &[usize], v: &[f64]) -> Vec<f64> {
    perm.iter().map(|&t| v[t]).collect()
}

/// Inverse of [`apply_permutation`]: `out[perm[s]] = v[s]`.
pub fn apply_inverse_permutation(perm: &[usize], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for (s, &t) in perm.iter().enumerate() {
        out[t] = v[s];
    }
    out
}

pub fn lift(sys: &InterconnectedSystem, p: usize) -> Result<LiftedModel> {
    if p < 1 {
        return Err(Error::invalid("p", "lifting window must be at least 1"));
    }
    let global = assemble_global(sys)?;
    lift_global(global, sys.subsystems, p)
}

/// Lifts already-assembled global matrices.
pub fn lift_global(global: GlobalMatrices, subsystems: usize, p: usize) -> Result<LiftedModel> {
    if p < 1 {
        return Err(Error::invalid("p", "lifting window must be at least 1"));
    }
    let nn = subsystems;
    let (n, m, r) = (global.a.row_sizes()[0], global.b.col_sizes()[0], global.c.row_sizes()[0]);
    let pw = powers(&global.a, p)?;
    let ca: Vec<BlockSparseMatrix> = pw.iter().map(|ap| spgemm(&global.c, ap)).collect::<Result<_>>()?;
    let apb: Vec<BlockSparseMatrix> = pw[..p].iter().map(|ap| spgemm(ap, &global.b)).collect::<Result<_>>()?;
    // markov[l] = C A^{l-1} B for l >= 1.
    let mut markov = vec![global.d.clone()];
    for ab in &apb {
        markov.push(spgemm(&global.c, ab)?);
    }

    let mut cal_o = Assembler::new(vec![(p + 1) * r; nn], vec![n; nn]);
    let mut o_p = Assembler::new(vec![r; (p + 1) * nn], vec![n; nn]);
    for (t, m_t) in ca.iter().enumerate() {
        for (i, j, blk) in m_t.iter_blocks() {
            cal_o.put(i, j, t * r, 0, r, n, blk);
            o_p.put(t * nn + i, j, 0, 0, r, n, blk);
        }
    }

    let mut cal_g = Assembler::new(vec![(p + 1) * r; nn], vec![(p + 1) * m; nn]);
    let mut gamma_p = Assembler::new(vec![r; (p + 1) * nn], vec![m; (p + 1) * nn]);
    for t in 0..=p {
        for s in 0..=t {
            for (i, j, blk) in markov[t - s].iter_blocks() {
                cal_g.put(i, j, t * r, s * m, r, m, blk);
                gamma_p.put(t * nn + i, s * nn + j, 0, 0, r, m, blk);
            }
        }
    }

    let mut cal_r = Assembler::new(vec![n; nn], vec![(p + 1) * m; nn]);
    let mut r_p = Assembler::new(vec![n; nn], vec![m; (p + 1) * nn]);
    for s in 0..p {
        for (i, j, blk) in apb[p - 1 - s].iter_blocks() {
            cal_r.put(i, j, 0, s * m, n, m, blk);
            r_p.put(i, s * nn + j, 0, 0, n, m, blk);
        }
    }

    let model = LiftedModel {
        p,
        subsystems: nn,
        n,
        m,
        r,
        o_p: o_p.finish()?,
        gamma_p: gamma_p.finish()?,
        r_p: r_p.finish()?,
        cal_o: cal_o.finish()?,
        cal_g: cal_g.finish()?,
        cal_r: cal_r.finish()?,
        a_pow_p: pw[p].clone(),
        perm_y: lifting_permutation(nn, p, r),
        perm_u: lifting_permutation(nn, p, m),
        obs_last_power: p,
        ctrl_last_power: p - 1,
        truncation_residual: None,
        global,
    };
    model.verify_permutation_identities()?;
    Ok(model)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

impl LiftedModel {
    /// Checks `𝒪 = P_Y O_p`, `𝒢 = P_Y Γ P_Uᵀ` and `ℛ = R_p P_Uᵀ` on a
    /// seeded random probe.
    pub fn verify_permutation_identities(&self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x11f7);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let x: Vec<f64> = (0..self.cal_o.ncols()).map(|_| normal.sample(&mut rng)).collect();
        let u: Vec<f64> = (0..self.cal_g.ncols()).map(|_| normal.sample(&mut rng)).collect();
        let u_classical = apply_inverse_permutation(&self.perm_u, &u);

        let lhs_o = self.cal_o.matvec(&x)?;
        let rhs_o = apply_permutation(&self.perm_y, &self.o_p.matvec(&x)?);
        let lhs_g = self.cal_g.matvec(&u)?;
        let rhs_g = apply_permutation(&self.perm_y, &self.gamma_p.matvec(&u_classical)?);
        let lhs_r = self.cal_r.matvec(&u)?;
        let rhs_r = self.r_p.matvec(&u_classical)?;
        for (name, l, r) in [("O", lhs_o, rhs_o), ("G", lhs_g, rhs_g), ("R", lhs_r, rhs_r)] {
            let err = max_abs_diff(&l, &r);
            if err > 1e-12 * inf_norm(&r).max(1.0) {
                return Err(Error::invalid(
                    "lift",
                    format!("structured {name} disagrees with its permuted classical form by {err:e}"),
                ));
            }
        }
        Ok(())
    }

    /// Lifts global output samples `y(k-p), …, y(k)` into `𝒴`.
    pub fn lift_outputs(&self, samples: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.lift_samples(samples, self.r, &self.perm_y)
    }

    /// Lifts global input samples `u(k-p), …, u(k)` into `𝒰`.
    pub fn lift_inputs(&self, samples: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.lift_samples(samples, self.m, &self.perm_u)
    }

    fn lift_samples(&self, samples: &[Vec<f64>], w: usize, perm: &[usize]) -> Result<Vec<f64>> {
        if samples.len() != self.p + 1 {
            return Err(Error::invalid(
                "samples",
                format!("expected {} samples, got {}", self.p + 1, samples.len()),
            ));
        }
        let mut classical = Vec::with_capacity(perm.len());
        for (t, s) in samples.iter().enumerate() {
            if s.len() != self.subsystems * w {
                return Err(Error::invalid(
                    "samples",
                    format!("sample {t} has length {}, expected {}", s.len(), self.subsystems * w),
                ));
            }
            classical.extend_from_slice(s);
        }
        Ok(apply_permutation(perm, &classical))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GramianKind {
    Observability,
    Controllability,
    /// `𝒢ᵀ𝒢`, the normal matrix of the impulse-response solve.
    Impulse,
}

#[derive(Debug, Clone)]
pub struct Gramian {
    pub matrix: BlockSparseMatrix,
    pub p: usize,
    pub mu: f64,
    pub kind: GramianKind,
}

impl Gramian {
    /// Wraps an arbitrary symmetric matrix, e.g. one read from disk.
    pub fn from_matrix(matrix: BlockSparseMatrix, p: usize, mu: f64, kind: GramianKind) -> Result<Self> {
        if !matrix.is_square_partition() {
            return Err(Error::invalid("matrix", "a Gramian needs a square block partition"));
        }
        matrix.check_symmetric(1e-10)?;
        Ok(Gramian { matrix, p, mu, kind })
    }

    pub fn dimension(&self) -> usize {
        self.matrix.nrows()
    }
}

/// `(M + Mᵀ) / 2`, removing round-off asymmetry.
fn symmetrize(m: &BlockSparseMatrix) -> Result<BlockSparseMatrix> {
    sp_add(m, &transpose(m), 0.5, 0.5)
}

fn check_mu(mu: f64) -> Result<()> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::invalid("mu", format!("must be finite and nonnegative, got {mu}")));
    }
    Ok(())
}

/// Observability Gramian `Σ_{i=0}^{p} (Aᵀ)^i CᵀC A^i (+ μI)` by Horner
/// accumulation `M ← AᵀMA + CᵀC`.
pub fn obs_gramian(lifted: &LiftedModel, mu: f64) -> Result<Gramian> {
    check_mu(mu)?;
    let g = &lifted.global;
    let at = transpose(&g.a);
    let ctc = spgemm(&transpose(&g.c), &g.c)?;
    let mut acc = ctc.clone();
    for _ in 0..lifted.obs_last_power {
        let inner = spgemm(&at, &spgemm(&acc, &g.a)?)?;
        acc = sp_add(&inner, &ctc, 1.0, 1.0)?;
    }
    finish_gramian(acc, lifted.p, mu, GramianKind::Observability)
}

/// Controllability Gramian `ℛₚℛₚᵀ = Σ_{i=0}^{p-1} A^i BBᵀ (Aᵀ)^i (+ μI)`.
pub fn ctrl_gramian(lifted: &LiftedModel, mu: f64) -> Result<Gramian> {
    check_mu(mu)?;
    let g = &lifted.global;
    let at = transpose(&g.a);
    let bbt = spgemm(&g.b, &transpose(&g.b))?;
    let mut acc = bbt.clone();
    for _ in 0..lifted.ctrl_last_power {
        let inner = spgemm(&g.a, &spgemm(&acc, &at)?)?;
        acc = sp_add(&inner, &bbt, 1.0, 1.0)?;
    }
    finish_gramian(acc, lifted.p, mu, GramianKind::Controllability)
}

fn finish_gramian(acc: BlockSparseMatrix, p: usize, mu: f64, kind: GramianKind) -> Result<Gramian> {
    let mut matrix = symmetrize(&acc)?;
    if mu > 0.0 {
        matrix = matrix.add_identity(mu)?;
    }
    Ok(Gramian { matrix, p, mu, kind })
}

/// Desk-scale limit for dense rank computations.
pub const DENSE_RANK_LIMIT: usize = 5000;

/// Numerical rank by column-pivoted QR with tolerance `1e-10·|r₁₁|`
/// (`|r₁₁|` is the largest column norm, within `√n` of `σ_max`).
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let tall = if m.nrows() >= m.ncols() { m.clone() } else { m.transpose() };
    if tall.ncols() == 0 {
        return 0;
    }
    let r = tall.col_piv_qr().r();
    let top = r[(0, 0)].abs();
    if top == 0.0 {
        return 0;
    }
    (0..r.nrows().min(r.ncols())).filter(|&k| r[(k, k)].abs() > 1e-10 * top).count()
}

fn check_dense_limit(sys: &InterconnectedSystem) -> Result<()> {
    if sys.state_dim() > DENSE_RANK_LIMIT {
        return Err(Error::invalid(
            "system",
            format!("rank tests are dense; state dimension {} exceeds {DENSE_RANK_LIMIT}", sys.state_dim()),
        ));
    }
    Ok(())
}

/// Smallest `ν ∈ [1, p_max]` with `rank(O_ν) = Nn`, or `None`.
pub fn observability_index(sys: &InterconnectedSystem, p_max: usize) -> Result<Option<usize>> {
    if p_max < 1 {
        return Err(Error::invalid("p_max", "must be at least 1"));
    }
    check_dense_limit(sys)?;
    let g = assemble_global(sys)?;
    let a = g.a.to_dense();
    let full = sys.state_dim();
    let mut rows: Vec<DMatrix<f64>> = vec![g.c.to_dense()];
    for nu in 1..=p_max {
        let next = rows.last().expect("nonempty") * &a;
        rows.push(next);
        if numerical_rank(&vstack(&rows)) == full {
            return Ok(Some(nu));
        }
    }
    Ok(None)
}

/// Smallest `θ ∈ [1, p_max]` with `rank(R_θ) = Nn`, or `None`.
pub fn controllability_index(sys: &InterconnectedSystem, p_max: usize) -> Result<Option<usize>> {
    if p_max < 1 {
        return Err(Error::invalid("p_max", "must be at least 1"));
    }
    check_dense_limit(sys)?;
    let g = assemble_global(sys)?;
    let a = g.a.to_dense();
    let full = sys.state_dim();
    // Columns of R_θ span {A^l B : l < θ}; transposes stack as rows.
    let mut cols: Vec<DMatrix<f64>> = vec![g.b.to_dense()];
    for theta in 1..=p_max {
        if numerical_rank(&vstack(&cols.iter().map(|c| c.transpose()).collect::<Vec<_>>())) == full {
            return Ok(Some(theta));
        }
        let next = &a * cols.last().expect("nonempty");
        cols.push(next);
    }
    Ok(None)
}

fn vstack(parts: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = parts.iter().map(|p| p.nrows()).sum();
    let cols = parts[0].ncols();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r0 = 0;
    for p in parts {
        out.view_mut((r0, 0), (p.nrows(), cols)).copy_from(p);
        r0 += p.nrows();
    }
    out
}

/// Truncates the Gramian sums at power `min(s, p)` once `‖A^s‖₂ ≤ eta`.
/// The returned model records `Σ_{s<i≤p} ‖A^i‖₂²·‖C‖₂²` as the residual
/// bound (the controllability analogue uses `‖B‖₂`).
pub fn truncate_stable_powers(lifted: &LiftedModel, s: usize, eta: f64) -> Result<LiftedModel> {
    if !(eta > 0.0) {
        return Err(Error::invalid("eta", "must be positive"));
    }
    let opts = SpectralOptions {
        tol: 1e-8,
        ..Default::default()
    };
    let pw = powers(&lifted.global.a, s.max(lifted.p))?;
    let norm_s = spectral_norm(&pw[s], &opts).0;
    if norm_s > eta {
        return Err(Error::NotStable { s, norm: norm_s, eta });
    }
    let c_norm = spectral_norm(&lifted.global.c, &opts).0;
    let b_norm = spectral_norm(&lifted.global.b, &opts).0;
    let mut tail = 0.0;
    for ap in pw.iter().take(lifted.p + 1).skip(s + 1) {
        tail += spectral_norm(ap, &opts).0.powi(2);
    }
    let mut out = lifted.clone();
    out.obs_last_power = s.min(lifted.p);
    out.ctrl_last_power = s.min(lifted.p - 1);
    out.truncation_residual = Some(tail * c_norm.max(b_norm).powi(2));
    Ok(out)
}

/// State and output sequences of a simulated run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `x(0), …, x(T)`.
    pub states: Vec<Vec<f64>>,
    /// `y(0), …, y(T-1)`, noise included.
    pub outputs: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
}

/// Simulates `x(k+1) = Ax(k) + Bu(k)`, `y(k) = Cx(k) + Du(k) + n(k)` with
/// i.i.d. Gaussian measurement noise of standard deviation `noise_std`.
pub fn simulate(
    global: &GlobalMatrices,
    x0: &[f64],
    inputs: &[Vec<f64>],
    noise_std: f64,
    seed: u64,
) -> Result<Trajectory> {
    if !(noise_std >= 0.0) {
        return Err(Error::invalid("noise_std", "must be nonnegative"));
    }
    let noise = Normal::new(0.0, noise_std.max(f64::MIN_POSITIVE)).expect("valid normal");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = vec![x0.to_vec()];
    let mut outputs = Vec::with_capacity(inputs.len());
    for u in inputs {
        let x = states.last().expect("nonempty");
        let mut y = global.c.matvec(x)?;
        let du = global.d.matvec(u)?;
        for (yi, di) in y.iter_mut().zip(&du) {
            *yi += di;
            if noise_std > 0.0 {
                *yi += noise.sample(&mut rng);
            }
        }
        outputs.push(y);
        let mut next = global.a.matvec(x)?;
        for (xi, bi) in next.iter_mut().zip(global.b.matvec(u)?) {
            *xi += bi;
        }
        states.push(next);
    }
    Ok(Trajectory {
        states,
        outputs,
        inputs: inputs.to_vec(),
    })
}

/// Block pattern `Ā = binarize(A)` of the assembled system.
pub fn global_pattern(global: &GlobalMatrices) -> PatternMatrix {
    binarize(&global.a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64, b: f64, c: f64, d: f64) -> InterconnectedSystem {
        InterconnectedSystem {
            subsystems: 1,
            n: 1,
            m: 1,
            r: 1,
            edges: vec![],
            diag: vec![vec![a]],
            b: vec![vec![b]],
            c: vec![vec![c]],
            d: vec![vec![d]],
            meta: serde_json::Value::Null,
        }
    }

    #[test]
    fn scalar_markov_parameters() {
        let l = lift(&scalar(0.5, 1.0, 1.0, 0.0), 1).unwrap();
        let g = l.cal_g.to_dense();
        assert_eq!(g.as_slice(), DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]).as_slice());
    }

    #[test]
    fn scalar_gramians() {
        let sys = scalar(0.5, 1.0, 1.0, 0.0);
        let w = obs_gramian(&lift(&sys, 1).unwrap(), 0.0).unwrap();
        assert!((w.matrix.get(0, 0) - 1.25).abs() < 1e-15);
        let q1 = ctrl_gramian(&lift(&sys, 1).unwrap(), 0.0).unwrap();
        assert!((q1.matrix.get(0, 0) - 1.0).abs() < 1e-15);
        let q2 = ctrl_gramian(&lift(&sys, 2).unwrap(), 0.0).unwrap();
        assert!((q2.matrix.get(0, 0) - 1.25).abs() < 1e-15);
    }

    #[test]
    fn zero_dynamics_identity_output() {
        let mut sys = scalar(0.0, 1.0, 1.0, 0.0);
        sys.diag = vec![vec![0.0]];
        let l = lift(&sys, 2).unwrap();
        let o = l.cal_o.to_dense();
        assert_eq!(o.as_slice(), &[1.0, 0.0, 0.0]);
        let w = obs_gramian(&l, 0.0).unwrap();
        assert_eq!(w.matrix.get(0, 0), 1.0);
        assert_eq!(observability_index(&sys, 3).unwrap(), Some(1));
        assert_eq!(controllability_index(&sys, 3).unwrap(), Some(1));
    }

    #[test]
    fn unobservable_and_uncontrollable() {
        let mut sys = scalar(0.5, 0.0, 0.0, 0.0);
        sys.b = vec![vec![0.0]];
        assert_eq!(observability_index(&sys, 4).unwrap(), None);
        assert_eq!(controllability_index(&sys, 4).unwrap(), None);
    }

    #[test]
    fn lift_rejects_zero_window() {
        assert!(lift(&scalar(0.5, 1.0, 1.0, 0.0), 0).is_err());
    }

    #[test]
    fn zero_edge_block_is_rejected() {
        let mut sys = scalar(0.5, 1.0, 1.0, 0.0);
        sys.subsystems = 2;
        for v in [&mut sys.diag, &mut sys.b, &mut sys.c, &mut sys.d] {
            v.push(v[0].clone());
        }
        sys.edges.push(Edge { i: 0, j: 1, a: vec![0.0] });
        assert!(matches!(assemble_global(&sys), Err(Error::ZeroEdgeBlock { i: 0, j: 1 })));
    }

    #[test]
    fn truncation_of_scalar_decay() {
        let sys = scalar(0.5, 1.0, 1.0, 0.0);
        let l = lift(&sys, 20).unwrap();
        let full = obs_gramian(&l, 0.0).unwrap().matrix.get(0, 0);
        let t = truncate_stable_powers(&l, 10, 1e-3).unwrap();
        let cut = obs_gramian(&t, 0.0).unwrap().matrix.get(0, 0);
        assert!((full - cut).abs() < 2e-6);
        assert!(t.truncation_residual.unwrap() >= full - cut - 1e-15);
        let unstable = lift(&scalar(1.1, 1.0, 1.0, 0.0), 4).unwrap();
        assert!(matches!(truncate_stable_powers(&unstable, 2, 1e-3), Err(Error::NotStable { .. })));
    }

    #[test]
    fn permutation_round_trip() {
        let perm = lifting_permutation(3, 2, 2);
        let v: Vec<f64> = (0..perm.len()).map(|i| i as f64).collect();
        assert_eq!(apply_inverse_permutation(&perm, &apply_permutation(&perm, &v)), v);
    }
}
