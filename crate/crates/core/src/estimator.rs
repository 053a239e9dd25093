//! Distributed estimator synthesis, control solves and communication-graph
//! prediction.
//!
//! The estimator gains are `L = X·𝒪ᵀ` and `Q = X·𝒪ᵀ·𝒢`, where `X`
//! approximates the inverse of the (regularized) observability Gramian. The
//! estimate of subsystem `i` is
//! `x̂_i = Σ_{j∈𝕄_L,i} L_ij 𝒴_j − Σ_{j∈𝕄_Q,i} Q_ij 𝒰_j`,
//! so it only needs the lifted signals of its neighbours in `L̄` and `Q̄`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::sparse::mm::{read_block_matrix, write_block_matrix};
use crate::sparse::{binarize, pattern_power_sum, pattern_product, spgemm, transpose, BlockSparseMatrix, PatternMatrix};
use crate::statespace::{numerical_rank, Gramian, GramianKind, LiftedModel, DENSE_RANK_LIMIT};

/// Dimensions shared by the gain matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorShape {
    #[serde(rename = "N")]
    pub subsystems: usize,
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub p: usize,
}

#[derive(Debug, Clone)]
pub struct DistributedEstimator {
    pub shape: EstimatorShape,
    /// Blocks `n × (p+1)r`.
    pub l: BlockSparseMatrix,
    /// Blocks `n × (p+1)m`.
    pub q: BlockSparseMatrix,
    /// `𝕄_L,i = {j : L_ij ≠ 0}`.
    pub l_neighbors: Vec<Vec<usize>>,
    /// `𝕄_Q,i = {j : Q_ij ≠ 0}`.
    pub q_neighbors: Vec<Vec<usize>>,
}

fn neighbor_sets(m: &BlockSparseMatrix) -> Vec<Vec<usize>> {
    (0..m.block_rows()).map(|i| m.row_block_cols(i).to_vec()).collect()
}

fn uniform(sizes: &[usize], expected: usize) -> bool {
    sizes.iter().all(|&s| s == expected)
}

impl DistributedEstimator {
    /// Assembles an estimator from gain matrices, checking block shapes.
    pub fn from_gains(shape: EstimatorShape, l: BlockSparseMatrix, q: BlockSparseMatrix) -> Result<Self> {
        let EstimatorShape { subsystems, n, m, r, p } = shape;
        let ok = l.block_rows() == subsystems
            && l.block_cols() == subsystems
            && q.block_rows() == subsystems
            && q.block_cols() == subsystems
            && uniform(l.row_sizes(), n)
            && uniform(q.row_sizes(), n)
            && uniform(l.col_sizes(), (p + 1) * r)
            && uniform(q.col_sizes(), (p + 1) * m);
        if !ok {
            return Err(Error::DimensionMismatch {
                op: "estimator gains",
                left: format!("L {} / Q {}", l.shape_string(), q.shape_string()),
                right: format!("N={subsystems}, n={n}, m={m}, r={r}, p={p}"),
            });
        }
        Ok(DistributedEstimator {
            shape,
            l_neighbors: neighbor_sets(&l),
            q_neighbors: neighbor_sets(&q),
            l,
            q,
        })
    }

    pub fn communication_graph(&self) -> CommunicationGraph {
        CommunicationGraph::new(binarize(&self.l), binarize(&self.q))
    }

    /// Writes `L.mtx`, `Q.mtx` (with JSON sidecars carrying the shape) and
    /// `communication.csv` into `dir`.
    pub fn write(&self, dir: &Path, meta: serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let header = json!({"shape": self.shape, "run": meta});
        write_block_matrix(&self.l, &dir.join("L.mtx"), header.clone())?;
        write_block_matrix(&self.q, &dir.join("Q.mtx"), header)?;
        let file = std::fs::File::create(dir.join("communication.csv"))?;
        self.communication_graph().write_csv(std::io::BufWriter::new(file))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let (l, lh) = read_block_matrix(&dir.join("L.mtx"))?;
        let (q, _) = read_block_matrix(&dir.join("Q.mtx"))?;
        let header = lh.ok_or_else(|| Error::Parse(format!("{}: missing L.json header", dir.display())))?;
        let shape: EstimatorShape = serde_json::from_value(header.meta["shape"].clone())?;
        Self::from_gains(shape, l, q)
    }
}

/// `L = X·𝒪ᵀ`, `Q = L·𝒢`.
pub fn build_estimator(x: &BlockSparseMatrix, lifted: &LiftedModel) -> Result<DistributedEstimator> {
    if x.row_sizes() != lifted.cal_o.col_sizes() || x.col_sizes() != lifted.cal_o.col_sizes() {
        return Err(Error::DimensionMismatch {
            op: "build_estimator",
            left: x.shape_string(),
            right: format!("{} state partition", lifted.cal_o.shape_string()),
        });
    }
    let l = spgemm(x, &transpose(&lifted.cal_o))?;
    let q = spgemm(&l, &lifted.cal_g)?;
    let shape = EstimatorShape {
        subsystems: lifted.subsystems,
        n: lifted.n,
        m: lifted.m,
        r: lifted.r,
        p: lifted.p,
    };
    DistributedEstimator::from_gains(shape, l, q)
}

/// Source of per-subsystem lifted signals `𝒴_j` and `𝒰_j`.
pub trait SignalProvider: Sync {
    fn outputs(&self, j: usize) -> Option<&[f64]>;
    fn inputs(&self, j: usize) -> Option<&[f64]>;
}

/// Lifted signals keyed by subsystem; absent keys model unavailable links.
#[derive(Debug, Clone, Default)]
pub struct LocalSignals {
    pub outputs: BTreeMap<usize, Vec<f64>>,
    pub inputs: BTreeMap<usize, Vec<f64>>,
}

impl LocalSignals {
    /// Splits structured lifted vectors `𝒴`, `𝒰` into per-subsystem slices.
    pub fn from_lifted(shape: &EstimatorShape, y: &[f64], u: &[f64]) -> Result<Self> {
        let (wy, wu) = ((shape.p + 1) * shape.r, (shape.p + 1) * shape.m);
        if y.len() != shape.subsystems * wy || u.len() != shape.subsystems * wu {
            return Err(Error::DimensionMismatch {
                op: "lifted signals",
                left: format!("|Y|={}, |U|={}", y.len(), u.len()),
                right: format!("|Y|={}, |U|={}", shape.subsystems * wy, shape.subsystems * wu),
            });
        }
        Ok(LocalSignals {
            outputs: y.chunks(wy).map(<[f64]>::to_vec).enumerate().collect(),
            inputs: u.chunks(wu).map(<[f64]>::to_vec).enumerate().collect(),
        })
    }
}

impl SignalProvider for LocalSignals {
    fn outputs(&self, j: usize) -> Option<&[f64]> {
        self.outputs.get(&j).map(Vec::as_slice)
    }

    fn inputs(&self, j: usize) -> Option<&[f64]> {
        self.inputs.get(&j).map(Vec::as_slice)
    }
}

/// Wraps a provider and counts every signal fetch.
pub struct CountingProvider<'a, P: SignalProvider> {
    inner: &'a P,
    output_fetches: AtomicUsize,
    input_fetches: AtomicUsize,
}

impl<'a, P: SignalProvider> CountingProvider<'a, P> {
    pub fn new(inner: &'a P) -> Self {
        CountingProvider {
            inner,
            output_fetches: AtomicUsize::new(0),
            input_fetches: AtomicUsize::new(0),
        }
    }

    pub fn output_fetches(&self) -> usize {
        self.output_fetches.load(Ordering::Relaxed)
    }

    pub fn input_fetches(&self) -> usize {
        self.input_fetches.load(Ordering::Relaxed)
    }

    pub fn total(&self) -> usize {
        self.output_fetches() + self.input_fetches()
    }
}

impl<P: SignalProvider> SignalProvider for CountingProvider<'_, P> {
    fn outputs(&self, j: usize) -> Option<&[f64]> {
        self.output_fetches.fetch_add(1, Ordering::Relaxed);
        self.inner.outputs(j)
    }

    fn inputs(&self, j: usize) -> Option<&[f64]> {
        self.input_fetches.fetch_add(1, Ordering::Relaxed);
        self.inner.inputs(j)
    }
}

fn accumulate(out: &mut [f64], blk: &[f64], v: &[f64], sign: f64) {
    let cols = v.len();
    for (a, o) in out.iter_mut().enumerate() {
        let row = &blk[a * cols..(a + 1) * cols];
        *o += sign * row.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
    }
}

/// Estimate of `x_i(k−p)` from neighbour signals only. Each neighbour
/// signal is fetched exactly once.
pub fn local_estimate<P: SignalProvider>(est: &DistributedEstimator, i: usize, signals: &P) -> Result<Vec<f64>> {
    let sh = &est.shape;
    if i >= sh.subsystems {
        return Err(Error::invalid("i", format!("subsystem {i} out of range 0..{}", sh.subsystems)));
    }
    let (wy, wu) = ((sh.p + 1) * sh.r, (sh.p + 1) * sh.m);
    let mut out = vec![0.0; sh.n];
    let mut missing = Vec::new();
    for (j, blk) in est.l.row_blocks(i) {
        match signals.outputs(j) {
            Some(y) if y.len() == wy => accumulate(&mut out, blk, y, 1.0),
            Some(y) => return Err(bad_len("outputs", j, y.len(), wy)),
            None => missing.push(j),
        }
    }
    for (j, blk) in est.q.row_blocks(i) {
        match signals.inputs(j) {
            Some(u) if u.len() == wu => accumulate(&mut out, blk, u, -1.0),
            Some(u) => return Err(bad_len("inputs", j, u.len(), wu)),
            None => missing.push(j),
        }
    }
    if !missing.is_empty() {
        missing.sort_unstable();
        missing.dedup();
        return Err(Error::MissingSignals(missing));
    }
    Ok(out)
}

fn bad_len(what: &'static str, j: usize, got: usize, expected: usize) -> Error {
    Error::invalid(what, format!("signal of subsystem {j} has length {got}, expected {expected}"))
}

/// All local estimates, computed independently and concatenated.
pub fn distributed_estimate<P: SignalProvider>(est: &DistributedEstimator, signals: &P) -> Result<Vec<f64>> {
    let parts: Vec<Vec<f64>> = (0..est.shape.subsystems)
        .into_par_iter()
        .map(|i| local_estimate(est, i, signals))
        .collect::<Result<_>>()?;
    Ok(parts.concat())
}

fn dense_spd_solve(m: DMatrix<f64>, rhs: &[f64], context: &str) -> Result<Vec<f64>> {
    let chol = m.cholesky().ok_or_else(|| Error::RankDeficient {
        context: format!("{context} is not positive definite"),
    })?;
    Ok(chol.solve(&DVector::from_column_slice(rhs)).as_slice().to_vec())
}

fn check_dense_size(dim: usize, what: &str) -> Result<()> {
    if dim > DENSE_RANK_LIMIT {
        return Err(Error::invalid(
            "dimension",
            format!("{what} has dimension {dim}; dense oracles are limited to {DENSE_RANK_LIMIT}"),
        ));
    }
    Ok(())
}

fn check_full_column_rank(m: &BlockSparseMatrix, what: &str) -> Result<()> {
    check_dense_size(m.ncols(), what)?;
    let rank = numerical_rank(&m.to_dense());
    if rank < m.ncols() {
        return Err(Error::RankDeficient {
            context: format!("{what} has rank {rank} < {} columns", m.ncols()),
        });
    }
    Ok(())
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `𝒪ᵀ(𝒴 − 𝒢𝒰)`, the right-hand side of the least-squares normal equations.
pub fn estimation_rhs(lifted: &LiftedModel, y: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    let resid = sub(y, &lifted.cal_g.matvec(u)?);
    if resid.len() != lifted.cal_o.nrows() {
        return Err(Error::DimensionMismatch {
            op: "estimation_rhs",
            left: format!("|Y|={}", y.len()),
            right: lifted.cal_o.shape_string(),
        });
    }
    lifted.cal_o.matvec_transpose(&resid)
}

/// `x̂ = 𝒲⁻¹𝒪ᵀ(𝒴 − 𝒢𝒰)` by dense Cholesky; `gramian.mu > 0` selects the
/// regularized Gramian.
pub fn centralized_estimate(lifted: &LiftedModel, gramian: &Gramian, y: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    check_dense_size(gramian.dimension(), "observability Gramian")?;
    if gramian.mu == 0.0 {
        check_full_column_rank(&lifted.cal_o, "lifted observability matrix")?;
    }
    let rhs = estimation_rhs(lifted, y, u)?;
    dense_spd_solve(gramian.matrix.to_dense(), &rhs, "observability Gramian")
}

/// Least-norm lifted input `𝒰 = ℛᵀ𝒬⁻¹(x_target − A^p x_start)` steering
/// `x_start` to `x_target` in `p` steps. With `inverse = None` the Gramian is
/// inverted densely.
pub fn least_norm_control(
    lifted: &LiftedModel,
    qgram: &Gramian,
    inverse: Option<&BlockSparseMatrix>,
    x_target: &[f64],
    x_start: &[f64],
) -> Result<Vec<f64>> {
    let d = sub(x_target, &lifted.a_pow_p.matvec(x_start)?);
    if x_target.len() != d.len() {
        return Err(Error::invalid("x_target", "length differs from the state dimension"));
    }
    let z = match inverse {
        Some(x) => x.matvec(&d)?,
        None => {
            check_dense_size(qgram.dimension(), "controllability Gramian")?;
            if qgram.mu == 0.0 {
                let rank = numerical_rank(&lifted.cal_r.to_dense());
                if rank < lifted.cal_r.nrows() {
                    return Err(Error::RankDeficient {
                        context: format!("lifted controllability matrix has rank {rank} < {} rows", lifted.cal_r.nrows()),
                    });
                }
            }
            dense_spd_solve(qgram.matrix.to_dense(), &d, "controllability Gramian")?
        }
    };
    lifted.cal_r.matvec_transpose(&z)
}

/// `x_target − A^p x_start − ℛ𝒰`.
pub fn control_residual(lifted: &LiftedModel, u: &[f64], x_target: &[f64], x_start: &[f64]) -> Result<Vec<f64>> {
    let reach = lifted.cal_r.matvec(u)?;
    let free = lifted.a_pow_p.matvec(x_start)?;
    Ok(x_target.iter().zip(free).zip(reach).map(|((t, f), r)| t - f - r).collect())
}

/// `𝒢ᵀ𝒢 (+ μI)`, the normal matrix of the impulse-response solve.
pub fn impulse_gramian(lifted: &LiftedModel, mu: f64) -> Result<Gramian> {
    let g = &lifted.cal_g;
    let mut matrix = spgemm(&transpose(g), g)?;
    if mu > 0.0 {
        matrix = matrix.add_identity(mu)?;
    }
    Gramian::from_matrix(matrix, lifted.p, mu, GramianKind::Impulse)
}

/// Lifted input `𝒰 = (𝒢ᵀ𝒢)⁻¹𝒢ᵀ𝒴` reproducing a desired lifted output. The
/// inner inverse is `xg` when given; otherwise a dense QR least-squares solve.
pub fn impulse_response_solve(lifted: &LiftedModel, y_desired: &[f64], xg: Option<&BlockSparseMatrix>) -> Result<Vec<f64>> {
    let g = &lifted.cal_g;
    if y_desired.len() != g.nrows() {
        return Err(Error::DimensionMismatch {
            op: "impulse_response_solve",
            left: format!("|Y|={}", y_desired.len()),
            right: g.shape_string(),
        });
    }
    let rhs = g.matvec_transpose(y_desired)?;
    match xg {
        Some(x) => x.matvec(&rhs),
        None => {
            // Householder QR on 𝒢 itself avoids squaring its condition number.
            check_full_column_rank(g, "lifted impulse response matrix")?;
            let qr = g.to_dense().qr();
            let qty = qr.q().transpose() * DVector::from_column_slice(y_desired);
            let u = qr.r().solve_upper_triangular(&qty).ok_or_else(|| Error::RankDeficient {
                context: "lifted impulse response matrix has a zero pivot".into(),
            })?;
            Ok(u.as_slice().to_vec())
        }
    }
}

/// `Ō = T(I + Ā + … + Ā^p)`.
pub fn predict_obs_pattern(a_bar: &PatternMatrix, p: usize) -> Result<PatternMatrix> {
    pattern_power_sum(a_bar, p)
}

/// `W̄ = T(Σ_{i=0}^{p} (Āᵀ)^i Ā^i)`.
pub fn predict_gramian_pattern(a_bar: &PatternMatrix, p: usize) -> Result<PatternMatrix> {
    if !a_bar.is_square() {
        return Err(Error::invalid("a_bar", "pattern must be square"));
    }
    let nb = a_bar.nrows();
    let a_t = a_bar.transpose();
    let mut power = PatternMatrix::identity(nb);
    let mut power_t = PatternMatrix::identity(nb);
    let mut acc = PatternMatrix::identity(nb);
    for _ in 0..p {
        power = pattern_product(&power, a_bar)?;
        power_t = pattern_product(&a_t, &power_t)?;
        acc = acc.union(&pattern_product(&power_t, &power)?)?;
    }
    Ok(acc)
}

/// `Ḡ = T(I + Ā + … + Ā^{p−1})`: the Markov parameter `CA^{l−1}B` reaches
/// `l − 1` hops, and `D` is block diagonal.
pub fn predict_impulse_pattern(a_bar: &PatternMatrix, p: usize) -> Result<PatternMatrix> {
    pattern_power_sum(a_bar, p.saturating_sub(1))
}

/// `(L̄, Q̄)` for a given inverse pattern `X̄`: `L̄ = X̄·Ōᵀ`, `Q̄ = L̄·Ḡ`.
pub fn estimator_patterns_for(x_bar: &PatternMatrix, a_bar: &PatternMatrix, p: usize) -> Result<(PatternMatrix, PatternMatrix)> {
    let o_bar = predict_obs_pattern(a_bar, p)?;
    let l_bar = pattern_product(x_bar, &o_bar.transpose())?;
    let q_bar = pattern_product(&l_bar, &predict_impulse_pattern(a_bar, p)?)?;
    Ok((l_bar, q_bar))
}

/// `(L̄, Q̄)` with `X̄ = T(I + W̄ + … + W̄^s)`.
pub fn predict_estimator_patterns(a_bar: &PatternMatrix, p: usize, s: usize) -> Result<(PatternMatrix, PatternMatrix)> {
    let x_bar = pattern_power_sum(&predict_gramian_pattern(a_bar, p)?, s)?;
    estimator_patterns_for(&x_bar, a_bar, p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegreeStats {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
}

impl DegreeStats {
    fn of(counts: &[usize]) -> Self {
        DegreeStats {
            min: counts.iter().copied().min().unwrap_or(0),
            max: counts.iter().copied().max().unwrap_or(0),
            mean: if counts.is_empty() {
                0.0
            } else {
                counts.iter().sum::<usize>() as f64 / counts.len() as f64
            },
        }
    }
}

/// Links `j → i` for every stored `L_ij` / `Q_ij`. The in-degree of `i` is
/// the number of subsystems it receives from.
#[derive(Debug, Clone, PartialEq)]
pub struct CommunicationGraph {
    pub l_bar: PatternMatrix,
    pub q_bar: PatternMatrix,
    pub l_in_degree: DegreeStats,
    pub q_in_degree: DegreeStats,
}

impl CommunicationGraph {
    pub fn new(l_bar: PatternMatrix, q_bar: PatternMatrix) -> Self {
        CommunicationGraph {
            l_in_degree: DegreeStats::of(&l_bar.row_counts()),
            q_in_degree: DegreeStats::of(&q_bar.row_counts()),
            l_bar,
            q_bar,
        }
    }

    /// Edge list `i,j,role`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Parse(format!("csv: {e}"));
        w.write_record(["i", "j", "role"]).map_err(err)?;
        for (role, pat) in [("L", &self.l_bar), ("Q", &self.q_bar)] {
            for (i, j) in pat.entries() {
                w.write_record([i.to_string(), j.to_string(), role.to_string()]).map_err(err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statespace::{lift, obs_gramian, InterconnectedSystem};

    fn chain_pattern(n: usize) -> PatternMatrix {
        let e = (0..n).flat_map(|i| {
            let mut v = vec![(i, i)];
            if i + 1 < n {
                v.push((i, i + 1));
                v.push((i + 1, i));
            }
            v
        });
        PatternMatrix::from_entries(n, n, e).unwrap()
    }

    #[test]
    fn empty_graph_gives_diagonal_patterns() {
        let (l, q) = predict_estimator_patterns(&PatternMatrix::empty(4), 2, 0).unwrap();
        assert_eq!(l, PatternMatrix::identity(4));
        assert_eq!(q, PatternMatrix::identity(4));
    }

    #[test]
    fn chain_gramian_pattern_reaches_two_hops() {
        let p = chain_pattern(5);
        // (Āᵀ)Ā on a chain with self loops reaches two hops.
        let w = predict_gramian_pattern(&PatternMatrix::from_entries(5, 5, p.entries().filter(|(i, j)| i != j)).unwrap(), 1).unwrap();
        assert_eq!(w.bandwidth(), 2);
        assert!(w.is_symmetric());
        assert_eq!(predict_gramian_pattern(&PatternMatrix::identity(3), 3).unwrap(), PatternMatrix::identity(3));
    }

    #[test]
    fn missing_neighbor_is_reported() {
        let sys = InterconnectedSystem {
            subsystems: 2,
            n: 1,
            m: 1,
            r: 1,
            edges: vec![crate::statespace::Edge { i: 0, j: 1, a: vec![0.3] }],
            diag: vec![vec![0.5], vec![0.4]],
            b: vec![vec![1.0], vec![1.0]],
            c: vec![vec![1.0], vec![1.0]],
            d: vec![vec![0.0], vec![0.0]],
            meta: serde_json::Value::Null,
        };
        let lifted = lift(&sys, 2).unwrap();
        let w = obs_gramian(&lifted, 0.0).unwrap();
        let x = BlockSparseMatrix::from_dense(
            &w.matrix.to_dense().try_inverse().unwrap(),
            vec![1, 1],
            vec![1, 1],
        )
        .unwrap();
        let est = build_estimator(&x, &lifted).unwrap();
        let mut sig = LocalSignals::from_lifted(&est.shape, &[1.0; 6], &[0.0; 6]).unwrap();
        sig.outputs.remove(&1);
        match local_estimate(&est, 0, &sig) {
            Err(Error::MissingSignals(v)) => assert_eq!(v, vec![1]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
