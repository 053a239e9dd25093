use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::spectral::{SingularInterval, DEFAULT_SEED};
use crate::sparse::{BlockSparseMatrix, PatternMatrix};

/// Settings for the (sparsified) Newton-Schulz iteration.
///
/// Exactly one mode must be chosen: `dense = true` (no sparsification), or
/// at least one of `pattern` (operator H₁) and `phi` (operator H₂).
#[derive(Debug, Clone)]
pub struct NewtonSchulzConfig {
    pub pattern: Option<PatternMatrix>,
    pub phi: Option<f64>,
    pub dense: bool,
    /// Target residual `‖I − W·X_k‖₂`.
    pub tol: f64,
    pub max_iter: usize,
    pub divergence_factor: f64,
    /// Relative tolerance of the Lanczos residual estimate; defaults to
    /// `1e-12` in dense mode and `1e-8` otherwise.
    pub residual_tol: Option<f64>,
    /// Lanczos step cap for the residual estimate; defaults to `600` in
    /// dense mode and `120` otherwise.
    pub residual_max_iter: Option<usize>,
    /// Stop once the residual fails to decrease after it has dropped below
    /// `0.5` (the sparsification floor has been reached).
    pub stop_on_stall: bool,
    /// Use these extreme singular values instead of estimating them.
    pub interval: Option<SingularInterval>,
    pub seed: u64,
}

impl NewtonSchulzConfig {
    pub fn dense() -> Self {
        NewtonSchulzConfig {
            pattern: None,
            phi: None,
            dense: true,
            tol: 1e-10,
            max_iter: 60,
            divergence_factor: 1.5,
            residual_tol: None,
            residual_max_iter: None,
            stop_on_stall: false,
            interval: None,
            seed: DEFAULT_SEED,
        }
    }

    pub fn sparse(pattern: Option<PatternMatrix>, phi: Option<f64>) -> Self {
        NewtonSchulzConfig {
            pattern,
            phi,
            dense: false,
            stop_on_stall: true,
            ..Self::dense()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol", "must be positive"));
        }
        if self.max_iter < 1 {
            return Err(Error::invalid("max_iter", "must be at least 1"));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(Error::invalid("divergence_factor", "must exceed 1"));
        }
        if let Some(phi) = self.phi {
            if !(phi >= 0.0) {
                return Err(Error::invalid("phi", format!("dropping parameter must be >= 0, got {phi}")));
            }
        }
        let sparse = self.pattern.is_some() || self.phi.is_some();
        if self.dense == sparse {
            return Err(Error::invalid(
                "mode",
                "choose dense mode or at least one sparsifier (pattern, phi), not both",
            ));
        }
        Ok(())
    }

    pub(crate) fn residual_max_iter(&self) -> usize {
        self.residual_max_iter.unwrap_or(if self.dense { 600 } else { 120 })
    }

    pub(crate) fn residual_tol(&self) -> f64 {
        self.residual_tol.unwrap_or(if self.dense { 1e-12 } else { 1e-8 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaiStatus {
    Converged,
    MaxIter,
    Diverged,
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpaiMethod {
    NewtonSchulz,
    Frobenius,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// `‖I − W·X_k‖₂` for the (sparsified) iterate.
    pub epsilon: f64,
    /// `((κ²−1)/(κ²+1))^{2^k}`.
    pub bound: f64,
    pub nnz_blocks: usize,
    /// Wall time of the iteration, including the residual estimate.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaiReport {
    pub method: SpaiMethod,
    pub status: SpaiStatus,
    pub iterations: Vec<IterationRecord>,
    /// Iteration whose iterate was returned.
    pub selected_iteration: Option<usize>,
    /// Condition number driving the iteration (of the regularized matrix
    /// when regularization was applied).
    pub kappa_used: Option<f64>,
    /// Condition number before regularization, if any.
    pub kappa_original: Option<f64>,
    pub mu: f64,
    pub interval: Option<SingularInterval>,
    /// Frobenius method: `‖e_j − W x_j‖₂` per scalar column.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub column_residuals: Vec<f64>,
    /// Frobenius method: scalar columns whose pattern was empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub empty_columns: Vec<usize>,
    /// Frobenius method: `‖I − W X‖_F`.
    pub objective: Option<f64>,
    pub total_seconds: f64,
}

impl SpaiReport {
    pub(crate) fn new(method: SpaiMethod) -> Self {
        SpaiReport {
            method,
            status: SpaiStatus::MaxIter,
            iterations: Vec::new(),
            selected_iteration: None,
            kappa_used: None,
            kappa_original: None,
            mu: 0.0,
            interval: None,
            column_residuals: Vec::new(),
            empty_columns: Vec::new(),
            objective: None,
            total_seconds: 0.0,
        }
    }

    pub fn final_residual(&self) -> Option<f64> {
        self.iterations.last().map(|r| r.epsilon)
    }

    /// Residual of the returned iterate.
    pub fn selected_residual(&self) -> Option<f64> {
        let k = self.selected_iteration?;
        self.iterations.iter().find(|r| r.k == k).map(|r| r.epsilon)
    }

    /// Per-iteration table: `k,epsilon,bound,nnz_blocks,seconds`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for rec in &self.iterations {
            w.serialize(rec).map_err(csv_err)?;
        }
        if self.iterations.is_empty() {
            w.write_record(["k", "epsilon", "bound", "nnz_blocks", "seconds"]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-column table for the Frobenius method: `column,residual,empty`.
    pub fn write_column_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["column", "residual", "empty"]).map_err(csv_err)?;
        for (j, r) in self.column_residuals.iter().enumerate() {
            let empty = self.empty_columns.binary_search(&j).is_ok();
            w.write_record([j.to_string(), format!("{r:e}"), empty.to_string()]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}

/// Approximate inverse together with the record of how it was obtained.
#[derive(Debug, Clone)]
pub struct ApproxInverse {
    pub x: BlockSparseMatrix,
    pub report: SpaiReport,
    pub method: SpaiMethod,
}
