//! Sparse approximate inverses of symmetric positive definite Gramians.

mod frobenius;
mod newton_schulz;
mod pattern;
mod report;

pub use frobenius::frobenius_spai;
pub use newton_schulz::{definite_interval, error_bound, initial_guess, inverse_residual, newton_schulz, regularize_and_invert};
pub use pattern::{banded_pattern, predict_pattern_neumann};
pub use report::{ApproxInverse, IterationRecord, NewtonSchulzConfig, SpaiMethod, SpaiReport, SpaiStatus};
