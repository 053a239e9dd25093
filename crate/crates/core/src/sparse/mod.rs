//! Sparse storage, kernels and spectral estimates.

pub mod block;
pub mod mm;
pub mod pattern;
pub mod spectral;

pub use block::{binarize, drop_h2, mask_h1, sp_add, spgemm, spgemm_masked, transpose, BlockSparseMatrix};
pub use pattern::{pattern_power_sum, pattern_product, PatternMatrix};
pub use spectral::{extreme_singular_values, spectral_norm, SingularInterval, SpectralOptions};
