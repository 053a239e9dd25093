//! Distributed state estimation for interconnected linear systems through
//! sparse approximate inverses of Gramians.

pub mod error;
pub mod sparse;

pub use error::{Error, Result};
pub mod statespace;
pub mod spai;
pub mod models;
pub mod estimator;
