//! Tensor-train numerics and black-box discrete optimization.
//!
//! The crate is organized bottom-up:
//!
//! - [`linalg`], [`tensor`], [`rng`]: dense storage, QR/SVD and the pinned PRNG.
//! - [`maxvol`]: quasi-maximum-volume row selection.
//! - [`tt`]: tensor-train construction (TT-SVD), evaluation, rounding and norms.
//! - [`tetraopt`]: the TT-cross optimizer built on maxvol index selection.
//! - [`harness`]: search spaces, objectives, baselines and the experiment runner.
//! - [`container`]: the `TAML` binary container shared by models, datasets and
//!   tabular benchmarks.

pub mod container;
pub mod harness;
pub mod linalg;
pub mod maxvol;
pub mod rng;
pub mod tensor;
pub mod tetraopt;
pub mod tt;

pub use linalg::Matrix;
pub use rng::Rng;
pub use tensor::DenseTensor;

use thiserror::Error;

/// A multi-index into a discrete grid.
pub type MultiIndex = Vec<usize>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("matrix is singular")]
    Singular,
    #[error("rank-deficient input: {0}")]
    RankDeficient(String),
    #[error("dense size {size} exceeds cap {cap}")]
    CapExceeded { size: usize, cap: usize },
}
