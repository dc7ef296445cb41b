//! Sparse and dense kernels shared by the rest of the crate.

pub mod cg;
pub mod cholesky;
pub mod dense;
pub mod lanczos;
pub mod mm;
pub mod sparse;

use serde::{Deserialize, Serialize};

pub use cg::{cg_solve, CgStats, Ic0, Preconditioner};
pub use cholesky::SparseCholesky;
pub use dense::{dense_sym_geig, GenEigen};
pub use lanczos::lanczos_smallest_geig;
pub use sparse::{dot, norm2, CsrMatrix, LinearOperator, LowRankUpdated};

/// Numerical tolerances used across the pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Relative residual for conjugate gradients.
    pub cg: f64,
    pub cg_max_iter: usize,
    /// Relative eigen-residual.
    pub eigen: f64,
    /// Coarse asymmetry accepted before symmetrizing, relative to the rounding
    /// scale `|ψ_p|ᵀ|A||ψ_q|` of each entry.
    pub symmetry: f64,
    /// Galerkin residual relative to the coarse load.
    pub galerkin: f64,
    /// Use IC(0) instead of Jacobi for CG.
    pub ic0: bool,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            cg: 1e-10,
            cg_max_iter: 20_000,
            eigen: 1e-9,
            symmetry: 1e-12,
            galerkin: 1e-8,
            ic0: false,
        }
    }
}

/// Subgraphs up to this size use the dense eigensolver.
pub const DENSE_EIGEN_LIMIT: usize = 600;
/// Patches up to this size are factored directly; larger ones use CG.
pub const DIRECT_PATCH_LIMIT: usize = 20_000;
/// Coarse systems up to this size are solved by dense Cholesky.
pub const DENSE_COARSE_LIMIT: usize = 10_000;
