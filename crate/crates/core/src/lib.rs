#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Multiscale solver for high-contrast spatial networks `(L + M) u = f`.

pub mod bundle;
pub mod cem;
pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod network;
pub mod partition;
pub mod pipeline;
pub mod problem;
pub mod spectral;
pub mod study;

pub use cem::{
    assemble_coarse, solve_multiscale, CemBasis, CoarseSystem, MultiscaleSolution, PatchOptions,
};
pub use error::{Error, Result};
pub use network::{Edge, NodeSubset, ReducedNetwork, SpatialNetwork, WellPosedness};
pub use partition::{load_partition, partition_blocks, partition_grow, GrowOptions, Partition};
pub use pipeline::{fine_solve, run_pipeline, MethodConfig, PipelineOutput, Timings};
pub use spectral::{AuxSpace, CpoPolicy};
