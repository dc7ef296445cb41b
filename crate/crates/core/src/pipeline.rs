//! End-to-end solve: auxiliary space, CEM basis, coarse Galerkin system.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cem::{
    assemble_coarse, solve_multiscale, CemBasis, CoarseSystem, MultiscaleSolution, PatchOptions,
};
use crate::error::{check_len, Result};
use crate::linalg::{
    cg_solve, Ic0, Preconditioner, SparseCholesky, Tolerances, DIRECT_PATCH_LIMIT,
};
use crate::network::SpatialNetwork;
use crate::partition::Partition;
use crate::spectral::{AuxSpace, CpoPolicy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodConfig {
    /// Oversampling layers; `None` builds the global basis.
    pub layers: Option<usize>,
    pub nov: usize,
    pub c_po: CpoPolicy,
    pub tolerances: Tolerances,
    pub direct_limit: usize,
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig {
            layers: Some(3),
            nov: 3,
            c_po: CpoPolicy::default(),
            tolerances: Tolerances::default(),
            direct_limit: DIRECT_PATCH_LIMIT,
        }
    }
}

/// Wall-clock seconds of the two offline stages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    /// Local eigenproblems.
    pub t_aux: f64,
    /// Basis construction, coarse assembly and coarse solve.
    pub t_cem: f64,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub aux: AuxSpace,
    pub basis: CemBasis,
    pub coarse: CoarseSystem,
    pub solution: MultiscaleSolution,
    pub timings: Timings,
}

/// Runs the method on the current rayon pool.
pub fn run_pipeline(
    net: &SpatialNetwork,
    part: &Partition,
    f: &[f64],
    cfg: &MethodConfig,
) -> Result<PipelineOutput> {
    check_len(net.node_count(), f.len())?;
    let start = Instant::now();
    let aux = AuxSpace::build(net, part, cfg.nov, &cfg.c_po, cfg.tolerances.eigen)?;
    let t_aux = start.elapsed().as_secs_f64();
    let (basis, coarse, solution, t_cem) = solve_with_aux(net, part, &aux, f, cfg)?;
    Ok(PipelineOutput {
        aux,
        basis,
        coarse,
        solution,
        timings: Timings { t_aux, t_cem },
    })
}

/// The stages after the auxiliary space; returns the elapsed seconds last.
pub fn solve_with_aux(
    net: &SpatialNetwork,
    part: &Partition,
    aux: &AuxSpace,
    f: &[f64],
    cfg: &MethodConfig,
) -> Result<(CemBasis, CoarseSystem, MultiscaleSolution, f64)> {
    let start = Instant::now();
    let opts = PatchOptions {
        tolerances: cfg.tolerances.clone(),
        direct_limit: cfg.direct_limit,
    };
    let basis = CemBasis::build(net, part, aux, cfg.layers, &opts)?;
    let coarse = assemble_coarse(net, &basis, f)?;
    if coarse.asymmetry > cfg.tolerances.symmetry {
        log::warn!("coarse matrix asymmetry {:.3e} before symmetrizing", coarse.asymmetry);
    }
    let solution = solve_multiscale(net, &coarse, &basis, f, &cfg.tolerances)?;
    Ok((basis, coarse, solution, start.elapsed().as_secs_f64()))
}

/// Reference solution of `(L + M) u = f` on the free nodes: sparse Cholesky,
/// or preconditioned CG beyond the direct size limit.
pub fn fine_solve(net: &SpatialNetwork, f: &[f64], tol: &Tolerances) -> Result<Vec<f64>> {
    check_len(net.node_count(), f.len())?;
    if !net.dirichlet().is_empty() {
        let reduced = net.reduce_dirichlet()?;
        let u = fine_solve(&reduced.network, &reduced.restrict(f)?, tol)?;
        return reduced.expand(&u);
    }
    let a = net.operator_matrix();
    if a.dim() <= DIRECT_PATCH_LIMIT {
        return SparseCholesky::factor(&a)?.solve(f);
    }
    let pre = if tol.ic0 {
        Preconditioner::Ic0(Ic0::new(&a)?)
    } else {
        Preconditioner::jacobi(&a.diagonal())?
    };
    Ok(cg_solve(&a, f, tol.cg, tol.cg_max_iter, &pre)?.0)
}
