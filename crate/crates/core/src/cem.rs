//! Constraint energy minimizing basis functions and the coarse Galerkin system.
//!
//! For a patch `P = N_i^l` the basis `ψ_{j,l}^i` solves
//! `(A_P + G Gᵀ) ψ = S φ_j^i` where `A_P` is `L + M` restricted to `P` (zero
//! extension outside) and `G` holds the columns `S φ_k` of every subgraph
//! inside `P`. Since the right-hand side is itself a column of `G`, all
//! functions of subgraph `i` come from one factorization:
//! `(A + G Gᵀ)⁻¹ G = Z (I + Gᵀ Z)⁻¹` with `Z = A⁻¹ G`.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{
    cg_solve, mm, norm2, CsrMatrix, LowRankUpdated, Preconditioner, SparseCholesky, Tolerances,
    DENSE_COARSE_LIMIT, DIRECT_PATCH_LIMIT,
};
use crate::network::SpatialNetwork;
use crate::partition::Partition;
use crate::spectral::AuxSpace;

/// Options for the patch solves.
#[derive(Clone, Debug)]
pub struct PatchOptions {
    pub tolerances: Tolerances,
    /// Patches with more unknowns use CG instead of a direct factorization.
    pub direct_limit: usize,
}

impl Default for PatchOptions {
    fn default() -> Self {
        PatchOptions {
            tolerances: Tolerances::default(),
            direct_limit: DIRECT_PATCH_LIMIT,
        }
    }
}

/// One basis function stored on its patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisColumn {
    pub subgraph: usize,
    pub index: usize,
    /// Sorted patch nodes; the function vanishes elsewhere.
    pub nodes: Vec<usize>,
    pub values: Vec<f64>,
}

impl BasisColumn {
    pub fn to_dense(&self, node_count: usize) -> Vec<f64> {
        let mut v = vec![0.0; node_count];
        for (&x, &p) in self.nodes.iter().zip(&self.values) {
            v[x] = p;
        }
        v
    }

    pub fn dot_dense(&self, v: &[f64]) -> f64 {
        self.nodes
            .iter()
            .zip(&self.values)
            .map(|(&x, p)| p * v[x])
            .sum()
    }
}

/// Patch nodes and the subgraphs inside it; `None` layers means the whole network.
fn patch_of(part: &Partition, i: usize, layers: Option<usize>) -> Result<(Vec<usize>, Vec<usize>)> {
    if i >= part.count() {
        return Err(Error::InvalidArgument(format!(
            "subgraph id {i} out of range"
        )));
    }
    let ids = match layers {
        Some(l) => part.closure(i, l)?,
        None => (0..part.count()).collect(),
    };
    Ok((part.union_nodes(&ids), ids))
}

fn check_inputs(net: &SpatialNetwork, part: &Partition, aux: &AuxSpace) -> Result<()> {
    if !net.dirichlet().is_empty() {
        return Err(Error::InvalidArgument(
            "basis construction expects a network with Dirichlet nodes eliminated".into(),
        ));
    }
    check_len(net.node_count(), part.assignment().len())?;
    check_len(net.node_count(), aux.node_count)?;
    if aux.subgraph_count() != part.count() {
        return Err(Error::DimensionMismatch {
            expected: part.count(),
            actual: aux.subgraph_count(),
        });
    }
    Ok(())
}

/// All basis functions of subgraph `i` on `N_i^l` (`layers = None` for the global basis).
pub fn build_subgraph_basis(
    operator: &CsrMatrix,
    part: &Partition,
    aux: &AuxSpace,
    i: usize,
    layers: Option<usize>,
    opts: &PatchOptions,
) -> Result<Vec<BasisColumn>> {
    let (nodes, ids) = patch_of(part, i, layers)?;
    let a = operator.principal_submatrix(&nodes);
    let (g, aux_ids) = aux.weighted_columns(&nodes, &ids);
    let own: Vec<usize> = (0..aux.count_in(i))
        .map(|j| {
            let k = aux.index(i, j);
            aux_ids
                .iter()
                .position(|&c| c == k)
                .expect("own subgraph in patch")
        })
        .collect();

    let values: Vec<Vec<f64>> = if nodes.len() <= opts.direct_limit {
        woodbury_solve(&a, &g, &own).map_err(|e| match e {
            Error::NotSpd(m) => Error::NotSpd(format!("patch of subgraph {i}: {m}")),
            other => other,
        })?
    } else {
        let op = LowRankUpdated {
            base: &a,
            factors: &g,
        };
        let mut diag = a.diagonal();
        for (r, d) in diag.iter_mut().enumerate() {
            *d += g.row(r).iter().map(|v| v * v).sum::<f64>();
        }
        let precond = Preconditioner::jacobi(&diag)?;
        let tol = &opts.tolerances;
        own.iter()
            .map(|&c| {
                let rhs: Vec<f64> = g.column(c).iter().copied().collect();
                cg_solve(&op, &rhs, tol.cg, tol.cg_max_iter, &precond).map(|(x, _)| x)
            })
            .collect::<Result<_>>()?
    };
    Ok(values
        .into_iter()
        .enumerate()
        .map(|(j, values)| BasisColumn {
            subgraph: i,
            index: j,
            nodes: nodes.clone(),
            values,
        })
        .collect())
}

/// Solves `(A + G Gᵀ) X = G[:, own]` with one sparse factorization of `A`.
fn woodbury_solve(a: &CsrMatrix, g: &DMatrix<f64>, own: &[usize]) -> Result<Vec<Vec<f64>>> {
    let chol = SparseCholesky::factor(a)?;
    let n = a.dim();
    let k = g.ncols();
    let mut z = DMatrix::zeros(n, k);
    for c in 0..k {
        let col: Vec<f64> = g.column(c).iter().copied().collect();
        let sol = chol.solve(&col)?;
        z.set_column(c, &DVector::from_vec(sol));
    }
    let mut cap = g.transpose() * &z;
    for d in 0..k {
        cap[(d, d)] += 1.0;
    }
    // symmetric by construction up to rounding
    let cap = (&cap + cap.transpose()) * 0.5;
    let cap =
        Cholesky::new(cap).ok_or_else(|| Error::NotSpd("capacitance matrix I + GᵀA⁻¹G".into()))?;
    let mut rhs = DMatrix::zeros(k, own.len());
    for (col, &c) in own.iter().enumerate() {
        rhs[(c, col)] = 1.0;
    }
    let coef = cap.solve(&rhs);
    let x = z * coef;
    Ok((0..own.len())
        .map(|c| x.column(c).iter().copied().collect())
        .collect())
}

/// `ψ_{j,l}^i` on `N_i^l`.
pub fn build_local_basis(
    net: &SpatialNetwork,
    part: &Partition,
    aux: &AuxSpace,
    i: usize,
    j: usize,
    layers: usize,
) -> Result<BasisColumn> {
    check_inputs(net, part, aux)?;
    if i < aux.subgraph_count() && j >= aux.count_in(i) {
        return Err(Error::InvalidArgument(format!(
            "subgraph {i} has no eigenvector {j}"
        )));
    }
    let op = net.operator_matrix();
    let mut cols = build_subgraph_basis(&op, part, aux, i, Some(layers), &PatchOptions::default())?;
    Ok(cols.swap_remove(j))
}

/// Global `ψ_j^i` over all nodes.
pub fn build_global_basis(
    net: &SpatialNetwork,
    part: &Partition,
    aux: &AuxSpace,
    i: usize,
    j: usize,
) -> Result<Vec<f64>> {
    check_inputs(net, part, aux)?;
    if i < aux.subgraph_count() && j >= aux.count_in(i) {
        return Err(Error::InvalidArgument(format!(
            "subgraph {i} has no eigenvector {j}"
        )));
    }
    let op = net.operator_matrix();
    let mut cols = build_subgraph_basis(&op, part, aux, i, None, &PatchOptions::default())?;
    Ok(cols.swap_remove(j).values)
}

/// The multiscale space `V_ms^l` (or `V_ms^glo` when `layers` is `None`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CemBasis {
    pub node_count: usize,
    pub layers: Option<usize>,
    /// Ordered by `(subgraph, index)`.
    pub columns: Vec<BasisColumn>,
}

impl CemBasis {
    /// Builds every column, subgraphs in parallel on the current rayon pool.
    pub fn build(
        net: &SpatialNetwork,
        part: &Partition,
        aux: &AuxSpace,
        layers: Option<usize>,
        opts: &PatchOptions,
    ) -> Result<Self> {
        check_inputs(net, part, aux)?;
        let op = net.operator_matrix();
        let per: Vec<Result<Vec<BasisColumn>>> = (0..part.count())
            .into_par_iter()
            .map(|i| build_subgraph_basis(&op, part, aux, i, layers, opts))
            .collect();
        let mut columns = Vec::with_capacity(aux.dimension());
        for cols in per {
            columns.extend(cols?);
        }
        Ok(CemBasis {
            node_count: net.node_count(),
            layers,
            columns,
        })
    }

    pub fn is_global(&self) -> bool {
        self.layers.is_none()
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    /// `Ψ c`.
    pub fn prolong(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), coeffs.len())?;
        let mut u = vec![0.0; self.node_count];
        for (col, &c) in self.columns.iter().zip(coeffs) {
            for (&x, &p) in col.nodes.iter().zip(&col.values) {
                u[x] += c * p;
            }
        }
        Ok(u)
    }

    /// `Ψᵀ v`.
    pub fn restrict(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.node_count, v.len())?;
        Ok(self.columns.iter().map(|c| c.dot_dense(v)).collect())
    }

    /// Writes one `node value` text file per column plus an index.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut index = Vec::new();
        for (k, col) in self.columns.iter().enumerate() {
            let name = format!("psi_{}_{}.txt", col.subgraph, col.index);
            let mut text = String::with_capacity(col.nodes.len() * 28);
            for (&x, &v) in col.nodes.iter().zip(&col.values) {
                text.push_str(&format!("{x} {}\n", mm::format_real(v)));
            }
            let path = dir.join(&name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            index.push(serde_json::json!({"column": k, "subgraph": col.subgraph, "index": col.index, "file": name, "support": col.nodes.len()}));
        }
        let path = dir.join("basis.json");
        let meta = serde_json::json!({"node_count": self.node_count, "layers": self.layers, "columns": index});
        std::fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
    }
}

/// `A_c = Ψᵀ (L + M) Ψ` and `b_c = Ψᵀ f`.
#[derive(Clone, Debug)]
pub struct CoarseSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: Vec<f64>,
    /// `max |A_pq - A_qp| / sqrt(q_p q_q)` before symmetrizing, where
    /// `q_p = |ψ_p|ᵀ|A||ψ_p|` bounds the rounding scale of each entry.
    pub asymmetry: f64,
    /// `(subgraph, index)` of each row.
    pub labels: Vec<(usize, usize)>,
}

pub fn assemble_coarse(net: &SpatialNetwork, basis: &CemBasis, f: &[f64]) -> Result<CoarseSystem> {
    check_len(net.node_count(), basis.node_count)?;
    check_len(net.node_count(), f.len())?;
    let op = net.operator_matrix();
    let n = net.node_count();
    let m = basis.dim();

    // columns whose support touches each node, to visit only overlapping pairs
    let mut cover: Vec<Vec<u32>> = vec![Vec::new(); n];
    for (q, col) in basis.columns.iter().enumerate() {
        for &x in &col.nodes {
            cover[x].push(q as u32);
        }
    }

    let rows: Vec<(Vec<f64>, f64)> = (0..m)
        .into_par_iter()
        .map(|p| {
            let col = &basis.columns[p];
            let mut w = vec![0.0; n];
            let mut w_abs = vec![0.0; n];
            let mut touched = Vec::new();
            let mut seen = vec![false; n];
            for (&x, &v) in col.nodes.iter().zip(&col.values) {
                let (cols, vals) = op.row(x);
                for (&y, &a) in cols.iter().zip(vals) {
                    w[y] += a * v;
                    w_abs[y] += (a * v).abs();
                    if !seen[y] {
                        seen[y] = true;
                        touched.push(y);
                    }
                }
            }
            let mut hit = vec![false; m];
            let mut row = vec![0.0; m];
            for &y in &touched {
                for &q in &cover[y] {
                    hit[q as usize] = true;
                }
            }
            for (q, h) in hit.iter().enumerate() {
                if *h {
                    row[q] = basis.columns[q].dot_dense(&w);
                }
            }
            let scale: f64 = col
                .nodes
                .iter()
                .zip(&col.values)
                .map(|(&x, v)| v.abs() * w_abs[x])
                .sum();
            (row, scale)
        })
        .collect();

    let mut matrix = DMatrix::zeros(m, m);
    for (p, (row, _)) in rows.iter().enumerate() {
        for (q, &v) in row.iter().enumerate() {
            matrix[(p, q)] = v;
        }
    }
    // entries are sums of large cancelling terms at high contrast, so their
    // rounding error scales with |ψ_p|ᵀ|A||ψ_q|, not with the entry itself
    let mut asymmetry = 0.0f64;
    for p in 0..m {
        for q in p + 1..m {
            let d = (matrix[(p, q)] - matrix[(q, p)]).abs();
            let scale = (rows[p].1 * rows[q].1).sqrt();
            if d > 0.0 {
                asymmetry = asymmetry.max(d / scale);
            }
            let avg = 0.5 * (matrix[(p, q)] + matrix[(q, p)]);
            matrix[(p, q)] = avg;
            matrix[(q, p)] = avg;
        }
    }
    Ok(CoarseSystem {
        matrix,
        rhs: basis.restrict(f)?,
        asymmetry,
        labels: basis
            .columns
            .iter()
            .map(|c| (c.subgraph, c.index))
            .collect(),
    })
}

impl CoarseSystem {
    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        mm::write_dense_symmetric(path, &self.matrix)
    }
}

/// Result of the coarse solve.
#[derive(Clone, Debug)]
pub struct MultiscaleSolution {
    pub u: Vec<f64>,
    pub coeffs: Vec<f64>,
    /// `max |Ψᵀ (f - (L + M) u_ms)| / ‖b_c‖_max`.
    pub galerkin_residual: f64,
}

/// Index of the first pivot where a dense Cholesky breaks down.
fn failing_pivot(a: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    let scale = (0..n).map(|k| a[(k, k)].abs()).fold(0.0, f64::max);
    for k in 0..n {
        let d = a[(k, k)] - (0..k).map(|t| l[(k, t)] * l[(k, t)]).sum::<f64>();
        if !(d > 1e-14 * scale) {
            return k;
        }
        let d = d.sqrt();
        l[(k, k)] = d;
        for r in k + 1..n {
            l[(r, k)] = (a[(r, k)] - (0..k).map(|t| l[(r, t)] * l[(k, t)]).sum::<f64>()) / d;
        }
    }
    n.saturating_sub(1)
}

/// Solves `A_c c = b_c` and prolongs `u_ms = Ψ c`.
pub fn solve_multiscale(
    net: &SpatialNetwork,
    coarse: &CoarseSystem,
    basis: &CemBasis,
    f: &[f64],
    tol: &Tolerances,
) -> Result<MultiscaleSolution> {
    check_len(basis.dim(), coarse.dim())?;
    let m = coarse.dim();
    let coeffs: Vec<f64> = if m == 0 {
        Vec::new()
    } else if m <= DENSE_COARSE_LIMIT {
        match Cholesky::new(coarse.matrix.clone()) {
            Some(ch) => ch
                .solve(&DVector::from_column_slice(&coarse.rhs))
                .iter()
                .copied()
                .collect(),
            None => {
                let k = failing_pivot(&coarse.matrix);
                let (subgraph, index) = coarse.labels[k];
                return Err(Error::RankDeficient { subgraph, index });
            }
        }
    } else {
        let sparse = CsrMatrix::from_dense(&coarse.matrix);
        let pre = Preconditioner::jacobi(&sparse.diagonal())?;
        cg_solve(&sparse, &coarse.rhs, tol.cg, tol.cg_max_iter, &pre)?.0
    };
    let u = basis.prolong(&coeffs)?;
    let au = net.apply_operator(&u)?;
    let r: Vec<f64> = f.iter().zip(&au).map(|(a, b)| a - b).collect();
    let res = basis.restrict(&r)?;
    let b_max = coarse.rhs.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let r_max = res.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let galerkin_residual = if b_max > 0.0 { r_max / b_max } else { r_max };
    if galerkin_residual > tol.galerkin {
        return Err(Error::NotConverged {
            iterations: 0,
            residual: galerkin_residual,
            history_tail: vec![norm2(&res)],
        });
    }
    Ok(MultiscaleSolution {
        u,
        coeffs,
        galerkin_residual,
    })
}
