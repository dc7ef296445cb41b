//! Auxiliary space: per-subgraph generalized eigenproblems `a_i φ = λ s_i φ`,
//! Poincaré constants, and the `s`-orthogonal projection onto the span of
//! the lowest eigenvectors.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{
    dense_sym_geig, lanczos_smallest_geig, CsrMatrix, GenEigen, DENSE_EIGEN_LIMIT,
};
use crate::network::SpatialNetwork;
use crate::partition::Partition;

/// How the per-subgraph Poincaré constant `C_po,i` scaling the `s` form is chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CpoPolicy {
    /// Estimated per subgraph; `fallback` is used for degenerate subgraphs.
    Computed { fallback: f64 },
    /// One value for every subgraph.
    Uniform { value: f64 },
    /// One value per subgraph, e.g. read from a file.
    PerSubgraph { values: Vec<f64> },
}

impl Default for CpoPolicy {
    fn default() -> Self {
        CpoPolicy::Computed { fallback: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoincareEstimate {
    pub value: f64,
    /// No usable eigenvalue; `value` is the fallback.
    pub degenerate: bool,
}

/// Unscaled local energy matrix `a_i`: internal edges of `N_i` plus nodal masses,
/// indexed by position in `part.nodes(i)`.
fn local_energy_matrix(net: &SpatialNetwork, part: &Partition, i: usize) -> CsrMatrix {
    let nodes = part.nodes(i);
    let mut t = Vec::new();
    for (k, &x) in nodes.iter().enumerate() {
        t.push((k, k, net.masses()[x]));
        for &(y, w) in net.neighbors(x) {
            if part.part_of(y) == i {
                let ky = nodes.binary_search(&y).expect("same part");
                t.push((k, k, w));
                t.push((k, ky, -w));
            }
        }
    }
    CsrMatrix::from_triplets(nodes.len(), &t)
}

/// Smallest `count` pairs of `a v = λ diag(d) v`, dense for small problems and
/// shift-invert Lanczos otherwise.
fn smallest_pairs(a: &CsrMatrix, d: &[f64], count: usize, tol: f64) -> Result<GenEigen> {
    if a.dim() <= DENSE_EIGEN_LIMIT {
        dense_sym_geig(&a.to_dense(), d, count)
    } else {
        let ratio = (0..a.dim())
            .map(|k| a.get(k, k) / d[k])
            .fold(0.0f64, f64::max)
            .max(f64::MIN_POSITIVE);
        lanczos_smallest_geig(a, d, count, -1e-6 * ratio, tol)
    }
}

fn check_subgraph(part: &Partition, i: usize) -> Result<()> {
    if i >= part.count() {
        return Err(Error::InvalidArgument(format!(
            "subgraph id {i} out of range"
        )));
    }
    Ok(())
}

/// `C_po,i = μ^{-1/2}` with `μ` the smallest eigenvalue of `a_i v = μ diag(L̃ + M) v`,
/// taken on the weighted complement of constants when `M ≡ 0` on the subgraph.
pub fn estimate_poincare(
    net: &SpatialNetwork,
    part: &Partition,
    i: usize,
    fallback: f64,
) -> Result<PoincareEstimate> {
    check_subgraph(part, i)?;
    let nodes = part.nodes(i);
    let a = local_energy_matrix(net, part, i);
    let d: Vec<f64> = nodes
        .iter()
        .map(|&x| net.lumped()[x] + net.masses()[x])
        .collect();
    let degenerate = || {
        log::warn!("subgraph {i}: Poincaré constant undefined, using fallback {fallback}");
        Ok(PoincareEstimate {
            value: fallback,
            degenerate: true,
        })
    };
    if d.iter().any(|&w| !(w > 0.0)) {
        return degenerate();
    }
    let massless = nodes.iter().all(|&x| net.masses()[x] == 0.0);
    let index = usize::from(massless);
    if index >= nodes.len() {
        return degenerate();
    }
    let eig = smallest_pairs(&a, &d, index + 1, 1e-10)?;
    let mu = eig.values[index];
    let scale = (0..a.dim())
        .map(|k| a.get(k, k) / d[k])
        .fold(0.0f64, f64::max);
    if !(mu > 1e-14 * scale) {
        return degenerate();
    }
    Ok(PoincareEstimate {
        value: mu.powf(-0.5),
        degenerate: false,
    })
}

/// The bilinear forms of one subgraph.
#[derive(Clone, Debug)]
pub struct LocalForms {
    pub subgraph: usize,
    pub nodes: Vec<usize>,
    pub a_matrix: CsrMatrix,
    /// `(L̃_x + M_x) C_po,i^{-2}`, with `L̃_x` lumped over all neighbours of `x`.
    pub s_diagonal: Vec<f64>,
    pub c_po: f64,
}

/// Resolves `C_po,i` under `policy`, returning a warning for degenerate estimates.
pub fn resolve_cpo(
    net: &SpatialNetwork,
    part: &Partition,
    i: usize,
    policy: &CpoPolicy,
) -> Result<(f64, Option<String>)> {
    let value = match policy {
        CpoPolicy::Computed { fallback } => {
            let est = estimate_poincare(net, part, i, *fallback)?;
            if est.degenerate {
                return Ok((
                    est.value,
                    Some(format!(
                        "subgraph {i}: degenerate Poincaré estimate, fallback {fallback}"
                    )),
                ));
            }
            est.value
        }
        CpoPolicy::Uniform { value } => *value,
        CpoPolicy::PerSubgraph { values } => {
            check_len(part.count(), values.len())?;
            values[i]
        }
    };
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "C_po for subgraph {i} must be positive, got {value}"
        )));
    }
    Ok((value, None))
}

pub fn build_local_forms(
    net: &SpatialNetwork,
    part: &Partition,
    i: usize,
    policy: &CpoPolicy,
) -> Result<LocalForms> {
    check_subgraph(part, i)?;
    let (c_po, _) = resolve_cpo(net, part, i, policy)?;
    Ok(local_forms_with(net, part, i, c_po))
}

fn local_forms_with(net: &SpatialNetwork, part: &Partition, i: usize, c_po: f64) -> LocalForms {
    let nodes = part.nodes(i).to_vec();
    let scale = c_po.powi(-2);
    let s_diagonal = nodes
        .iter()
        .map(|&x| (net.lumped()[x] + net.masses()[x]) * scale)
        .collect();
    LocalForms {
        subgraph: i,
        a_matrix: local_energy_matrix(net, part, i),
        nodes,
        s_diagonal,
        c_po,
    }
}

/// Lowest eigenpairs of one subgraph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalEigen {
    /// Ascending `λ_1 ≤ … ≤ λ_{l_i}`.
    pub values: Vec<f64>,
    /// `φ_j` restricted to the subgraph nodes, `s_i`-orthonormal.
    pub vectors: Vec<Vec<f64>>,
    /// `λ_{l_i + 1}` when the subgraph has more than `l_i` nodes.
    pub next_value: Option<f64>,
    /// The request exceeded the subgraph size and was reduced.
    pub clamped: bool,
}

pub fn solve_local_eigen(forms: &LocalForms, nov: usize, tol: f64) -> Result<LocalEigen> {
    if nov == 0 {
        return Err(Error::InvalidParameter(
            "need at least one eigenvector per subgraph".into(),
        ));
    }
    let n = forms.nodes.len();
    let clamped = nov > n;
    if clamped {
        log::warn!(
            "subgraph {}: {nov} eigenvectors requested but only {n} nodes; subgraph fully resolved",
            forms.subgraph
        );
    }
    let keep = nov.min(n);
    let eig = smallest_pairs(&forms.a_matrix, &forms.s_diagonal, keep + 1, tol)?;
    let next_value = eig.values.get(keep).copied();
    let vectors = (0..keep)
        .map(|j| eig.vectors.column(j).iter().copied().collect())
        .collect();
    Ok(LocalEigen {
        values: eig.values[..keep].to_vec(),
        vectors,
        next_value,
        clamped,
    })
}

/// Per-subgraph data of the auxiliary space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgraphAux {
    pub nodes: Vec<usize>,
    pub c_po: f64,
    pub eigen: LocalEigen,
}

/// The auxiliary space `V_aux = ⊕_i span{φ_j^i}` with its projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxSpace {
    pub node_count: usize,
    pub nov: usize,
    pub subgraphs: Vec<SubgraphAux>,
    /// Global diagonal of `s`: `(L̃_x + M_x) C_po,i^{-2}` for `x ∈ N_i`.
    pub s_weights: Vec<f64>,
    /// Offset of subgraph `i`'s first function in the global `(i, j)` ordering.
    pub offsets: Vec<usize>,
    pub warnings: Vec<String>,
}

impl AuxSpace {
    /// Solves every subgraph eigenproblem (in parallel on the current rayon pool).
    pub fn build(
        net: &SpatialNetwork,
        part: &Partition,
        nov: usize,
        policy: &CpoPolicy,
        tol: f64,
    ) -> Result<Self> {
        if part.assignment().len() != net.node_count() {
            return Err(Error::DimensionMismatch {
                expected: net.node_count(),
                actual: part.assignment().len(),
            });
        }
        let results: Vec<Result<(SubgraphAux, Option<String>)>> = (0..part.count())
            .into_par_iter()
            .map(|i| {
                let (c_po, warning) = resolve_cpo(net, part, i, policy)?;
                let forms = local_forms_with(net, part, i, c_po);
                if let Some(k) = forms.s_diagonal.iter().position(|&w| !(w > 0.0)) {
                    return Err(Error::InvalidNetwork(format!(
                        "node {} has zero lumped weight and zero mass",
                        forms.nodes[k]
                    )));
                }
                let eigen = solve_local_eigen(&forms, nov, tol)?;
                Ok((
                    SubgraphAux {
                        nodes: forms.nodes,
                        c_po,
                        eigen,
                    },
                    warning,
                ))
            })
            .collect();

        let mut subgraphs = Vec::with_capacity(part.count());
        let mut warnings = Vec::new();
        for r in results {
            let (sub, w) = r?;
            if sub.eigen.clamped {
                warnings.push(format!(
                    "subgraph with {} nodes is fully resolved ({} eigenvectors kept)",
                    sub.nodes.len(),
                    sub.eigen.values.len()
                ));
            }
            warnings.extend(w);
            subgraphs.push(sub);
        }

        let mut s_weights = vec![0.0; net.node_count()];
        let mut offsets = Vec::with_capacity(subgraphs.len() + 1);
        let mut total = 0;
        for sub in &subgraphs {
            let scale = sub.c_po.powi(-2);
            for &x in &sub.nodes {
                s_weights[x] = (net.lumped()[x] + net.masses()[x]) * scale;
            }
            offsets.push(total);
            total += sub.eigen.values.len();
        }
        offsets.push(total);
        Ok(AuxSpace {
            node_count: net.node_count(),
            nov,
            subgraphs,
            s_weights,
            offsets,
            warnings,
        })
    }

    pub fn subgraph_count(&self) -> usize {
        self.subgraphs.len()
    }

    /// `Σ_i l_i`.
    pub fn dimension(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    /// `l_i`.
    pub fn count_in(&self, i: usize) -> usize {
        self.subgraphs[i].eigen.values.len()
    }

    /// Global position of `φ_j^i` (zero-based `j`).
    pub fn index(&self, i: usize, j: usize) -> usize {
        self.offsets[i] + j
    }

    /// Inverse of [`AuxSpace::index`].
    pub fn locate(&self, k: usize) -> (usize, usize) {
        let i = self.offsets.partition_point(|&o| o <= k) - 1;
        (i, k - self.offsets[i])
    }

    /// `Λ = min_i λ_{l_i+1}^i`; `None` when some subgraph is fully resolved.
    pub fn spectral_gap(&self) -> Option<f64> {
        self.subgraphs
            .iter()
            .map(|s| s.eigen.next_value)
            .try_fold(f64::INFINITY, |m, v| v.map(|v| m.min(v)))
    }

    /// `C_po = max_i C_po,i`.
    pub fn c_po_max(&self) -> f64 {
        self.subgraphs.iter().map(|s| s.c_po).fold(0.0, f64::max)
    }

    /// `φ_j^i` zero-extended to all nodes.
    pub fn phi_global(&self, i: usize, j: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.node_count];
        let sub = &self.subgraphs[i];
        for (&x, &p) in sub.nodes.iter().zip(&sub.eigen.vectors[j]) {
            v[x] = p;
        }
        v
    }

    /// `s(v, w)` over all nodes.
    pub fn s_inner(&self, v: &[f64], w: &[f64]) -> f64 {
        self.s_weights
            .iter()
            .zip(v)
            .zip(w)
            .map(|((s, a), b)| s * a * b)
            .sum()
    }

    /// Coefficients `s(v, φ_j^i)` in global `(i, j)` order.
    pub fn coefficients(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.node_count, v.len())?;
        let mut out = Vec::with_capacity(self.dimension());
        for sub in &self.subgraphs {
            for phi in &sub.eigen.vectors {
                out.push(
                    sub.nodes
                        .iter()
                        .zip(phi)
                        .map(|(&x, p)| self.s_weights[x] * v[x] * p)
                        .sum(),
                );
            }
        }
        Ok(out)
    }

    /// `π v = Σ_i Σ_j s_i(v, φ_j^i) φ_j^i`.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        let coef = self.coefficients(v)?;
        let mut out = vec![0.0; self.node_count];
        let mut k = 0;
        for sub in &self.subgraphs {
            for phi in &sub.eigen.vectors {
                let c = coef[k];
                k += 1;
                for (&x, p) in sub.nodes.iter().zip(phi) {
                    out[x] += c * p;
                }
            }
        }
        Ok(out)
    }

    /// Columns `S φ_j^i` restricted to `nodes` (sorted), for every subgraph
    /// entirely inside `nodes`. Returns the dense block and the global aux
    /// indices of its columns.
    pub fn weighted_columns(
        &self,
        nodes: &[usize],
        subgraph_ids: &[usize],
    ) -> (DMatrix<f64>, Vec<usize>) {
        let cols: usize = subgraph_ids.iter().map(|&i| self.count_in(i)).sum();
        let mut g = DMatrix::zeros(nodes.len(), cols);
        let mut ids = Vec::with_capacity(cols);
        let mut c = 0;
        for &i in subgraph_ids {
            let sub = &self.subgraphs[i];
            for (j, phi) in sub.eigen.vectors.iter().enumerate() {
                for (&x, p) in sub.nodes.iter().zip(phi) {
                    let r = nodes.binary_search(&x).expect("subgraph inside patch");
                    g[(r, c)] = self.s_weights[x] * p;
                }
                ids.push(self.index(i, j));
                c += 1;
            }
        }
        (g, ids)
    }

    /// Compact JSON summary (no eigenvectors).
    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "node_count": self.node_count,
            "subgraphs": self.subgraph_count(),
            "nov": self.nov,
            "dimension": self.dimension(),
            "spectral_gap": self.spectral_gap(),
            "c_po_max": self.c_po_max(),
            "per_subgraph": self.subgraphs.iter().map(|s| serde_json::json!({
                "size": s.nodes.len(),
                "c_po": s.c_po,
                "eigenvalues": s.eigen.values,
                "next_eigenvalue": s.eigen.next_value,
            })).collect::<Vec<_>>(),
            "warnings": self.warnings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NodeSubset;

    fn single(mass: f64, external: f64) -> (SpatialNetwork, Partition) {
        // node 0 is the subgraph; node 1 hangs off it with weight `external`
        let net = SpatialNetwork::new(2, vec![(0, 1, external)], vec![mass, 1.0]).unwrap();
        let (p, _) = Partition::from_assignment(&net, &[0, 1]).unwrap();
        (net, p)
    }

    #[test]
    fn poincare_single_node_closed_form() {
        // L̃ = t = external / 2
        let (net, p) = single(0.7, 3.0);
        let est = estimate_poincare(&net, &p, 0, 1.0).unwrap();
        let (t, m) = (1.5, 0.7);
        assert!(!est.degenerate);
        assert!((est.value.powi(2) - (t + m) / m).abs() < 1e-12);
    }

    #[test]
    fn poincare_two_node_massless() {
        let net = SpatialNetwork::new(2, vec![(0, 1, 1.0)], vec![0.0; 2]).unwrap();
        let (p, _) = Partition::from_assignment(&net, &[0, 0]).unwrap();
        let est = estimate_poincare(&net, &p, 0, 1.0).unwrap();
        assert!((est.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn poincare_is_scale_invariant() {
        let build = |c: f64| {
            SpatialNetwork::new(
                4,
                vec![
                    (0, 1, 2.0 * c),
                    (1, 2, 0.5 * c),
                    (2, 3, 1.0 * c),
                    (0, 3, 4.0 * c),
                ],
                vec![0.1 * c, 0.0, 0.3 * c, 0.0],
            )
            .unwrap()
        };
        let base = build(1.0);
        let (p, _) = Partition::from_assignment(&base, &[0, 0, 0, 1]).unwrap();
        let a = estimate_poincare(&base, &p, 0, 1.0).unwrap().value;
        let b = estimate_poincare(&build(37.0), &p, 0, 1.0).unwrap().value;
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn poincare_degenerate_single_massless_node() {
        let net = SpatialNetwork::new(2, vec![(0, 1, 1.0)], vec![0.0, 1.0]).unwrap();
        let (p, _) = Partition::from_assignment(&net, &[0, 1]).unwrap();
        let est = estimate_poincare(&net, &p, 0, 2.5).unwrap();
        assert!(est.degenerate);
        assert_eq!(est.value, 2.5);
    }

    #[test]
    fn local_forms_examples() {
        let lone = SpatialNetwork::new(1, vec![], vec![3.0]).unwrap();
        let (p, _) = Partition::from_assignment(&lone, &[0]).unwrap();
        let f = build_local_forms(&lone, &p, 0, &CpoPolicy::Uniform { value: 1.0 }).unwrap();
        assert_eq!(f.a_matrix.to_dense()[(0, 0)], 3.0);
        assert_eq!(f.s_diagonal, vec![3.0]);

        // node 1 is on the boundary of {0, 1}: one internal and one external unit edge
        let net = SpatialNetwork::new(3, vec![(0, 1, 1.0), (1, 2, 1.0)], vec![0.0; 3]).unwrap();
        let (p, _) = Partition::from_assignment(&net, &[0, 0, 1]).unwrap();
        let f = build_local_forms(&net, &p, 0, &CpoPolicy::Uniform { value: 1.0 }).unwrap();
        assert_eq!(f.s_diagonal[1], 1.0);
        assert_eq!(f.a_matrix.get(1, 1), 1.0);
        // massless: rows sum to zero
        for r in 0..2 {
            let (_, vals) = f.a_matrix.row(r);
            assert!(vals.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn one_by_one_eigenpair() {
        let (t, m, c) = (1.5, 0.7, 2.0);
        let (net, p) = single(m, 2.0 * t);
        let f = build_local_forms(&net, &p, 0, &CpoPolicy::Uniform { value: c }).unwrap();
        let e = solve_local_eigen(&f, 1, 1e-10).unwrap();
        assert!((e.values[0] - m * c * c / (t + m)).abs() < 1e-12);
        assert!((e.vectors[0][0] - c / (t + m).sqrt()).abs() < 1e-12);
        assert_eq!(e.next_value, None);
    }

    #[test]
    fn full_basis_makes_projection_identity() {
        let net = SpatialNetwork::new(
            5,
            vec![(0, 1, 1.0), (1, 2, 2.0), (2, 3, 1.0), (3, 4, 5.0)],
            vec![1.0, 0.0, 0.5, 0.0, 1.0],
        )
        .unwrap();
        let (p, _) = Partition::from_assignment(&net, &[0, 0, 0, 1, 1]).unwrap();
        let aux = AuxSpace::build(&net, &p, 10, &CpoPolicy::default(), 1e-10).unwrap();
        assert_eq!(aux.dimension(), 5);
        assert!(aux.spectral_gap().is_none());
        let v = [0.3, -1.0, 2.0, 0.5, 0.25];
        let pv = aux.project(&v).unwrap();
        for k in 0..5 {
            assert!((pv[k] - v[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_pair_has_symmetric_modes() {
        let net = SpatialNetwork::new(2, vec![(0, 1, 1.0)], vec![1.0, 1.0]).unwrap();
        let (p, _) = Partition::from_assignment(&net, &[0, 0]).unwrap();
        let f = build_local_forms(&net, &p, 0, &CpoPolicy::Uniform { value: 1.0 }).unwrap();
        let e = solve_local_eigen(&f, 2, 1e-10).unwrap();
        assert!((e.vectors[0][0] - e.vectors[0][1]).abs() < 1e-12);
        assert!((e.vectors[1][0] + e.vectors[1][1]).abs() < 1e-12);
    }

    #[test]
    fn projection_basics() {
        let net = SpatialNetwork::new(
            6,
            vec![
                (0, 1, 1.0),
                (1, 2, 1.0),
                (2, 3, 1.0),
                (3, 4, 1.0),
                (4, 5, 1.0),
            ],
            vec![1.0; 6],
        )
        .unwrap();
        let (p, _) = Partition::from_assignment(&net, &[0, 0, 0, 1, 1, 1]).unwrap();
        let aux = AuxSpace::build(&net, &p, 1, &CpoPolicy::default(), 1e-10).unwrap();
        let phi = aux.phi_global(1, 0);
        let pphi = aux.project(&phi).unwrap();
        for k in 0..6 {
            assert!((pphi[k] - phi[k]).abs() < 1e-13);
        }
        // v - πv is s-orthogonal to the aux space, so π(v - πv) = 0
        let v = [1.0, -0.5, 0.25, 2.0, 0.0, -1.0];
        let pv = aux.project(&v).unwrap();
        let rest: Vec<f64> = v.iter().zip(&pv).map(|(a, b)| a - b).collect();
        assert!(aux.project(&rest).unwrap().iter().all(|x| x.abs() < 1e-13));
        assert!(aux.s_inner(&pv, &pv) <= aux.s_inner(&v, &v) + 1e-14);
        let sub = NodeSubset::new(6, vec![0, 1, 2]).unwrap();
        let c0 = aux.subgraphs[0].c_po;
        let direct = net.inner_s(&v, &v, Some(&sub), c0).unwrap();
        let via = v[..3]
            .iter()
            .enumerate()
            .map(|(x, vx)| aux.s_weights[x] * vx * vx)
            .sum::<f64>();
        assert!((direct - via).abs() < 1e-13);
    }
}
