//! Weighted spatial networks and the energy (`a`) and lumped-weight (`s`)
//! bilinear forms defined over them.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub x: usize,
    pub y: usize,
    pub weight: f64,
}

/// Sorted, duplicate-free set of node indices of a network with `node_count` nodes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeSubset {
    nodes: Vec<usize>,
}

impl NodeSubset {
    /// Validates that `nodes` is strictly ascending and in range.
    pub fn new(node_count: usize, nodes: Vec<usize>) -> Result<Self> {
        if let Some(w) = nodes.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "node subset must be strictly ascending, found {} before {}",
                w[0], w[1]
            )));
        }
        if let Some(&bad) = nodes.iter().find(|&&x| x >= node_count) {
            return Err(Error::InvalidArgument(format!(
                "node {bad} out of range for {node_count} nodes"
            )));
        }
        Ok(NodeSubset { nodes })
    }

    /// Sorts and deduplicates.
    pub fn from_unsorted(node_count: usize, mut nodes: Vec<usize>) -> Result<Self> {
        nodes.sort_unstable();
        nodes.dedup();
        Self::new(node_count, nodes)
    }

    pub fn all(node_count: usize) -> Self {
        NodeSubset {
            nodes: (0..node_count).collect(),
        }
    }

    pub fn empty() -> Self {
        NodeSubset { nodes: Vec::new() }
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.nodes
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, x: usize) -> bool {
        self.nodes.binary_search(&x).is_ok()
    }

    pub fn is_subset_of(&self, other: &NodeSubset) -> bool {
        self.nodes.iter().all(|&x| other.contains(x))
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().copied()
    }
}

/// Diagnosis of whether `L + M` is SPD on the free nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WellPosedness {
    pub free_connected: bool,
    pub definite: bool,
    /// Positive masses and Dirichlet nodes are both present.
    pub mixed_mass_and_dirichlet: bool,
    pub signed_weights: bool,
    pub reasons: Vec<String>,
}

impl WellPosedness {
    pub fn pass(&self) -> bool {
        self.free_connected && self.definite
    }
}

/// Immutable undirected weighted graph with nodal masses.
///
/// Edges are stored once with `x < y`. An adjacency index and the lumped
/// weights `L̃_x = Σ_{y~x} L_xy / 2` are built at construction.
#[derive(Clone, Debug)]
pub struct SpatialNetwork {
    node_count: usize,
    edges: Vec<Edge>,
    masses: Vec<f64>,
    dirichlet: Vec<usize>,
    is_dirichlet: Vec<bool>,
    adj_ptr: Vec<usize>,
    adj: Vec<(usize, f64)>,
    lumped: Vec<f64>,
    coords: Option<Vec<[f64; 2]>>,
    signed: bool,
}

impl SpatialNetwork {
    /// Builds a network from `(x, y, L_xy)` triples and nodal masses.
    ///
    /// Rejects self loops, repeated edges, and weights outside `(0, ∞)`.
    pub fn new(
        node_count: usize,
        edges: Vec<(usize, usize, f64)>,
        masses: Vec<f64>,
    ) -> Result<Self> {
        Self::build(node_count, edges, masses, false)
    }

    /// Builds a network whose edge weights and masses may be negative. Used for
    /// operators that are SPD but not M-matrices; lumping then uses `|L_xy| / 2`.
    pub fn new_signed(
        node_count: usize,
        edges: Vec<(usize, usize, f64)>,
        masses: Vec<f64>,
    ) -> Result<Self> {
        Self::build(node_count, edges, masses, true)
    }

    fn build(
        node_count: usize,
        edges: Vec<(usize, usize, f64)>,
        masses: Vec<f64>,
        signed: bool,
    ) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::InvalidNetwork(
                "network needs at least one node".into(),
            ));
        }
        check_len(node_count, masses.len())?;
        for (x, &m) in masses.iter().enumerate() {
            if !m.is_finite() || (!signed && m < 0.0) {
                return Err(Error::InvalidNetwork(format!(
                    "mass M_{x} = {m} must be finite and non-negative"
                )));
            }
        }
        let mut canon: Vec<Edge> = Vec::with_capacity(edges.len());
        for (x, y, w) in edges {
            if x >= node_count || y >= node_count {
                return Err(Error::InvalidNetwork(format!(
                    "edge ({x}, {y}) out of range"
                )));
            }
            if x == y {
                return Err(Error::InvalidNetwork(format!("self loop at node {x}")));
            }
            if !w.is_finite() || w == 0.0 || (!signed && w < 0.0) {
                return Err(Error::InvalidNetwork(format!(
                    "edge ({x}, {y}) has weight {w}; weights must satisfy 0 < L_xy < inf"
                )));
            }
            let (x, y) = if x < y { (x, y) } else { (y, x) };
            canon.push(Edge { x, y, weight: w });
        }
        canon.sort_by_key(|e| (e.x, e.y));
        if let Some(w) = canon
            .windows(2)
            .find(|w| w[0].x == w[1].x && w[0].y == w[1].y)
        {
            return Err(Error::InvalidNetwork(format!(
                "edge ({}, {}) appears twice",
                w[0].x, w[0].y
            )));
        }

        let mut deg = vec![0usize; node_count + 1];
        for e in &canon {
            deg[e.x + 1] += 1;
            deg[e.y + 1] += 1;
        }
        for i in 0..node_count {
            deg[i + 1] += deg[i];
        }
        let adj_ptr = deg.clone();
        let mut fill = deg;
        let mut adj = vec![(0usize, 0.0); 2 * canon.len()];
        for e in &canon {
            adj[fill[e.x]] = (e.y, e.weight);
            fill[e.x] += 1;
            adj[fill[e.y]] = (e.x, e.weight);
            fill[e.y] += 1;
        }
        for x in 0..node_count {
            adj[adj_ptr[x]..adj_ptr[x + 1]].sort_by_key(|a| a.0);
        }
        let lumped = (0..node_count)
            .map(|x| {
                adj[adj_ptr[x]..adj_ptr[x + 1]]
                    .iter()
                    .map(|&(_, w)| w.abs())
                    .sum::<f64>()
                    / 2.0
            })
            .collect();

        Ok(SpatialNetwork {
            node_count,
            edges: canon,
            masses,
            dirichlet: Vec::new(),
            is_dirichlet: vec![false; node_count],
            adj_ptr,
            adj,
            lumped,
            coords: None,
            signed,
        })
    }

    /// Decomposes an SPD matrix `A` into a network with `L_xy = -A_xy` and
    /// `M_x = A_xx - Σ_y L_xy`. Positive off-diagonals produce a signed network.
    pub fn from_operator(a: &CsrMatrix) -> Result<Self> {
        let n = a.dim();
        let mut edges = Vec::new();
        let mut masses = vec![0.0; n];
        let mut signed = false;
        let diag = a.diagonal();
        for (r, c, v) in a.triplets() {
            if r == c {
                masses[r] += v;
            } else {
                masses[r] += v;
                if c > r && v != 0.0 {
                    if v > 0.0 {
                        signed = true;
                    }
                    edges.push((r, c, -v));
                }
            }
        }
        // rows of L sum to zero, so the residual diagonal surplus is the mass;
        // cancellation noise is snapped to an exact zero
        for (m, d) in masses.iter_mut().zip(&diag) {
            if m.abs() <= 1e-12 * d.abs() {
                *m = 0.0;
            }
        }
        if !signed && masses.iter().any(|&m| m < 0.0) {
            signed = true;
        }
        Self::build(n, edges, masses, signed)
    }

    pub fn with_dirichlet(mut self, mut nodes: Vec<usize>) -> Result<Self> {
        nodes.sort_unstable();
        nodes.dedup();
        if let Some(&bad) = nodes.iter().find(|&&x| x >= self.node_count) {
            return Err(Error::InvalidArgument(format!(
                "Dirichlet node {bad} out of range"
            )));
        }
        self.is_dirichlet = vec![false; self.node_count];
        for &x in &nodes {
            self.is_dirichlet[x] = true;
        }
        self.dirichlet = nodes;
        Ok(self)
    }

    pub fn with_coords(mut self, coords: Vec<[f64; 2]>) -> Result<Self> {
        check_len(self.node_count, coords.len())?;
        self.coords = Some(coords);
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Lumped weights `L̃_x`.
    pub fn lumped(&self) -> &[f64] {
        &self.lumped
    }

    pub fn dirichlet(&self) -> &[usize] {
        &self.dirichlet
    }

    pub fn is_dirichlet(&self, x: usize) -> bool {
        self.is_dirichlet[x]
    }

    pub fn coords(&self) -> Option<&[[f64; 2]]> {
        self.coords.as_deref()
    }

    pub fn is_signed(&self) -> bool {
        self.signed
    }

    /// `(neighbour, L_xy)` pairs sorted by neighbour.
    pub fn neighbors(&self, x: usize) -> &[(usize, f64)] {
        &self.adj[self.adj_ptr[x]..self.adj_ptr[x + 1]]
    }

    pub fn degree(&self, x: usize) -> usize {
        self.adj_ptr[x + 1] - self.adj_ptr[x]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.node_count)
            .map(|x| self.degree(x))
            .max()
            .unwrap_or(0)
    }

    /// `L̃_x + M_x`, the unscaled weight of the `s` form.
    pub fn lumped_plus_mass(&self) -> Vec<f64> {
        self.lumped
            .iter()
            .zip(&self.masses)
            .map(|(l, m)| l + m)
            .collect()
    }

    /// Sparse matrix of `L + M` over all nodes (Dirichlet constraints ignored).
    pub fn operator_matrix(&self) -> CsrMatrix {
        let mut t = Vec::with_capacity(self.node_count + 4 * self.edges.len());
        for (x, &m) in self.masses.iter().enumerate() {
            t.push((x, x, m));
        }
        for e in &self.edges {
            t.push((e.x, e.x, e.weight));
            t.push((e.y, e.y, e.weight));
            t.push((e.x, e.y, -e.weight));
            t.push((e.y, e.x, -e.weight));
        }
        CsrMatrix::from_triplets(self.node_count, &t)
    }

    /// `(L + M) v` with Dirichlet values treated as zero and Dirichlet rows zeroed.
    pub fn apply_operator(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.node_count, v.len())?;
        let val = |y: usize| if self.is_dirichlet[y] { 0.0 } else { v[y] };
        Ok((0..self.node_count)
            .map(|x| {
                if self.is_dirichlet[x] {
                    return 0.0;
                }
                let vx = v[x];
                self.neighbors(x)
                    .iter()
                    .map(|&(y, w)| w * (vx - val(y)))
                    .sum::<f64>()
                    + self.masses[x] * vx
            })
            .collect())
    }

    /// Localized energy form `Σ_{x∈R} ½ Σ_{y~x} L_xy (v_x - v_y)(w_x - w_y) + Σ_{x∈R} M_x v_x w_x`.
    /// `subset = None` is the whole node set.
    pub fn inner_a(&self, v: &[f64], w: &[f64], subset: Option<&NodeSubset>) -> Result<f64> {
        check_len(self.node_count, v.len())?;
        check_len(self.node_count, w.len())?;
        let term = |x: usize| -> f64 {
            let (vx, wx) = (v[x], w[x]);
            let edge: f64 = self
                .neighbors(x)
                .iter()
                .map(|&(y, l)| l * (vx - v[y]) * (wx - w[y]))
                .sum();
            0.5 * edge + self.masses[x] * vx * wx
        };
        Ok(match subset {
            Some(s) => s.iter().map(term).sum(),
            None => (0..self.node_count).map(term).sum(),
        })
    }

    /// `Σ_{x∈R} (L̃_x + M_x) c_po⁻² v_x w_x`.
    pub fn inner_s(
        &self,
        v: &[f64],
        w: &[f64],
        subset: Option<&NodeSubset>,
        c_po: f64,
    ) -> Result<f64> {
        check_len(self.node_count, v.len())?;
        check_len(self.node_count, w.len())?;
        if !(c_po > 0.0) || !c_po.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "Poincaré constant must be positive, got {c_po}"
            )));
        }
        let scale = c_po.powi(-2);
        let term = |x: usize| (self.lumped[x] + self.masses[x]) * scale * v[x] * w[x];
        Ok(match subset {
            Some(s) => s.iter().map(term).sum(),
            None => (0..self.node_count).map(term).sum(),
        })
    }

    /// `vol_outer(inner) = Σ_{x∈inner} d_outer(x)`; degrees count neighbours inside
    /// `outer`, or all neighbours when `outer` is `None`.
    pub fn volume(&self, inner: &NodeSubset, outer: Option<&NodeSubset>) -> Result<usize> {
        match outer {
            None => Ok(inner.iter().map(|x| self.degree(x)).sum()),
            Some(o) => {
                if !inner.is_subset_of(o) {
                    return Err(Error::InvalidArgument(
                        "inner node set is not contained in outer set".into(),
                    ));
                }
                Ok(inner
                    .iter()
                    .map(|x| {
                        self.neighbors(x)
                            .iter()
                            .filter(|&&(y, _)| o.contains(y))
                            .count()
                    })
                    .sum())
            }
        }
    }

    /// Connected components of the subgraph induced by `keep` (all nodes when `None`).
    /// Returns a component id per node (`usize::MAX` for dropped nodes) and the count.
    pub fn components(&self, keep: Option<&[bool]>) -> (Vec<usize>, usize) {
        let inside = |x: usize| keep.is_none_or(|k| k[x]);
        let mut comp = vec![usize::MAX; self.node_count];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for s in 0..self.node_count {
            if comp[s] != usize::MAX || !inside(s) {
                continue;
            }
            comp[s] = count;
            queue.push_back(s);
            while let Some(x) = queue.pop_front() {
                for &(y, _) in self.neighbors(x) {
                    if comp[y] == usize::MAX && inside(y) {
                        comp[y] = count;
                        queue.push_back(y);
                    }
                }
            }
            count += 1;
        }
        (comp, count)
    }

    pub fn is_connected(&self) -> bool {
        self.components(None).1 == 1
    }

    pub fn check_well_posedness(&self) -> WellPosedness {
        let free: Vec<bool> = self.is_dirichlet.iter().map(|d| !d).collect();
        let (_, n_comp) = self.components(Some(&free));
        let free_connected = n_comp == 1;
        let has_mass = (0..self.node_count).any(|x| !self.is_dirichlet[x] && self.masses[x] > 0.0);
        let has_dirichlet = !self.dirichlet.is_empty();
        let mut reasons = Vec::new();
        if !free_connected {
            reasons.push(if n_comp == 0 {
                "no free nodes".to_string()
            } else {
                format!("graph disconnected ({n_comp} components among free nodes)")
            });
        }
        let definite = has_mass || has_dirichlet;
        if !definite {
            reasons.push("ker(L) = constants, M singular".to_string());
        }
        let mixed = has_mass && has_dirichlet;
        if mixed {
            reasons.push("note: positive masses combined with Dirichlet nodes".to_string());
        }
        if self.signed {
            reasons.push(
                "note: signed weights; definiteness is checked numerically by factorization"
                    .to_string(),
            );
        }
        WellPosedness {
            free_connected,
            definite,
            mixed_mass_and_dirichlet: mixed,
            signed_weights: self.signed,
            reasons,
        }
    }

    /// Eliminates Dirichlet nodes. Edges to constrained nodes are folded into
    /// the mass of their free endpoint, so the reduced `L + M` is exactly the
    /// free-free block of the original operator.
    pub fn reduce_dirichlet(&self) -> Result<ReducedNetwork> {
        let free: Vec<usize> = (0..self.node_count)
            .filter(|&x| !self.is_dirichlet[x])
            .collect();
        if free.is_empty() {
            return Err(Error::InvalidNetwork("every node is constrained".into()));
        }
        let mut local = vec![usize::MAX; self.node_count];
        for (k, &x) in free.iter().enumerate() {
            local[x] = k;
        }
        let mut masses: Vec<f64> = free.iter().map(|&x| self.masses[x]).collect();
        let mut edges = Vec::new();
        for e in &self.edges {
            match (local[e.x], local[e.y]) {
                (usize::MAX, usize::MAX) => {}
                (usize::MAX, ly) => masses[ly] += e.weight,
                (lx, usize::MAX) => masses[lx] += e.weight,
                (lx, ly) => edges.push((lx, ly, e.weight)),
            }
        }
        let mut network = Self::build(free.len(), edges, masses, self.signed)?;
        if let Some(c) = &self.coords {
            network.coords = Some(free.iter().map(|&x| c[x]).collect());
        }
        Ok(ReducedNetwork {
            network,
            free,
            full_count: self.node_count,
        })
    }
}

/// Free-node network plus the map back to the original node numbering.
#[derive(Clone, Debug)]
pub struct ReducedNetwork {
    pub network: SpatialNetwork,
    /// `free[k]` is the original index of reduced node `k`.
    pub free: Vec<usize>,
    pub full_count: usize,
}

impl ReducedNetwork {
    /// Zero-extends a reduced node function to the original nodes.
    pub fn expand(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.free.len(), v.len())?;
        let mut out = vec![0.0; self.full_count];
        for (k, &x) in self.free.iter().enumerate() {
            out[x] = v[k];
        }
        Ok(out)
    }

    pub fn restrict(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.full_count, v.len())?;
        Ok(self.free.iter().map(|&x| v[x]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn path3(mass: f64) -> SpatialNetwork {
        SpatialNetwork::new(3, vec![(0, 1, 1.0), (1, 2, 1.0)], vec![mass; 3]).unwrap()
    }

    /// Dense `L + M` assembled entry by entry from the edge list.
    fn dense_oracle(net: &SpatialNetwork) -> DMatrix<f64> {
        let n = net.node_count();
        let mut a = DMatrix::from_diagonal(&DVector::from_column_slice(net.masses()));
        for e in net.edges() {
            a[(e.x, e.x)] += e.weight;
            a[(e.y, e.y)] += e.weight;
            a[(e.x, e.y)] -= e.weight;
            a[(e.y, e.x)] -= e.weight;
        }
        assert_eq!(a.nrows(), n);
        a
    }

    #[test]
    fn apply_operator_examples() {
        let net = path3(1.0);
        assert_eq!(
            net.apply_operator(&[1.0, 1.0, 1.0]).unwrap(),
            vec![1.0, 1.0, 1.0]
        );
        let dense = dense_oracle(&net);
        for v in [[1.0, 0.0, 0.0], [1.0, 0.0, -1.0]] {
            let expect = &dense * DVector::from_column_slice(&v);
            let got = net.apply_operator(&v).unwrap();
            assert_eq!(got, expect.as_slice().to_vec());
        }
        assert_eq!(
            net.apply_operator(&[1.0, 0.0, 0.0]).unwrap(),
            vec![2.0, -1.0, 0.0]
        );
        assert_eq!(
            net.apply_operator(&[1.0, 0.0, -1.0]).unwrap(),
            vec![2.0, 0.0, -2.0]
        );
    }

    #[test]
    fn apply_operator_dimension_error() {
        match path3(1.0).apply_operator(&[1.0, 2.0]) {
            Err(Error::DimensionMismatch {
                expected: 3,
                actual: 2,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inner_a_examples() {
        let single = SpatialNetwork::new(2, vec![(0, 1, 5.0)], vec![0.0; 2]).unwrap();
        assert_eq!(single.inner_a(&[0.0, 1.0], &[0.0, 1.0], None).unwrap(), 5.0);

        let net = path3(0.0);
        assert_eq!(net.inner_a(&[2.0; 3], &[2.0; 3], None).unwrap(), 0.0);
        let r = NodeSubset::new(3, vec![1]).unwrap();
        let v = [1.0, 0.0, -1.0];
        assert_eq!(net.inner_a(&v, &v, Some(&r)).unwrap(), 1.0);
    }

    #[test]
    fn inner_s_examples() {
        let pair = SpatialNetwork::new(2, vec![(0, 1, 1.0)], vec![0.0; 2]).unwrap();
        assert_eq!(pair.lumped(), &[0.5, 0.5]);
        assert_eq!(
            pair.inner_s(&[1.0, 1.0], &[1.0, 1.0], None, 1.0).unwrap(),
            1.0
        );
        assert_eq!(
            pair.inner_s(&[0.0, 0.0], &[1.0, 1.0], None, 1.0).unwrap(),
            0.0
        );

        let lone = SpatialNetwork::new(1, vec![], vec![3.0]).unwrap();
        assert_eq!(lone.inner_s(&[1.0], &[1.0], None, 2.0).unwrap(), 0.75);
        assert!(matches!(
            lone.inner_s(&[1.0], &[1.0], None, 0.0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn well_posedness_examples() {
        assert!(path3(1.0).check_well_posedness().pass());

        let report = path3(0.0).check_well_posedness();
        assert!(!report.pass());
        assert!(report
            .reasons
            .iter()
            .any(|r| r == "ker(L) = constants, M singular"));

        let split = SpatialNetwork::new(4, vec![(0, 1, 1.0), (2, 3, 1.0)], vec![1.0; 4]).unwrap();
        let report = split.check_well_posedness();
        assert!(!report.pass());
        assert!(report
            .reasons
            .iter()
            .any(|r| r.starts_with("graph disconnected")));

        let pinned = path3(0.0).with_dirichlet(vec![0]).unwrap();
        assert!(pinned.check_well_posedness().pass());
        let mixed = path3(1.0)
            .with_dirichlet(vec![2])
            .unwrap()
            .check_well_posedness();
        assert!(mixed.pass() && mixed.mixed_mass_and_dirichlet);
    }

    #[test]
    fn volume_examples() {
        let net = path3(1.0);
        assert_eq!(net.volume(&NodeSubset::all(3), None).unwrap(), 4);
        assert_eq!(net.volume(&NodeSubset::empty(), None).unwrap(), 0);
        let inner = NodeSubset::new(3, vec![1]).unwrap();
        let outer = NodeSubset::new(3, vec![0, 1]).unwrap();
        assert_eq!(net.volume(&inner, Some(&outer)).unwrap(), 1);
        assert!(matches!(
            net.volume(&outer, Some(&inner)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn construction_rejects_bad_edges() {
        assert!(SpatialNetwork::new(2, vec![(0, 1, 0.0)], vec![1.0; 2]).is_err());
        assert!(SpatialNetwork::new(2, vec![(0, 0, 1.0)], vec![1.0; 2]).is_err());
        assert!(SpatialNetwork::new(2, vec![(0, 1, 1.0), (1, 0, 2.0)], vec![1.0; 2]).is_err());
        assert!(SpatialNetwork::new(2, vec![(0, 1, f64::INFINITY)], vec![1.0; 2]).is_err());
        assert!(SpatialNetwork::new(2, vec![(0, 1, 1.0)], vec![-1.0, 1.0]).is_err());
    }

    #[test]
    fn dirichlet_reduction_matches_free_block() {
        let net = SpatialNetwork::new(
            4,
            vec![(0, 1, 2.0), (1, 2, 3.0), (2, 3, 0.5), (0, 3, 1.5)],
            vec![0.0, 0.1, 0.0, 0.0],
        )
        .unwrap()
        .with_dirichlet(vec![3])
        .unwrap();
        let red = net.reduce_dirichlet().unwrap();
        assert_eq!(red.free, vec![0, 1, 2]);
        let full = net.operator_matrix().to_dense();
        let block = full.view((0, 0), (3, 3)).into_owned();
        assert_eq!(red.network.operator_matrix().to_dense(), block);

        let v = [0.3, -1.0, 2.0];
        let expanded = red.expand(&v).unwrap();
        let applied = net.apply_operator(&expanded).unwrap();
        let reduced = red.network.apply_operator(&v).unwrap();
        for k in 0..3 {
            assert!((applied[k] - reduced[k]).abs() < 1e-14);
        }
        assert_eq!(applied[3], 0.0);
    }

    #[test]
    fn from_operator_roundtrip() {
        let net =
            SpatialNetwork::new(3, vec![(0, 1, 2.0), (1, 2, 0.5)], vec![0.0, 1.0, 0.25]).unwrap();
        let back = SpatialNetwork::from_operator(&net.operator_matrix()).unwrap();
        assert!(!back.is_signed());
        assert_eq!(back.edges(), net.edges());
        for (a, b) in back.masses().iter().zip(net.masses()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    fn random_net() -> impl Strategy<Value = (SpatialNetwork, Vec<f64>, Vec<f64>, Vec<bool>)> {
        (3usize..12).prop_flat_map(|n| {
            (
                proptest::collection::vec(0.1f64..10.0, n - 1),
                proptest::collection::vec((0usize..n, 0usize..n, 0.1f64..10.0), 0..n),
                proptest::collection::vec(0.0f64..2.0, n),
                proptest::collection::vec(-1.0f64..1.0, n),
                proptest::collection::vec(-1.0f64..1.0, n),
                proptest::collection::vec(any::<bool>(), n),
            )
                .prop_map(move |(tree, extra, masses, v, w, split)| {
                    let mut edges: Vec<(usize, usize, f64)> = tree
                        .iter()
                        .enumerate()
                        .map(|(k, &wt)| (k, k + 1, wt))
                        .collect();
                    for (x, y, wt) in extra {
                        let (x, y) = (x.min(y), x.max(y));
                        if x != y && !edges.iter().any(|e| e.0 == x && e.1 == y) {
                            edges.push((x, y, wt));
                        }
                    }
                    (SpatialNetwork::new(n, edges, masses).unwrap(), v, w, split)
                })
        })
    }

    proptest! {
        #[test]
        fn forms_are_symmetric_consistent_and_additive((net, v, w, split) in random_net()) {
            let a_vw = net.inner_a(&v, &w, None).unwrap();
            let a_wv = net.inner_a(&w, &v, None).unwrap();
            prop_assert!((a_vw - a_wv).abs() <= 1e-12 * (1.0 + a_vw.abs()));
            let s_vw = net.inner_s(&v, &w, None, 0.7).unwrap();
            let s_wv = net.inner_s(&w, &v, None, 0.7).unwrap();
            prop_assert!((s_vw - s_wv).abs() <= 1e-12 * (1.0 + s_vw.abs()));

            let av = net.apply_operator(&v).unwrap();
            let energy = net.inner_a(&v, &v, None).unwrap();
            let quad: f64 = v.iter().zip(&av).map(|(a, b)| a * b).sum();
            prop_assert!((energy - quad).abs() <= 1e-12 * (1.0 + energy.abs()));
            prop_assert!(energy >= -1e-14);

            let n = net.node_count();
            let r1 = NodeSubset::new(n, (0..n).filter(|&x| split[x]).collect()).unwrap();
            let r2 = NodeSubset::new(n, (0..n).filter(|&x| !split[x]).collect()).unwrap();
            let sum = net.inner_a(&v, &v, Some(&r1)).unwrap() + net.inner_a(&v, &v, Some(&r2)).unwrap();
            prop_assert!((sum - energy).abs() <= 1e-12 * (1.0 + energy.abs()));
        }

        #[test]
        fn energy_vanishes_only_on_constants_without_mass((net, v, _w, _s) in random_net()) {
            let massless = SpatialNetwork::new(
                net.node_count(),
                net.edges().iter().map(|e| (e.x, e.y, e.weight)).collect(),
                vec![0.0; net.node_count()],
            ).unwrap();
            let c = vec![v[0]; net.node_count()];
            prop_assert!(massless.inner_a(&c, &c, None).unwrap().abs() < 1e-12);
            let spread = v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
            if spread > 1e-3 {
                prop_assert!(massless.inner_a(&v, &v, None).unwrap() > 0.0);
            }
        }
    }
}
