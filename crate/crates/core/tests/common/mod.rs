#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use netcem::SpatialNetwork;
use rand::Rng;

/// Connected random network: random spanning tree plus extra edges, weights
/// log-uniform over `[1, contrast]`, a few positive masses.
pub fn random_network<R: Rng>(rng: &mut R, n: usize, contrast: f64) -> SpatialNetwork {
    let mut edges = Vec::new();
    let mut has = std::collections::HashSet::new();
    let w = |rng: &mut R| contrast.powf(rng.gen::<f64>());
    for x in 1..n {
        let y = rng.gen_range(0..x);
        has.insert((y, x));
        edges.push((y, x, w(rng)));
    }
    for _ in 0..n {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        let (a, b) = (a.min(b), a.max(b));
        if a != b && has.insert((a, b)) {
            edges.push((a, b, w(rng)));
        }
    }
    let mut masses: Vec<f64> = (0..n)
        .map(|_| {
            if rng.gen_bool(0.3) {
                rng.gen_range(0.1..2.0)
            } else {
                0.0
            }
        })
        .collect();
    masses[rng.gen_range(0..n)] = 1.0;
    SpatialNetwork::new(n, edges, masses).unwrap()
}

/// Dense `L + M`, assembled from the edge list.
pub fn dense_operator(net: &SpatialNetwork) -> DMatrix<f64> {
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

pub fn dense_solve(a: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    a.clone()
        .lu()
        .solve(&DVector::from_column_slice(b))
        .expect("nonsingular")
        .iter()
        .copied()
        .collect()
}

pub fn energy(a: &DMatrix<f64>, v: &[f64]) -> f64 {
    let v = DVector::from_column_slice(v);
    (v.transpose() * a * &v)[(0, 0)]
}

pub fn rel_energy_error(a: &DMatrix<f64>, reference: &[f64], approx: &[f64]) -> f64 {
    let d: Vec<f64> = reference.iter().zip(approx).map(|(r, u)| r - u).collect();
    (energy(a, &d) / energy(a, reference)).sqrt()
}

/// Smallest `count` generalized eigenpairs of `a v = λ diag(d) v` by brute force:
/// symmetric eigensolve of `D^{-1/2} a D^{-1/2}`, sorted ascending.
pub fn brute_geig(a: &DMatrix<f64>, d: &[f64], count: usize) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut b = a.clone();
    for r in 0..n {
        for c in 0..n {
            b[(r, c)] /= (d[r] * d[c]).sqrt();
        }
    }
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&p, &q| eig.eigenvalues[p].partial_cmp(&eig.eigenvalues[q]).unwrap());
    let count = count.min(n);
    let mut vecs = DMatrix::zeros(n, count);
    for (k, &o) in order[..count].iter().enumerate() {
        for r in 0..n {
            vecs[(r, k)] = eig.eigenvectors[(r, o)] / d[r].sqrt();
        }
    }
    (
        order[..count].iter().map(|&o| eig.eigenvalues[o]).collect(),
        vecs,
    )
}

/// From-scratch dense CEM: explicit projection matrix, dense patch normal
/// equations, dense Galerkin solve. `layers = None` uses the whole node set.
pub struct DenseCem {
    pub s: Vec<f64>,
    /// Columns are `φ_j^i` zero-extended, ordered by subgraph then index.
    pub phi: DMatrix<f64>,
    pub owner: Vec<usize>,
    pub next_eigenvalues: Vec<Option<f64>>,
    pub psi: DMatrix<f64>,
}

pub fn dense_cem(
    net: &SpatialNetwork,
    assignment: &[usize],
    nov: usize,
    layers: Option<usize>,
) -> DenseCem {
    let n = net.node_count();
    let a = dense_operator(net);
    let parts = assignment.iter().max().unwrap() + 1;
    let members: Vec<Vec<usize>> = (0..parts)
        .map(|p| (0..n).filter(|&x| assignment[x] == p).collect())
        .collect();
    let mut lumped = vec![0.0; n];
    for e in net.edges() {
        lumped[e.x] += e.weight / 2.0;
        lumped[e.y] += e.weight / 2.0;
    }

    let mut s = vec![0.0; n];
    let mut phi_cols: Vec<Vec<f64>> = Vec::new();
    let mut owner = Vec::new();
    let mut next_eigenvalues = Vec::new();
    for (p, nodes) in members.iter().enumerate() {
        let k = nodes.len();
        let mut ai = DMatrix::zeros(k, k);
        for (r, &x) in nodes.iter().enumerate() {
            ai[(r, r)] += net.masses()[x];
        }
        for e in net.edges() {
            if let (Some(r), Some(c)) = (
                nodes.iter().position(|&z| z == e.x),
                nodes.iter().position(|&z| z == e.y),
            ) {
                ai[(r, r)] += e.weight;
                ai[(c, c)] += e.weight;
                ai[(r, c)] -= e.weight;
                ai[(c, r)] -= e.weight;
            }
        }
        let w: Vec<f64> = nodes.iter().map(|&x| lumped[x] + net.masses()[x]).collect();
        let massless = nodes.iter().all(|&x| net.masses()[x] == 0.0);
        let idx = usize::from(massless);
        let c_po = if idx < k {
            let (mu, _) = brute_geig(&ai, &w, idx + 1);
            mu[idx].powf(-0.5)
        } else {
            1.0
        };
        let si: Vec<f64> = w.iter().map(|v| v / (c_po * c_po)).collect();
        for (r, &x) in nodes.iter().enumerate() {
            s[x] = si[r];
        }
        let (vals, vecs) = brute_geig(&ai, &si, nov + 1);
        let keep = nov.min(k);
        next_eigenvalues.push(vals.get(keep).copied());
        for j in 0..keep {
            let mut col = vec![0.0; n];
            for (r, &x) in nodes.iter().enumerate() {
                col[x] = vecs[(r, j)];
            }
            phi_cols.push(col);
            owner.push(p);
        }
        let _ = p;
    }
    let m = phi_cols.len();
    let phi = DMatrix::from_fn(n, m, |r, c| phi_cols[c][r]);
    let sd = DMatrix::from_diagonal(&DVector::from_column_slice(&s));
    // π = Φ Φᵀ S, and s(πu, πv) = uᵀ πᵀ S π v
    let pi = &phi * phi.transpose() * &sd;
    let penalty = pi.transpose() * &sd * &pi;

    // subgraph adjacency for the oversampling recursion
    let mut adj = vec![vec![false; parts]; parts];
    for e in net.edges() {
        adj[assignment[e.x]][assignment[e.y]] = true;
        adj[assignment[e.y]][assignment[e.x]] = true;
    }
    let mut psi = DMatrix::zeros(n, m);
    for c in 0..m {
        let i = owner[c];
        let mut inside = vec![false; parts];
        inside[i] = true;
        match layers {
            None => inside.iter_mut().for_each(|v| *v = true),
            Some(l) => {
                for _ in 0..l {
                    let prev = inside.clone();
                    for q in 0..parts {
                        if !prev[q] && (0..parts).any(|r| prev[r] && adj[r][q]) {
                            inside[q] = true;
                        }
                    }
                }
            }
        }
        let patch: Vec<usize> = (0..n).filter(|&x| inside[assignment[x]]).collect();
        let k = patch.len();
        let sys = DMatrix::from_fn(k, k, |r, q| {
            a[(patch[r], patch[q])] + penalty[(patch[r], patch[q])]
        });
        let target = pi.transpose() * &sd * phi.column(c);
        let rhs: Vec<f64> = patch.iter().map(|&x| target[x]).collect();
        let sol = dense_solve(&sys, &rhs);
        for (r, &x) in patch.iter().enumerate() {
            psi[(x, c)] = sol[r];
        }
    }
    DenseCem {
        s,
        phi,
        owner,
        next_eigenvalues,
        psi,
    }
}

/// Galerkin solution in the span of `psi`.
pub fn dense_galerkin(a: &DMatrix<f64>, psi: &DMatrix<f64>, f: &[f64]) -> Vec<f64> {
    let ac = psi.transpose() * a * psi;
    let bc = psi.transpose() * DVector::from_column_slice(f);
    let c = ac.lu().solve(&bc).expect("coarse system nonsingular");
    (psi * c).iter().copied().collect()
}
