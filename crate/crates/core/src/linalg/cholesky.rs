//! Envelope (profile) Cholesky factorization under a reverse Cuthill–McKee
//! ordering. Patch and subgraph matrices come from planar-ish graphs, where
//! RCM keeps the envelope close to `n^{3/2}`.

use std::collections::VecDeque;

use super::sparse::CsrMatrix;
use crate::error::{check_len, Error, Result};

#[derive(Clone, Debug)]
pub struct SparseCholesky {
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// `iperm[old] = new`
    iperm: Vec<usize>,
    /// First stored column of each (permuted) row.
    first: Vec<usize>,
    /// Offset of `L[i, first[i]]` in `values`; row `i` ends at `row_start[i + 1]` with the diagonal.
    row_start: Vec<usize>,
    values: Vec<f64>,
}

impl SparseCholesky {
    /// Factors an SPD matrix. Fails with [`Error::NotSpd`] naming the original
    /// row index of the first non-positive pivot.
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.dim();
        let perm = reverse_cuthill_mckee(a);
        let mut iperm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }

        let mut first: Vec<usize> = (0..n).collect();
        for (new, &old) in perm.iter().enumerate() {
            let (cols, _) = a.row(old);
            for &c in cols {
                let pc = iperm[c];
                if pc < first[new] {
                    first[new] = pc;
                }
            }
        }
        let mut row_start = Vec::with_capacity(n + 1);
        row_start.push(0);
        for i in 0..n {
            row_start.push(row_start[i] + (i - first[i] + 1));
        }
        let mut values = vec![0.0; row_start[n]];
        for (new, &old) in perm.iter().enumerate() {
            let (cols, vals) = a.row(old);
            for (&c, &v) in cols.iter().zip(vals) {
                let pc = iperm[c];
                if pc <= new {
                    values[row_start[new] + pc - first[new]] += v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            let base_i = row_start[i];
            for j in fi..i {
                let fj = first[j];
                let base_j = row_start[j];
                let k0 = fi.max(fj);
                let (head, tail) = values.split_at_mut(base_i);
                let row_j = &head[base_j + (k0 - fj)..base_j + (j - fj)];
                let row_i = &tail[k0 - fi..j - fi];
                let s: f64 = row_i.iter().zip(row_j).map(|(x, y)| x * y).sum();
                let ljj = head[base_j + (j - fj)];
                tail[j - fi] = (tail[j - fi] - s) / ljj;
            }
            let row_i = &values[base_i..base_i + (i - fi)];
            let s: f64 = row_i.iter().map(|x| x * x).sum();
            let d = values[base_i + (i - fi)] - s;
            if !(d > 0.0) {
                return Err(Error::NotSpd(format!(
                    "non-positive pivot {d:e} at row {} during Cholesky",
                    perm[i]
                )));
            }
            values[base_i + (i - fi)] = d.sqrt();
        }

        Ok(SparseCholesky {
            perm,
            iperm,
            first,
            row_start,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Number of stored factor entries.
    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), b.len())?;
        let mut work: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        self.solve_permuted_in_place(&mut work);
        let mut x = vec![0.0; b.len()];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = work[new];
        }
        Ok(x)
    }

    fn solve_permuted_in_place(&self, y: &mut [f64]) {
        let n = y.len();
        // skip the leading zero block of sparse right-hand sides
        let start = y.iter().position(|&v| v != 0.0).unwrap_or(n);
        for i in start..n {
            let fi = self.first[i].max(start);
            let base = self.row_start[i] - self.first[i];
            let s: f64 = (fi..i).map(|k| self.values[base + k] * y[k]).sum();
            y[i] = (y[i] - s) / self.values[base + i];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let base = self.row_start[i] - fi;
            y[i] /= self.values[base + i];
            let yi = y[i];
            if yi != 0.0 {
                for (yk, l) in y[fi..i].iter_mut().zip(&self.values[base + fi..base + i]) {
                    *yk -= l * yi;
                }
            }
        }
    }

    /// Permuted position of an original index.
    pub fn position(&self, old: usize) -> usize {
        self.iperm[old]
    }
}

/// Reverse Cuthill–McKee ordering of the matrix graph, component by component,
/// each started from a pseudo-peripheral node. Returns `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.dim();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut neigh = Vec::new();

    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        let start = pseudo_peripheral(a, seed, &degree);
        let mut queue = VecDeque::new();
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            neigh.clear();
            neigh.extend(a.row(v).0.iter().copied().filter(|&w| !visited[w]));
            neigh.sort_by_key(|&w| (degree[w], w));
            for &w in &neigh {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn pseudo_peripheral(a: &CsrMatrix, seed: usize, degree: &[usize]) -> usize {
    let mut current = seed;
    let mut ecc = 0;
    for _ in 0..8 {
        let levels = bfs_levels(a, current);
        let max_level = *levels
            .iter()
            .filter(|&&l| l != usize::MAX)
            .max()
            .unwrap_or(&0);
        if max_level <= ecc && current != seed {
            break;
        }
        ecc = max_level;
        let next = (0..levels.len())
            .filter(|&v| levels[v] == max_level)
            .min_by_key(|&v| (degree[v], v))
            .unwrap_or(current);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

fn bfs_levels(a: &CsrMatrix, start: usize) -> Vec<usize> {
    let mut level = vec![usize::MAX; a.dim()];
    let mut queue = VecDeque::new();
    level[start] = 0;
    queue.push_back(start);
    while let Some(v) = queue.pop_front() {
        for &w in a.row(v).0 {
            if level[w] == usize::MAX {
                level[w] = level[v] + 1;
                queue.push_back(w);
            }
        }
    }
    level
}
