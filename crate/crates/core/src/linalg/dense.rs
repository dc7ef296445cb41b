use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Smallest eigenpairs of `A v = λ diag(d) v`.
#[derive(Clone, Debug)]
pub struct GenEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// One column per eigenvalue, `d`-orthonormal.
    pub vectors: DMatrix<f64>,
}

/// Relative gap below which neighbouring eigenvalues are treated as one cluster.
pub const CLUSTER_GAP: f64 = 1e-12;

/// Dense generalized symmetric eigensolver for a diagonal right-hand side,
/// using the exact reduction `D^{-1/2} A D^{-1/2}`.
///
/// Returns the `count` smallest pairs (all pairs when `count >= n`).
pub fn dense_sym_geig(a: &DMatrix<f64>, d: &[f64], count: usize) -> Result<GenEigen> {
    let n = a.nrows();
    if a.ncols() != n || d.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: d.len(),
        });
    }
    if let Some(k) = d.iter().position(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "weight diagonal must be strictly positive, entry {k} is {}",
            d[k]
        )));
    }
    let count = count.min(n);
    let inv_sqrt: Vec<f64> = d.iter().map(|x| 1.0 / x.sqrt()).collect();
    let mut b = DMatrix::from_fn(n, n, |r, c| a[(r, c)] * inv_sqrt[r] * inv_sqrt[c]);
    // symmetrize against roundoff in the input
    for r in 0..n {
        for c in 0..r {
            let v = 0.5 * (b[(r, c)] + b[(c, r)]);
            b[(r, c)] = v;
            b[(c, r)] = v;
        }
    }
    let eig = SymmetricEigen::try_new(b, f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen("symmetric QR iteration did not converge".into()))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[i]
            .total_cmp(&eig.eigenvalues[j])
            .then(i.cmp(&j))
    });
    let values: Vec<f64> = order[..count].iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::zeros(n, count);
    for (out, &k) in order[..count].iter().enumerate() {
        for r in 0..n {
            vectors[(r, out)] = eig.eigenvectors[(r, k)] * inv_sqrt[r];
        }
    }
    let mut result = GenEigen { values, vectors };
    canonicalize(&mut result, d);
    Ok(result)
}

/// Re-orthonormalizes degenerate clusters by modified Gram–Schmidt in the
/// `d` inner product (columns in index order) and fixes signs so the entry of
/// largest magnitude in each column is positive.
pub fn canonicalize(eig: &mut GenEigen, d: &[f64]) {
    let count = eig.values.len();
    let scale = eig
        .values
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let mut start = 0;
    while start < count {
        let mut end = start + 1;
        while end < count && (eig.values[end] - eig.values[end - 1]).abs() <= CLUSTER_GAP * scale {
            end += 1;
        }
        for j in start..end {
            for k in start..j {
                let proj = weighted_dot(&eig.vectors, j, k, d);
                for r in 0..eig.vectors.nrows() {
                    let v = eig.vectors[(r, k)];
                    eig.vectors[(r, j)] -= proj * v;
                }
            }
            let norm = weighted_dot(&eig.vectors, j, j, d).sqrt();
            if norm > 0.0 {
                eig.vectors.column_mut(j).scale_mut(1.0 / norm);
            }
        }
        start = end;
    }
    for j in 0..count {
        let col = eig.vectors.column(j);
        let mut best = 0;
        for r in 0..col.len() {
            if col[r].abs() > col[best].abs() * (1.0 + 1e-12) {
                best = r;
            }
        }
        if !col.is_empty() && col[best] < 0.0 {
            eig.vectors.column_mut(j).neg_mut();
        }
    }
}

fn weighted_dot(m: &DMatrix<f64>, i: usize, j: usize, d: &[f64]) -> f64 {
    (0..m.nrows()).map(|r| m[(r, i)] * m[(r, j)] * d[r]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_closed_form() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 8.0]));
        let e = dense_sym_geig(&a, &[2.0, 2.0], 2).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14);
        assert!((e.values[1] - 4.0).abs() < 1e-14);
        // d-orthonormal: 2 v² = 1
        assert!((e.vectors[(0, 0)] - 0.5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn zero_matrix_gives_orthonormal_basis() {
        let a = DMatrix::zeros(3, 3);
        let d = [1.0, 2.0, 3.0];
        let e = dense_sym_geig(&a, &d, 3).unwrap();
        assert!(e.values.iter().all(|v| v.abs() < 1e-15));
        let dm = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&d));
        let gram = e.vectors.transpose() * dm * &e.vectors;
        assert!((gram - DMatrix::identity(3, 3)).amax() < 1e-13);
    }

    #[test]
    fn unit_weight_is_standard_problem() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0]);
        let e = dense_sym_geig(&a, &[1.0; 3], 3).unwrap();
        let s = SymmetricEigen::new(a.clone());
        let mut std: Vec<f64> = s.eigenvalues.iter().copied().collect();
        std.sort_by(f64::total_cmp);
        for (x, y) in e.values.iter().zip(&std) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn rejects_non_positive_weights() {
        let a = DMatrix::identity(2, 2);
        assert!(matches!(
            dense_sym_geig(&a, &[1.0, 0.0], 1),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn sign_convention_is_positive_peak() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let e = dense_sym_geig(&a, &[1.0, 1.0], 2).unwrap();
        for j in 0..2 {
            let c = e.vectors.column(j);
            let peak = if c[0].abs() >= c[1].abs() { c[0] } else { c[1] };
            assert!(peak > 0.0);
        }
    }
}
