use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cholesky::SparseCholesky;
use super::dense::{canonicalize, GenEigen};
use super::sparse::{dot, norm2, CsrMatrix};
use crate::error::{Error, Result};

/// Smallest `count` eigenpairs of `A v = λ diag(d) v` by shift-invert Lanczos
/// with full reorthogonalization.
///
/// The shift `sigma` must lie strictly below the smallest eigenvalue so that
/// `A - σ diag(d)` is SPD; use a small negative shift for singular `A`.
/// Converged pairs satisfy the normwise backward-error test
/// `‖A v - λ D v‖ <= tol · (‖A‖ + |λ| ‖D‖) ‖v‖` with `∞`-norms of the matrices.
pub fn lanczos_smallest_geig(
    a: &CsrMatrix,
    d: &[f64],
    count: usize,
    sigma: f64,
    tol: f64,
) -> Result<GenEigen> {
    let n = a.dim();
    if d.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: d.len(),
        });
    }
    if let Some(k) = d.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "weight entry {k} is not positive"
        )));
    }
    let count = count.min(n);
    if count == 0 {
        return Ok(GenEigen {
            values: vec![],
            vectors: DMatrix::zeros(n, 0),
        });
    }

    let shifted = if sigma == 0.0 {
        a.clone()
    } else {
        let t: Vec<(usize, usize, f64)> = a
            .triplets()
            .chain((0..n).map(|i| (i, i, -sigma * d[i])))
            .collect();
        CsrMatrix::from_triplets(n, &t)
    };
    let chol = SparseCholesky::factor(&shifted)?;
    let sqrt_d: Vec<f64> = d.iter().map(|x| x.sqrt()).collect();
    // T = D^{1/2} (A - σD)^{-1} D^{1/2}, eigenvalues 1 / (λ - σ)
    let apply = |x: &[f64]| -> Result<Vec<f64>> {
        let rhs: Vec<f64> = x.iter().zip(&sqrt_d).map(|(v, s)| v * s).collect();
        let y = chol.solve(&rhs)?;
        Ok(y.iter().zip(&sqrt_d).map(|(v, s)| v * s).collect())
    };

    let a_norm = (0..n)
        .map(|r| a.row(r).1.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let d_norm = d.iter().fold(0.0f64, |m, &x| m.max(x));

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_1a2c);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut q: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    let qn = norm2(&q);
    q.iter_mut().for_each(|v| *v /= qn);

    let mut target_steps = (2 * count + 20).min(n);
    loop {
        while basis.len() < target_steps {
            let mut w = apply(&q)?;
            basis.push(q.clone());
            let a_k = dot(&w, &q);
            alpha.push(a_k);
            // full reorthogonalization, twice
            for _ in 0..2 {
                for v in &basis {
                    let c = dot(&w, v);
                    w.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
                }
            }
            let b_k = norm2(&w);
            let scale = alpha.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if basis.len() == n {
                break;
            }
            if b_k <= 1e-12 * scale {
                // invariant subspace found; continue from a fresh orthogonal direction
                beta.push(0.0);
                let mut r: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
                for _ in 0..2 {
                    for v in &basis {
                        let c = dot(&r, v);
                        r.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
                    }
                }
                let rn = norm2(&r);
                q = r.into_iter().map(|x| x / rn).collect();
            } else {
                beta.push(b_k);
                q = w.into_iter().map(|x| x / b_k).collect();
            }
        }

        let m = basis.len();
        let mut t = DMatrix::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = alpha[i];
            if i + 1 < m {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = SymmetricEigen::try_new(t, f64::EPSILON, 0)
            .ok_or_else(|| Error::Eigen("tridiagonal eigensolver failed".into()))?;
        let mut order: Vec<usize> = (0..m).collect();
        // largest θ first
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let wanted = &order[..count];

        let mut values = Vec::with_capacity(count);
        let mut vectors = DMatrix::zeros(n, count);
        let mut converged = true;
        for (out, &k) in wanted.iter().enumerate() {
            let theta = eig.eigenvalues[k];
            let mut w = vec![0.0; n];
            for (i, v) in basis.iter().enumerate() {
                let c = eig.eigenvectors[(i, k)];
                w.iter_mut().zip(v).for_each(|(x, y)| *x += c * y);
            }
            let lambda = sigma + 1.0 / theta;
            let v: Vec<f64> = w.iter().zip(&sqrt_d).map(|(x, s)| x / s).collect();
            let av = a.mul_vec(&v)?;
            let res: Vec<f64> = av
                .iter()
                .zip(&v)
                .zip(d)
                .map(|((x, y), dd)| x - lambda * dd * y)
                .collect();
            if norm2(&res) > tol * (a_norm + lambda.abs() * d_norm) * norm2(&v) {
                converged = false;
            }
            values.push(lambda);
            for r in 0..n {
                vectors[(r, out)] = v[r];
            }
        }
        if converged || m == n {
            if !converged {
                log::warn!("Lanczos reached full dimension {n} without meeting tolerance {tol:e}");
            }
            let mut out = GenEigen { values, vectors };
            canonicalize(&mut out, d);
            return Ok(out);
        }
        target_steps = (target_steps * 2).min(n);
    }
}
