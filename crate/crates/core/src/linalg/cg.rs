use super::sparse::{dot, norm2, CsrMatrix, LinearOperator};
use crate::error::{check_len, Error, Result};

#[derive(Clone, Debug, Default)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
    pub history: Vec<f64>,
}

#[derive(Clone, Debug)]
pub enum Preconditioner {
    Identity,
    /// Inverse of the operator diagonal.
    Jacobi(Vec<f64>),
    Ic0(Ic0),
}

impl Preconditioner {
    pub fn jacobi(diagonal: &[f64]) -> Result<Self> {
        if let Some(k) = diagonal.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::NotSpd(format!(
                "non-positive diagonal entry {} at row {k}",
                diagonal[k]
            )));
        }
        Ok(Preconditioner::Jacobi(
            diagonal.iter().map(|d| 1.0 / d).collect(),
        ))
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            Preconditioner::Identity => z.copy_from_slice(r),
            Preconditioner::Jacobi(inv) => {
                for ((z, r), d) in z.iter_mut().zip(r).zip(inv) {
                    *z = r * d;
                }
            }
            Preconditioner::Ic0(f) => f.solve_into(r, z),
        }
    }
}

/// Zero fill-in incomplete Cholesky factor `L Lᵀ ≈ A`, lower triangle kept by rows.
#[derive(Clone, Debug)]
pub struct Ic0 {
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl Ic0 {
    /// Factors `A + shift·diag(A)`, growing the shift until every pivot is positive.
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let n = a.dim();
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut base = Vec::new();
        for r in 0..n {
            let (cols, vals) = a.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                if c <= r {
                    col_idx.push(c);
                    base.push(v);
                }
            }
            if col_idx.last() != Some(&r) {
                return Err(Error::NotSpd(format!("missing diagonal entry in row {r}")));
            }
            row_ptr.push(col_idx.len());
        }
        let mut shift = 0.0;
        for _ in 0..30 {
            let mut values = base.clone();
            if shift > 0.0 {
                for r in 0..n {
                    values[row_ptr[r + 1] - 1] *= 1.0 + shift;
                }
            }
            if Self::factor_in_place(&row_ptr, &col_idx, &mut values) {
                return Ok(Ic0 {
                    row_ptr,
                    col_idx,
                    values,
                });
            }
            shift = if shift == 0.0 { 1e-3 } else { shift * 2.0 };
        }
        Err(Error::NotSpd("incomplete Cholesky breakdown".into()))
    }

    fn factor_in_place(row_ptr: &[usize], col_idx: &[usize], values: &mut [f64]) -> bool {
        let n = row_ptr.len() - 1;
        for r in 0..n {
            let (start, end) = (row_ptr[r], row_ptr[r + 1]);
            for k in start..end {
                let c = col_idx[k];
                // sparse dot of row r and row c over columns < c
                let mut s = values[k];
                let (mut p, mut q) = (start, row_ptr[c]);
                let q_end = row_ptr[c + 1] - 1;
                while p < k && q < q_end {
                    match col_idx[p].cmp(&col_idx[q]) {
                        std::cmp::Ordering::Less => p += 1,
                        std::cmp::Ordering::Greater => q += 1,
                        std::cmp::Ordering::Equal => {
                            s -= values[p] * values[q];
                            p += 1;
                            q += 1;
                        }
                    }
                }
                if c == r {
                    if !(s > 0.0) {
                        return false;
                    }
                    values[k] = s.sqrt();
                } else {
                    values[k] = s / values[row_ptr[c + 1] - 1];
                }
            }
        }
        true
    }

    fn solve_into(&self, b: &[f64], x: &mut [f64]) {
        let n = self.row_ptr.len() - 1;
        x.copy_from_slice(b);
        for r in 0..n {
            let (start, end) = (self.row_ptr[r], self.row_ptr[r + 1] - 1);
            let mut s = x[r];
            for k in start..end {
                s -= self.values[k] * x[self.col_idx[k]];
            }
            x[r] = s / self.values[end];
        }
        for r in (0..n).rev() {
            let (start, end) = (self.row_ptr[r], self.row_ptr[r + 1] - 1);
            x[r] /= self.values[end];
            let xr = x[r];
            for k in start..end {
                x[self.col_idx[k]] -= self.values[k] * xr;
            }
        }
    }
}

/// Preconditioned conjugate gradients on an SPD operator.
///
/// Stops when `‖b - Ax‖ / ‖b‖ <= tol`; a zero right-hand side returns zero
/// after no iterations.
pub fn cg_solve<A: LinearOperator + ?Sized>(
    op: &A,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    precond: &Preconditioner,
) -> Result<(Vec<f64>, CgStats)> {
    let n = op.dim();
    check_len(n, b.len())?;
    let b_norm = norm2(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok((
            x,
            CgStats {
                iterations: 0,
                relative_residual: 0.0,
                history: vec![0.0],
            },
        ));
    }

    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut history = vec![1.0];

    for it in 1..=max_iter {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NotSpd(format!(
                "pᵀAp = {pap:e} at CG iteration {it}"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rel = norm2(&r) / b_norm;
        history.push(rel);
        if rel <= tol {
            return Ok((
                x,
                CgStats {
                    iterations: it,
                    relative_residual: rel,
                    history,
                },
            ));
        }
        precond.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }

    let tail = history[history.len().saturating_sub(5)..].to_vec();
    Err(Error::NotConverged {
        iterations: max_iter,
        residual: *history.last().unwrap(),
        history_tail: tail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn path3() -> CsrMatrix {
        // L + M for the path 0-1-2 with unit weights and unit masses
        CsrMatrix::from_dense(&DMatrix::from_row_slice(
            3,
            3,
            &[2.0, -1.0, 0.0, -1.0, 3.0, -1.0, 0.0, -1.0, 2.0],
        ))
    }

    #[test]
    fn identity_converges_in_one_step() {
        let a = CsrMatrix::identity(4);
        let b = [1.0, -2.0, 3.0, 0.5];
        let (x, stats) = cg_solve(&a, &b, 1e-10, 10, &Preconditioner::Identity).unwrap();
        assert_eq!(stats.iterations, 1);
        for (xi, bi) in x.iter().zip(&b) {
            assert!((xi - bi).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let (x, stats) =
            cg_solve(&path3(), &[0.0; 3], 1e-10, 10, &Preconditioner::Identity).unwrap();
        assert_eq!(stats.iterations, 0);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn path3_matches_dense_solve() {
        let a = path3();
        let dense = a.to_dense();
        let expect = dense
            .cholesky()
            .unwrap()
            .solve(&DVector::from_element(3, 1.0));
        for pc in [
            Preconditioner::Identity,
            Preconditioner::jacobi(&a.diagonal()).unwrap(),
            Preconditioner::Ic0(Ic0::new(&a).unwrap()),
        ] {
            let (x, _) = cg_solve(&a, &[1.0; 3], 1e-12, 50, &pc).unwrap();
            for i in 0..3 {
                assert!((x[i] - expect[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn maxit_exceeded_reports_history() {
        let a = CsrMatrix::from_dense(&DMatrix::from_diagonal(&DVector::from_vec(vec![
            1.0, 10.0, 100.0,
        ])));
        let err = cg_solve(&a, &[1.0, 1.0, 1.0], 1e-14, 1, &Preconditioner::Identity).unwrap_err();
        match err {
            Error::NotConverged {
                iterations,
                history_tail,
                ..
            } => {
                assert_eq!(iterations, 1);
                assert!(!history_tail.is_empty());
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn ic0_is_exact_on_tridiagonal() {
        // no fill-in for tridiagonal matrices, so IC(0) is the exact factor
        let a = path3();
        let ic = Ic0::new(&a).unwrap();
        let mut x = [0.0; 3];
        ic.solve_into(&[1.0, 2.0, 3.0], &mut x);
        let ax = a.mul_vec(&x).unwrap();
        for (v, b) in ax.iter().zip([1.0, 2.0, 3.0]) {
            assert!((v - b).abs() < 1e-13);
        }
    }
}
