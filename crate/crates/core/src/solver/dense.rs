use super::{SolverError, DEFAULT_DENSE_CAP};
use crate::sparse::CsrMatrix;

/// Partial-pivoting LU on a dense copy of `a`, with the default size cap.
pub fn dense_lu_solve(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>, SolverError> {
    dense_lu_solve_capped(a, b, DEFAULT_DENSE_CAP)
}

pub fn dense_lu_solve_capped(a: &CsrMatrix, b: &[f64], cap: usize) -> Result<Vec<f64>, SolverError> {
    if !a.is_square() {
        return Err(SolverError::NotSquare {
            nrows: a.nrows,
            ncols: a.ncols,
        });
    }
    let n = a.nrows;
    if n > cap {
        return Err(SolverError::SizeCap { n, cap });
    }
    if b.len() != n {
        return Err(SolverError::DimensionMismatch {
            expected: n,
            found: b.len(),
        });
    }

    // Row-major n×n
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        let (cols, vals) = a.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            m[i * n + c] = v;
        }
    }
    let mut x = b.to_vec();
    let pivot_tol = n as f64 * f64::EPSILON * a.max_abs();

    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| m[i * n + k].abs().total_cmp(&m[j * n + k].abs()))
            .unwrap();
        if !(m[p * n + k].abs() > pivot_tol) {
            return Err(SolverError::Singular { pivot: k });
        }
        if p != k {
            for j in 0..n {
                m.swap(k * n + j, p * n + j);
            }
            x.swap(k, p);
        }
        let pivot = m[k * n + k];
        let (top, bottom) = m.split_at_mut((k + 1) * n);
        let row_k = &top[k * n..];
        for (r, row) in bottom.chunks_exact_mut(n).enumerate() {
            let f = row[k] / pivot;
            if f == 0.0 {
                continue;
            }
            row[k] = f;
            for j in k + 1..n {
                row[j] -= f * row_k[j];
            }
            x[k + 1 + r] -= f * x[k];
        }
    }
    for k in (0..n).rev() {
        let row = &m[k * n..(k + 1) * n];
        let s: f64 = (k + 1..n).map(|j| row[j] * x[j]).sum();
        x[k] = (x[k] - s) / row[k];
    }
    Ok(x)
}
