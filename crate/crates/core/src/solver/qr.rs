//! Row-oriented Givens QR (George-Heath).
//!
//! Rows of `A Pᵀ` are merged one at a time into an upper-triangular `R`. A
//! symbolic pass fixes the final pattern of every row of `R` and the exact
//! sequence of rotations each input row goes through; the numeric pass replays
//! that plan. The ordering and symbolic pass depend only on the sparsity
//! pattern and can be reused while the pattern is unchanged.

use std::ops::Range;
use std::sync::Arc;
use std::time::Instant;

use super::{Ordering, SolverConfig, SolverError};
use crate::sparse::{rcm_ordering, CsrMatrix, Permutation};

/// One plane rotation of the work row against row `r_row` of `R`:
/// `(r, w) <- (c r + s w, -s r + c w)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Givens {
    pub r_row: usize,
    pub c: f64,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct RowPlan {
    src: usize,
    /// Range into `QrSymbolic::merge_targets`.
    merges: Range<usize>,
    /// Row of R this input row ends up in; `None` if annihilated.
    land: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
struct QrSymbolic {
    col_perm: Permutation,
    /// Final column pattern (permuted indices) of each row of R; starts at the diagonal.
    r_pattern: Vec<Vec<usize>>,
    plans: Vec<RowPlan>,
    merge_targets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
struct AppliedRow {
    src: usize,
    rotations: Range<usize>,
    land: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QrFactors {
    /// Column ordering: column `k` of `A Pᵀ` is column `col_perm[k]` of `A`.
    pub col_perm: Permutation,
    /// Upper triangular factor in permuted column space.
    pub r: CsrMatrix,
    /// Rotations in application order.
    pub rotations: Vec<Givens>,
    pub pattern_fingerprint: u64,
    /// Nanoseconds spent on ordering and symbolic analysis (0 when reused).
    pub ordering_ns: u64,
    applied: Vec<AppliedRow>,
    symbolic: Arc<QrSymbolic>,
}

fn merge_sorted(a: &[usize], b: &[usize], out: &mut Vec<usize>) {
    out.clear();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
}

fn analyze(a: &CsrMatrix, col_perm: Permutation) -> Result<QrSymbolic, SolverError> {
    let n = a.nrows;
    let inv = col_perm.inverse();
    let inv = inv.as_slice();

    let row_patterns: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut cols: Vec<usize> = a.row(i).0.iter().map(|&c| inv[c]).collect();
            cols.sort_unstable();
            cols
        })
        .collect();
    // Rows by leftmost permuted column, then original index.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (row_patterns[i].first().copied().unwrap_or(usize::MAX), i));

    let mut r_pattern: Vec<Option<Vec<usize>>> = vec![None; n];
    let mut plans = Vec::with_capacity(n);
    let mut merge_targets = Vec::new();
    let mut work = Vec::new();
    let mut merged = Vec::new();
    for &src in &order {
        work.clear();
        work.extend_from_slice(&row_patterns[src]);
        let start = merge_targets.len();
        let mut land = None;
        while let Some(&j) = work.first() {
            match &mut r_pattern[j] {
                slot @ None => {
                    *slot = Some(work.clone());
                    land = Some(j);
                    break;
                }
                Some(rj) => {
                    merge_sorted(rj, &work, &mut merged);
                    rj.clone_from(&merged);
                    work.clear();
                    work.extend_from_slice(&merged[1..]);
                    merge_targets.push(j);
                }
            }
        }
        plans.push(RowPlan {
            src,
            merges: start..merge_targets.len(),
            land,
        });
    }

    let r_pattern = r_pattern
        .into_iter()
        .enumerate()
        .map(|(j, p)| p.ok_or(SolverError::Singular { pivot: j }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(QrSymbolic {
        col_perm,
        r_pattern,
        plans,
        merge_targets,
    })
}

/// Factorizes `A Pᵀ = Q R`.
///
/// With `reuse`, its column ordering and symbolic analysis are used as-is,
/// provided the sparsity pattern of `a` is the one they were computed for.
pub fn qr_factorize(a: &CsrMatrix, config: &SolverConfig, reuse: Option<&QrFactors>) -> Result<QrFactors, SolverError> {
    if !a.is_square() {
        return Err(SolverError::NotSquare {
            nrows: a.nrows,
            ncols: a.ncols,
        });
    }
    let n = a.nrows;
    let fingerprint = a.pattern_fingerprint();

    let (symbolic, ordering_ns) = match reuse {
        Some(prev) => {
            if prev.pattern_fingerprint != fingerprint {
                return Err(SolverError::ReuseRejected {
                    expected: prev.pattern_fingerprint,
                    found: fingerprint,
                });
            }
            (Arc::clone(&prev.symbolic), 0)
        }
        None => {
            let start = Instant::now();
            let col_perm = match config.ordering {
                Ordering::Rcm => rcm_ordering(a)?,
                Ordering::None => Permutation::identity(n),
            };
            let symbolic = analyze(a, col_perm)?;
            (Arc::new(symbolic), start.elapsed().as_nanos() as u64)
        }
    };

    let inv = symbolic.col_perm.inverse();
    let inv = inv.as_slice();
    let mut r_vals: Vec<Vec<f64>> = symbolic.r_pattern.iter().map(|p| vec![0.0; p.len()]).collect();
    let mut w = vec![0.0; n];
    let mut rotations = Vec::new();
    let mut applied = Vec::with_capacity(n);

    for plan in &symbolic.plans {
        let (cols, vals) = a.row(plan.src);
        for (&c, &v) in cols.iter().zip(vals) {
            w[inv[c]] = v;
        }
        let rot_start = rotations.len();
        let mut last = None;
        for &j in &symbolic.merge_targets[plan.merges.clone()] {
            let pattern = &symbolic.r_pattern[j];
            let rj = &mut r_vals[j];
            let (diag, b) = (rj[0], w[j]);
            if b != 0.0 {
                let h = diag.hypot(b);
                let (c, s) = (diag / h, b / h);
                for (k, &col) in pattern.iter().enumerate() {
                    let (rv, wv) = (rj[k], w[col]);
                    rj[k] = c * rv + s * wv;
                    w[col] = -s * rv + c * wv;
                }
                rj[0] = h;
                rotations.push(Givens { r_row: j, c, s });
            }
            w[j] = 0.0;
            last = Some(j);
        }
        match plan.land {
            Some(j) => {
                for (k, &col) in symbolic.r_pattern[j].iter().enumerate() {
                    r_vals[j][k] = w[col];
                    w[col] = 0.0;
                }
            }
            None => {
                if let Some(j) = last {
                    for &col in &symbolic.r_pattern[j] {
                        w[col] = 0.0;
                    }
                }
            }
        }
        applied.push(AppliedRow {
            src: plan.src,
            rotations: rot_start..rotations.len(),
            land: plan.land,
        });
    }

    let scale = a.max_abs();
    let pivot_tol = f64::EPSILON * scale;
    for (j, vals) in r_vals.iter().enumerate() {
        if !(vals[0].abs() > pivot_tol) {
            return Err(SolverError::Singular { pivot: j });
        }
    }

    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let nnz: usize = symbolic.r_pattern.iter().map(Vec::len).sum();
    let mut col_idx = Vec::with_capacity(nnz);
    let mut vals = Vec::with_capacity(nnz);
    for (pattern, rv) in symbolic.r_pattern.iter().zip(&r_vals) {
        col_idx.extend_from_slice(pattern);
        vals.extend_from_slice(rv);
        row_ptr.push(col_idx.len());
    }
    let r = CsrMatrix {
        nrows: n,
        ncols: n,
        row_ptr,
        col_idx,
        vals,
    };

    Ok(QrFactors {
        col_perm: symbolic.col_perm.clone(),
        r,
        rotations,
        pattern_fingerprint: fingerprint,
        ordering_ns,
        applied,
        symbolic,
    })
}

impl QrFactors {
    pub fn n(&self) -> usize {
        self.r.nrows
    }

    /// `Qᵀ b`, indexed by rows of R.
    pub fn apply_qt(&self, b: &[f64]) -> Result<Vec<f64>, SolverError> {
        let n = self.n();
        if b.len() != n {
            return Err(SolverError::DimensionMismatch {
                expected: n,
                found: b.len(),
            });
        }
        let mut d = vec![0.0; n];
        for row in &self.applied {
            let mut beta = b[row.src];
            for g in &self.rotations[row.rotations.clone()] {
                let dj = d[g.r_row];
                d[g.r_row] = g.c * dj + g.s * beta;
                beta = -g.s * dj + g.c * beta;
            }
            if let Some(j) = row.land {
                d[j] = beta;
            }
        }
        Ok(d)
    }
}

/// Solves `A x = b` from a factorization.
pub fn qr_solve(f: &QrFactors, b: &[f64]) -> Result<Vec<f64>, SolverError> {
    let n = f.n();
    let mut y = f.apply_qt(b)?;
    for j in (0..n).rev() {
        let (cols, vals) = f.r.row(j);
        let mut s = y[j];
        for (&c, &v) in cols[1..].iter().zip(&vals[1..]) {
            s -= v * y[c];
        }
        y[j] = s / vals[0];
    }
    let mut x = vec![0.0; n];
    for (k, &old) in f.col_perm.as_slice().iter().enumerate() {
        x[old] = y[k];
    }
    Ok(x)
}
