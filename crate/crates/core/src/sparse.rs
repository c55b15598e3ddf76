//! COO/CSR storage, matrix-vector products and bandwidth-reducing ordering.

use std::collections::hash_map::DefaultHasher;
use std::collections::VecDeque;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SparseError {
    #[error("entry ({row}, {col}) outside a {nrows}x{ncols} matrix")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        nrows: usize,
        ncols: usize,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix must be square, got {nrows}x{ncols}")]
    NotSquare { nrows: usize, ncols: usize },
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("malformed CSR: {0}")]
    MalformedCsr(String),
    #[error("matrix market: {0}")]
    MatrixMarket(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Rows at or above this size use the parallel SpMV path.
const PAR_SPMV_MIN_ROWS: usize = 4096;
const SPMV_ROW_BLOCK: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct CooMatrix {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl CooMatrix {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::with_capacity(cap),
        }
    }

    pub fn from_triplets(nrows: usize, ncols: usize, entries: Vec<(usize, usize, f64)>) -> Result<Self, SparseError> {
        if let Some(&(row, col, _)) = entries.iter().find(|&&(r, c, _)| r >= nrows || c >= ncols) {
            return Err(SparseError::IndexOutOfRange { row, col, nrows, ncols });
        }
        Ok(Self { nrows, ncols, entries })
    }

    pub fn push(&mut self, row: usize, col: usize, val: f64) -> Result<(), SparseError> {
        if row >= self.nrows || col >= self.ncols {
            return Err(SparseError::IndexOutOfRange {
                row,
                col,
                nrows: self.nrows,
                ncols: self.ncols,
            });
        }
        self.entries.push((row, col, val));
        Ok(())
    }

    /// Appends another buffer's entries after this one's, preserving order.
    pub fn extend_from(&mut self, other: &CooMatrix) {
        debug_assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        self.entries.extend_from_slice(&other.entries);
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn to_csr(&self) -> CsrMatrix {
        coo_to_csr(self)
    }
}

/// Compressed sparse row matrix with strictly increasing columns per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

/// Compresses triplets, summing duplicates in (row, col, input order).
pub fn coo_to_csr(a: &CooMatrix) -> CsrMatrix {
    let n = a.nrows;
    // Counting sort by row keeps input order within a row.
    let mut counts = vec![0usize; n + 1];
    for &(r, _, _) in &a.entries {
        counts[r + 1] += 1;
    }
    for i in 0..n {
        counts[i + 1] += counts[i];
    }
    let mut next = counts.clone();
    let mut by_row = vec![(0usize, 0.0f64); a.entries.len()];
    for &(r, c, v) in &a.entries {
        by_row[next[r]] = (c, v);
        next[r] += 1;
    }

    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(a.entries.len());
    let mut vals = Vec::with_capacity(a.entries.len());
    row_ptr.push(0);
    for r in 0..n {
        let row = &mut by_row[counts[r]..counts[r + 1]];
        row.sort_by_key(|&(c, _)| c);
        let mut k = 0;
        while k < row.len() {
            let c = row[k].0;
            let mut sum = row[k].1;
            k += 1;
            while k < row.len() && row[k].0 == c {
                sum += row[k].1;
                k += 1;
            }
            col_idx.push(c);
            vals.push(sum);
        }
        row_ptr.push(col_idx.len());
    }
    CsrMatrix {
        nrows: n,
        ncols: a.ncols,
        row_ptr,
        col_idx,
        vals,
    }
}

impl CsrMatrix {
    /// Validates raw CSR arrays.
    pub fn from_parts(
        nrows: usize,
        ncols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        vals: Vec<f64>,
    ) -> Result<Self, SparseError> {
        let bad = |m: &str| Err(SparseError::MalformedCsr(m.to_string()));
        if row_ptr.len() != nrows + 1 || row_ptr[0] != 0 {
            return bad("row_ptr must have nrows+1 entries starting at 0");
        }
        if row_ptr[nrows] != col_idx.len() || col_idx.len() != vals.len() {
            return bad("row_ptr[nrows] must equal nnz");
        }
        for r in 0..nrows {
            if row_ptr[r] > row_ptr[r + 1] {
                return bad("row_ptr must be nondecreasing");
            }
            let cols = &col_idx[row_ptr[r]..row_ptr[r + 1]];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return bad("columns must be strictly increasing per row");
            }
            if cols.last().is_some_and(|&c| c >= ncols) {
                return bad("column index out of range");
            }
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            vals,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut coo = CooMatrix::new(rows.len(), ncols);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    coo.entries.push((i, j, v));
                }
            }
        }
        coo_to_csr(&coo)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, row) in d.iter_mut().enumerate() {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                row[self.col_idx[k]] = self.vals[k];
            }
        }
        d
    }

    pub fn to_coo(&self) -> CooMatrix {
        let mut coo = CooMatrix::with_capacity(self.nrows, self.ncols, self.nnz());
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                coo.entries.push((i, self.col_idx[k], self.vals[k]));
            }
        }
        coo
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn is_square(&self) -> bool {
        self.nrows == self.ncols
    }

    /// nnz / (nrows * ncols), as a fraction.
    pub fn sparsity(&self) -> f64 {
        self.nnz() as f64 / (self.nrows as f64 * self.ncols as f64)
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[range.clone()], &self.vals[range])
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).ok().map(|k| vals[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols))
            .map(|i| self.get(i, i).unwrap_or(0.0))
            .collect()
    }

    /// Largest absolute stored value.
    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut coo = CooMatrix::with_capacity(self.ncols, self.nrows, self.nnz());
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                coo.entries.push((self.col_idx[k], i, self.vals[k]));
            }
        }
        coo_to_csr(&coo)
    }

    pub fn same_pattern(&self, other: &CsrMatrix) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
    }

    /// pattern(A) == pattern(Aᵀ)
    pub fn is_structurally_symmetric(&self) -> bool {
        self.is_square() && self.same_pattern(&self.transpose())
    }

    /// Hash of the sparsity pattern (dimensions, row pointers, column indices).
    pub fn pattern_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.nrows.hash(&mut h);
        self.ncols.hash(&mut h);
        self.row_ptr.hash(&mut h);
        self.col_idx.hash(&mut h);
        h.finish()
    }

    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>, SparseError> {
        let mut y = vec![0.0; self.nrows];
        self.spmv_into(x, &mut y)?;
        Ok(y)
    }

    /// `y = A x`. Each row is summed in stored column order, so the result does
    /// not depend on how rows are distributed over threads.
    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) -> Result<(), SparseError> {
        if x.len() != self.ncols {
            return Err(SparseError::DimensionMismatch {
                expected: self.ncols,
                found: x.len(),
            });
        }
        if y.len() != self.nrows {
            return Err(SparseError::DimensionMismatch {
                expected: self.nrows,
                found: y.len(),
            });
        }
        let row_dot = |i: usize| -> f64 {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.col_idx[k]];
            }
            s
        };
        if self.nrows >= PAR_SPMV_MIN_ROWS {
            y.par_chunks_mut(SPMV_ROW_BLOCK).enumerate().for_each(|(b, chunk)| {
                for (k, yi) in chunk.iter_mut().enumerate() {
                    *yi = row_dot(b * SPMV_ROW_BLOCK + k);
                }
            });
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = row_dot(i);
            }
        }
        Ok(())
    }

    pub fn write_matrix_market(&self, path: impl AsRef<Path>) -> Result<(), SparseError> {
        let mut out = String::new();
        let _ = writeln!(out, "%%MatrixMarket matrix coordinate real general");
        let _ = writeln!(out, "{} {} {}", self.nrows, self.ncols, self.nnz());
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let _ = writeln!(out, "{} {} {:.17e}", i + 1, self.col_idx[k] + 1, self.vals[k]);
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<Self, SparseError> {
        let text = std::fs::read_to_string(path)?;
        let mm = |m: String| SparseError::MatrixMarket(m);
        let mut lines = text.lines();
        let banner = lines.next().ok_or_else(|| mm("empty file".into()))?;
        let banner_lc = banner.to_lowercase();
        if !banner_lc.starts_with("%%matrixmarket matrix coordinate real general") {
            return Err(mm(format!("unsupported banner '{banner}'")));
        }
        let mut data = lines.filter(|l| !l.trim_start().starts_with('%') && !l.trim().is_empty());
        let size = data.next().ok_or_else(|| mm("missing size line".into()))?;
        let dims: Vec<usize> = size
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<Result<_, _>>()
            .map_err(|e| mm(format!("size line: {e}")))?;
        if dims.len() != 3 {
            return Err(mm("size line needs 3 integers".into()));
        }
        let mut coo = CooMatrix::with_capacity(dims[0], dims[1], dims[2]);
        for line in data.take(dims[2]) {
            let t: Vec<&str> = line.split_whitespace().collect();
            if t.len() != 3 {
                return Err(mm(format!("bad entry line '{line}'")));
            }
            let r: usize = t[0].parse().map_err(|e| mm(format!("{e}")))?;
            let c: usize = t[1].parse().map_err(|e| mm(format!("{e}")))?;
            let v: f64 = t[2].parse().map_err(|e| mm(format!("{e}")))?;
            if r == 0 || c == 0 {
                return Err(mm("indices are 1-based".into()));
            }
            coo.push(r - 1, c - 1, v)?;
        }
        Ok(coo_to_csr(&coo))
    }
}

/// Bijection on `0..n`, stored as `perm[new] = old`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation {
    perm: Vec<usize>,
}

impl Permutation {
    pub fn new(perm: Vec<usize>) -> Result<Self, SparseError> {
        let n = perm.len();
        let mut seen = vec![false; n];
        for &p in &perm {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(SparseError::InvalidPermutation(format!(
                    "{p} is out of range or repeated for n = {n}"
                )));
            }
        }
        Ok(Self { perm })
    }

    pub fn identity(n: usize) -> Self {
        Self { perm: (0..n).collect() }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.perm
    }

    /// `inv[old] = new`
    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.perm.len()];
        for (new, &old) in self.perm.iter().enumerate() {
            inv[old] = new;
        }
        Self { perm: inv }
    }

    /// `y[new] = x[perm[new]]`
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.perm.iter().map(|&old| x[old]).collect()
    }
}

/// Largest |i - j| over stored entries.
pub fn bandwidth(a: &CsrMatrix) -> usize {
    (0..a.nrows)
        .flat_map(|i| a.row(i).0.iter().map(move |&j| i.abs_diff(j)))
        .max()
        .unwrap_or(0)
}

/// Adjacency lists of pattern(A) + pattern(Aᵀ) without self loops, sorted.
fn symmetric_adjacency(a: &CsrMatrix) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); a.nrows];
    for i in 0..a.nrows {
        for &j in a.row(i).0 {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    adj
}

/// Reverse Cuthill-McKee ordering of the symmetrized pattern.
///
/// Each connected component starts from its minimum-degree node (lowest
/// index on ties); BFS visits neighbors by ascending degree, then index.
pub fn rcm_ordering(a: &CsrMatrix) -> Result<Permutation, SparseError> {
    if !a.is_square() {
        return Err(SparseError::NotSquare {
            nrows: a.nrows,
            ncols: a.ncols,
        });
    }
    let n = a.nrows;
    let adj = symmetric_adjacency(a);
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();

    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (degree[v], v));

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    let mut nbrs = Vec::new();
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            nbrs.clear();
            nbrs.extend(adj[v].iter().copied().filter(|&w| !visited[w]));
            nbrs.sort_by_key(|&w| (degree[w], w));
            for &w in &nbrs {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    Ok(Permutation { perm: order })
}

/// `B = P A Pᵀ`, i.e. `B[i][j] = A[p[i]][p[j]]`.
pub fn permute_symmetric(a: &CsrMatrix, p: &Permutation) -> Result<CsrMatrix, SparseError> {
    if !a.is_square() {
        return Err(SparseError::NotSquare {
            nrows: a.nrows,
            ncols: a.ncols,
        });
    }
    if p.len() != a.nrows {
        return Err(SparseError::DimensionMismatch {
            expected: a.nrows,
            found: p.len(),
        });
    }
    let inv = p.inverse();
    let mut row_ptr = Vec::with_capacity(a.nrows + 1);
    let mut col_idx = Vec::with_capacity(a.nnz());
    let mut vals = Vec::with_capacity(a.nnz());
    let mut row: Vec<(usize, f64)> = Vec::new();
    row_ptr.push(0);
    for &old in p.as_slice() {
        row.clear();
        let (cols, vs) = a.row(old);
        row.extend(cols.iter().zip(vs).map(|(&c, &v)| (inv.perm[c], v)));
        row.sort_unstable_by_key(|&(c, _)| c);
        for &(c, v) in &row {
            col_idx.push(c);
            vals.push(v);
        }
        row_ptr.push(col_idx.len());
    }
    Ok(CsrMatrix {
        nrows: a.nrows,
        ncols: a.ncols,
        row_ptr,
        col_idx,
        vals,
    })
}
