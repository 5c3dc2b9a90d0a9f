//! Dense and sparse linear algebra used by the HDG solver.
//!
//! Local cell blocks are small and factorized with a hand-written LU with
//! partial pivoting. The global skeleton system is stored in compressed row
//! form and factorized with the supernodal sparse LU from `faer`, whose
//! symbolic analysis (fill-reducing ordering + elimination structure) can be
//! reused across Newton iterations while the sparsity pattern is unchanged.

use std::fmt::Write as _;
use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::LuError;
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};

use crate::error::{GldError, Result};

/// Pivots with magnitude at or below this value are treated as exact zeros.
pub const PIVOT_FLOOR: f64 = 1e-300;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `y = A x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `y += A x`
    pub fn matvec_add(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.cols);
        assert_eq!(y.len(), self.rows);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += dot(self.row(i), x);
        }
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows);
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self -= other`
    pub fn sub_assign(&mut self, other: &DenseMatrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
    }

    pub fn scaled(&self, s: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Adds `s * block` into the sub-block starting at `(r0, c0)`.
    pub fn add_block(&mut self, r0: usize, c0: usize, block: &DenseMatrix, s: f64) {
        for i in 0..block.rows {
            let dst = &mut self.data[(r0 + i) * self.cols + c0..(r0 + i) * self.cols + c0 + block.cols];
            for (d, b) in dst.iter_mut().zip(block.row(i)) {
                *d += s * b;
            }
        }
    }

    /// Adds `s * block^T` into the sub-block starting at `(r0, c0)`.
    pub fn add_block_transposed(&mut self, r0: usize, c0: usize, block: &DenseMatrix, s: f64) {
        for i in 0..block.rows {
            for j in 0..block.cols {
                self.data[(r0 + j) * self.cols + c0 + i] += s * block[(i, j)];
            }
        }
    }

    /// Copies out the sub-block `rows x cols` starting at `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// LU factorization with partial pivoting, `P A = L U`, stored in place.
#[derive(Clone, Debug)]
pub struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl DenseLu {
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        if a.rows != a.cols {
            return Err(GldError::Dimension(format!(
                "LU of a non-square {}x{} matrix",
                a.rows, a.cols
            )));
        }
        let n = a.rows;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pmax) =
                (k..n)
                    .map(|i| (i, lu[i * n + k].abs()))
                    .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if !(pmax > PIVOT_FLOOR) {
                return Err(GldError::SingularMatrix {
                    row: k,
                    pivot: pmax.max(0.0),
                });
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            let (upper, lower) = lu.split_at_mut((k + 1) * n);
            let pivot_row = &upper[k * n..(k + 1) * n];
            for row in lower.chunks_exact_mut(n) {
                let l = row[k] / pivot;
                row[k] = l;
                if l != 0.0 {
                    for (r, &u) in row[k + 1..].iter_mut().zip(&pivot_row[k + 1..]) {
                        *r -= l * u;
                    }
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        self.solve_permuted_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let x = self.solve(b);
        b.copy_from_slice(&x);
    }

    fn solve_permuted_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let s = dot(row, &x[..i]);
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n..(i + 1) * n];
            let s = dot(&row[i + 1..], &x[i + 1..]);
            x[i] = (x[i] - s) / row[i];
        }
    }

    /// Solves `A X = B` column by column.
    pub fn solve_matrix(&self, b: &DenseMatrix) -> DenseMatrix {
        assert_eq!(b.rows, self.n);
        let mut out = DenseMatrix::zeros(b.rows, b.cols);
        let mut col = vec![0.0; self.n];
        for j in 0..b.cols {
            for (i, c) in col.iter_mut().enumerate() {
                *c = b[(self.perm[i], j)];
            }
            self.solve_permuted_in_place(&mut col);
            for (i, c) in col.iter().enumerate() {
                out[(i, j)] = *c;
            }
        }
        out
    }

    pub fn inverse(&self) -> DenseMatrix {
        self.solve_matrix(&DenseMatrix::identity(self.n))
    }
}

/// Compressed sparse row matrix with sorted, duplicate-free column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(i, j, _) in &sorted {
            if i >= nrows || j >= ncols {
                return Err(GldError::Dimension(format!(
                    "triplet ({i}, {j}) outside a {nrows}x{ncols} matrix"
                )));
            }
        }
        sorted.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in sorted {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds a matrix with the given pattern and all values zero. Each row's
    /// columns must already be sorted and unique.
    pub fn from_pattern(nrows: usize, ncols: usize, row_ptr: Vec<usize>, col_idx: Vec<usize>) -> Result<Self> {
        if row_ptr.len() != nrows + 1 || *row_ptr.last().unwrap_or(&0) != col_idx.len() {
            return Err(GldError::Dimension("inconsistent CSR row pointers".into()));
        }
        for i in 0..nrows {
            let cols = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            if cols.windows(2).any(|w| w[0] >= w[1]) || cols.iter().any(|&c| c >= ncols) {
                return Err(GldError::Dimension(format!(
                    "row {i} has unsorted or out-of-range columns"
                )));
            }
        }
        let nnz = col_idx.len();
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Position of entry `(i, j)` in the value array, if it is in the pattern.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let cols = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        cols.binary_search(&j).ok().map(|p| self.row_ptr[i] + p)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |p| self.values[p])
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .map(|p| self.values[p] * x[self.col_idx[p]])
                    .sum()
            })
            .collect()
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows)
            .map(|i| {
                self.values[self.row_ptr[i]..self.row_ptr[i + 1]]
                    .iter()
                    .map(|v| v.abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                d[(i, self.col_idx[p])] = self.values[p];
            }
        }
        d
    }

    /// MatrixMarket coordinate format (1-based indices), for debugging dumps.
    pub fn to_matrix_market(&self) -> String {
        let mut s = String::new();
        s.push_str("%%MatrixMarket matrix coordinate real general\n");
        let _ = writeln!(s, "{} {} {}", self.nrows, self.ncols, self.nnz());
        for i in 0..self.nrows {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let _ = writeln!(s, "{} {} {:.17e}", i + 1, self.col_idx[p] + 1, self.values[p]);
            }
        }
        s
    }
}

/// Reusable symbolic analysis of a sparsity pattern.
#[derive(Clone)]
pub struct SparseSymbolic {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    // csr value position -> csc value position
    csr_to_csc: Vec<usize>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    symbolic: faer::sparse::linalg::solvers::SymbolicLu<usize>,
}

impl SparseSymbolic {
    pub fn analyze(a: &SparseMatrix) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(GldError::Dimension(format!(
                "sparse LU of a non-square {}x{} matrix",
                a.nrows, a.ncols
            )));
        }
        let n = a.nrows;
        // transpose the pattern: CSR of A -> CSC of A
        let mut counts = vec![0usize; n + 1];
        for &j in &a.col_idx {
            counts[j + 1] += 1;
        }
        for j in 0..n {
            counts[j + 1] += counts[j];
        }
        let col_ptr = counts.clone();
        let mut next = counts;
        let mut row_idx = vec![0usize; a.nnz()];
        let mut csr_to_csc = vec![0usize; a.nnz()];
        for i in 0..n {
            for p in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.col_idx[p];
                let q = next[j];
                next[j] += 1;
                row_idx[q] = i;
                csr_to_csc[p] = q;
            }
        }
        let sym = SymbolicSparseColMatRef::new_checked(n, n, &col_ptr, None, &row_idx);
        let symbolic = faer::sparse::linalg::solvers::SymbolicLu::try_new(sym)
            .map_err(|e| GldError::Dimension(format!("symbolic LU failed: {e:?}")))?;
        Ok(Self {
            n,
            col_ptr,
            row_idx,
            csr_to_csc,
            row_ptr: a.row_ptr.clone(),
            col_idx: a.col_idx.clone(),
            symbolic,
        })
    }

    fn same_pattern(&self, a: &SparseMatrix) -> bool {
        a.nrows == self.n && a.row_ptr == self.row_ptr && a.col_idx == self.col_idx
    }

    /// Numeric factorization of a matrix with the analyzed pattern.
    pub fn factor(&self, a: &SparseMatrix) -> Result<SparseLu> {
        if !self.same_pattern(a) {
            return Err(GldError::Dimension(
                "matrix pattern differs from the analyzed one".into(),
            ));
        }
        let mut values = vec![0.0; a.nnz()];
        for (p, &q) in self.csr_to_csc.iter().enumerate() {
            values[q] = a.values[p];
        }
        if let Some(p) = values.iter().position(|v| !v.is_finite()) {
            let row = self.row_idx[p];
            return Err(GldError::SingularMatrix { row, pivot: f64::NAN });
        }
        let sym = SymbolicSparseColMatRef::new_checked(self.n, self.n, &self.col_ptr, None, &self.row_idx);
        let mat = SparseColMatRef::new(sym, &values);
        let lu =
            faer::sparse::linalg::solvers::Lu::try_new_with_symbolic(self.symbolic.clone(), mat).map_err(
                |e| match e {
                    LuError::SymbolicSingular { index } => GldError::SingularMatrix { row: index, pivot: 0.0 },
                    LuError::Generic(g) => GldError::Dimension(format!("sparse LU failed: {g:?}")),
                },
            )?;
        Ok(SparseLu {
            n: self.n,
            lu: Arc::new(lu),
        })
    }
}

/// Numeric sparse LU factorization (row pivoting, fill-reducing column ordering).
#[derive(Clone)]
pub struct SparseLu {
    n: usize,
    lu: Arc<faer::sparse::linalg::solvers::Lu<usize, f64>>,
}

impl SparseLu {
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        SparseSymbolic::analyze(a)?.factor(a)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b`. A numerically zero pivot surfaces here as a
    /// non-finite solution component and is reported as singular.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(GldError::Dimension(format!(
                "rhs of length {} for a system of size {}",
                b.len(),
                self.n
            )));
        }
        let rhs = faer::Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        let x = self.lu.solve(&rhs);
        let out: Vec<f64> = (0..self.n).map(|i| x[(i, 0)]).collect();
        if let Some(row) = out.iter().position(|v| !v.is_finite()) {
            return Err(GldError::SingularMatrix { row, pivot: 0.0 });
        }
        Ok(out)
    }
}

impl std::fmt::Debug for SparseLu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseLu").field("n", &self.n).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64) / ((1u64 << 53) as f64)
    }

    #[test]
    fn dense_identity_solve() {
        let lu = DenseLu::factor(&DenseMatrix::identity(4)).unwrap();
        assert_eq!(lu.solve(&[1.0, 2.0, 3.0, 4.0]), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn dense_hilbert_matches_exact_inverse() {
        let h = DenseMatrix::from_fn(3, 3, |i, j| 1.0 / (i + j + 1) as f64);
        let exact = DenseMatrix::from_rows(&[
            vec![9.0, -36.0, 30.0],
            vec![-36.0, 192.0, -180.0],
            vec![30.0, -180.0, 180.0],
        ]);
        let inv = DenseLu::factor(&h).unwrap().inverse();
        for i in 0..3 {
            for j in 0..3 {
                assert!((inv[(i, j)] - exact[(i, j)]).abs() < 1e-11 * 192.0, "{i} {j}");
            }
        }
    }

    #[test]
    fn dense_permutation_permutes_rhs() {
        // rows of the identity in order (2, 0, 1)
        let p = DenseMatrix::from_rows(&[vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        let x = DenseLu::factor(&p).unwrap().solve(&[10.0, 20.0, 30.0]);
        assert_eq!(x, vec![20.0, 30.0, 10.0]);
    }

    #[test]
    fn dense_singular_is_reported() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        match DenseLu::factor(&a) {
            Err(GldError::SingularMatrix { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected singular, got {other:?}"),
        }
    }

    #[test]
    fn dense_random_residual() {
        let mut seed = 7;
        let n = 30;
        let a = DenseMatrix::from_fn(n, n, |i, j| {
            lcg(&mut 0u64.wrapping_add((i * n + j) as u64 + 1)) + if i == j { 3.0 } else { 0.0 }
        });
        let b: Vec<f64> = (0..n).map(|_| lcg(&mut seed) - 0.5).collect();
        let x = DenseLu::factor(&a).unwrap().solve(&b);
        let r: Vec<f64> = a.matvec(&x).iter().zip(&b).map(|(u, v)| u - v).collect();
        let scale = a.norm_inf() * norm_inf(&x) + norm_inf(&b);
        assert!(norm_inf(&r) / scale <= 1e-12);
    }

    #[test]
    fn sparse_two_by_two_by_hand() {
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)]).unwrap();
        let x = SparseLu::factor(&a).unwrap().solve(&[3.0, 4.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sparse_identity_returns_rhs() {
        let b = vec![1.5, -2.0, 3.25];
        let x = SparseLu::factor(&SparseMatrix::identity(3)).unwrap().solve(&b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn sparse_random_spd_residual() {
        let n = 50;
        let mut seed = 42;
        let mut trip = Vec::new();
        // B^T B + n I with a sparse random B
        let mut bmat = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for _ in 0..4 {
                let j = (lcg(&mut seed) * n as f64) as usize % n;
                bmat[(i, j)] += lcg(&mut seed) - 0.5;
            }
        }
        let spd = bmat.transpose().matmul(&bmat);
        for i in 0..n {
            for j in 0..n {
                let v = spd[(i, j)] + if i == j { n as f64 } else { 0.0 };
                if v != 0.0 {
                    trip.push((i, j, v));
                }
            }
        }
        let a = SparseMatrix::from_triplets(n, n, &trip).unwrap();
        let b: Vec<f64> = (0..n).map(|_| lcg(&mut seed)).collect();
        let x = SparseLu::factor(&a).unwrap().solve(&b).unwrap();
        let r: Vec<f64> = a.matvec(&x).iter().zip(&b).map(|(u, v)| u - v).collect();
        assert!(norm2(&r) / norm2(&b) <= 1e-12);
        let scale = a.norm_inf() * norm_inf(&x) + norm_inf(&b);
        assert!(norm_inf(&r) / scale <= 1e-12);
    }

    #[test]
    fn sparse_factorization_is_deterministic() {
        let mut seed = 3;
        let n = 40;
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, 4.0 + lcg(&mut seed)));
            trip.push((i, (i + 7) % n, lcg(&mut seed) - 0.5));
            trip.push(((i + 3) % n, i, lcg(&mut seed) - 0.5));
        }
        let a = SparseMatrix::from_triplets(n, n, &trip).unwrap();
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x1 = SparseLu::factor(&a).unwrap().solve(&b).unwrap();
        let x2 = SparseLu::factor(&a).unwrap().solve(&b).unwrap();
        assert!(x1.iter().zip(&x2).all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    #[test]
    fn sparse_singular_is_reported() {
        let a = SparseMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, 1.0), (2, 0, 1.0)]).unwrap();
        let res = SparseLu::factor(&a).and_then(|lu| lu.solve(&[1.0, 1.0, 1.0]));
        assert!(matches!(res, Err(GldError::SingularMatrix { .. })), "{res:?}");
    }

    #[test]
    fn symbolic_reuse_matches_fresh_factorization() {
        let a = SparseMatrix::from_triplets(3, 3, &[(0, 0, 2.0), (0, 2, 1.0), (1, 1, 5.0), (2, 0, 1.0), (2, 2, 3.0)])
            .unwrap();
        let sym = SparseSymbolic::analyze(&a).unwrap();
        let mut a2 = a.clone();
        for v in a2.values_mut() {
            *v *= 2.0;
        }
        let x = sym.factor(&a2).unwrap().solve(&[2.0, 4.0, 6.0]).unwrap();
        let y = SparseLu::factor(&a2).unwrap().solve(&[2.0, 4.0, 6.0]).unwrap();
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn triplets_sum_duplicates_and_sort() {
        let a = SparseMatrix::from_triplets(2, 3, &[(1, 2, 1.0), (0, 1, 2.0), (1, 2, 0.5), (1, 0, -1.0)]).unwrap();
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.get(1, 2), 1.5);
        assert_eq!(a.col_idx(), &[1, 0, 2]);
        assert!(a.to_matrix_market().starts_with("%%MatrixMarket"));
    }
}
