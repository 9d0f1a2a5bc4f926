//! Dense real linear algebra: row-major matrices, Cholesky solves, a cyclic
//! Jacobi symmetric eigensolver and one-sided Jacobi singular values.
//!
//! Every routine is a pure function of its inputs. Sizes in this crate stay
//! small enough (a few thousand rows at most) that straightforward dense
//! kernels are adequate; only the general matrix product is delegated to
//! `matrixmultiply`.

use std::fmt;
use std::io::{self, Read, Write};
use std::ops::{Index, IndexMut};

use thiserror::Error;

/// Relative tolerance used when checking that an input is symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;

const MAX_JACOBI_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not symmetric positive definite (pivot {pivot} = {value:e})")]
    NotSpd { pivot: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("iteration did not converge after {0} sweeps")]
    NonConvergence(usize),
    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

fn mismatch(expected: impl fmt::Display, actual: impl fmt::Display) -> LinalgError {
    LinalgError::DimensionMismatch {
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(6) {
            write!(f, "\n  {:?}", &self.row(r)[..self.cols.min(6)])?;
        }
        write!(f, "\n]")
    }
}

impl Matrix {
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

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(mismatch(
                format!("{} entries for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: idx / cols.max(1),
                col: idx % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, LinalgError> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != n_cols {
                return Err(mismatch(format!("row length {n_cols}"), r.len()));
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(n_rows, n_cols, data)
    }

    /// Builds a matrix from row-major data produced internally. Finiteness is
    /// checked only in debug builds.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn set_column(&mut self, c: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows);
        for (r, &v) in values.iter().enumerate() {
            self[(r, c)] = v;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for (c, &v) in self.row(r).iter().enumerate() {
                t.data[c * self.rows + r] = v;
            }
        }
        t
    }

    /// Matrix product `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.rows {
            return Err(mismatch(
                format!("inner dimension {}", self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(gemm(self, false, other, false))
    }

    /// `selfᵀ · other` without materialising the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.rows != other.rows {
            return Err(mismatch(
                format!("row count {}", self.rows),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(gemm(self, true, other, false))
    }

    /// `self · otherᵀ` without materialising the transpose.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.cols {
            return Err(mismatch(
                format!("column count {}", self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(gemm(self, false, other, true))
    }

    /// `selfᵀ · self` (cols × cols).
    pub fn gram_cols(&self) -> Matrix {
        symmetrize(gemm(self, true, self, false))
    }

    /// `self · selfᵀ` (rows × rows).
    pub fn gram_rows(&self) -> Matrix {
        symmetrize(gemm(self, false, self, true))
    }

    pub fn mat_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), v)).collect()
    }

    /// `vᵀ · self`, i.e. a row vector times the matrix.
    pub fn vec_mat(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            if vr != 0.0 {
                axpy(vr, self.row(r), &mut out);
            }
        }
        out
    }

    pub fn add_diagonal(&mut self, value: f64) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self.data[i * self.cols + i] += value;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn scaled(&self, alpha: f64) -> Matrix {
        let mut m = self.clone();
        m.scale(alpha);
        m
    }

    /// `self += alpha · other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Matrix) -> Result<(), LinalgError> {
        if self.shape() != other.shape() {
            return Err(mismatch(
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        axpy(alpha, &other.data, &mut self.data);
        Ok(())
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        let mut out = self.clone();
        out.add_scaled(-1.0, other)?;
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Largest `|a_ij − a_ji|` relative to the largest entry magnitude.
    pub fn asymmetry(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        let scale = self.max_abs();
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    /// Copies the first `n` rows (all columns).
    pub fn top_rows(&self, n: usize) -> Matrix {
        assert!(n <= self.rows);
        Matrix::from_raw(n, self.cols, self.data[..n * self.cols].to_vec())
    }

    /// Writes the little-endian dump: u64 rows, u64 cols, then row-major f64s.
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.cols as u64).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> io::Result<Matrix> {
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let rows = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let cols = u64::from_le_bytes(word) as usize;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "matrix size overflow"))?;
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut word)?;
            data.push(f64::from_le_bytes(word));
        }
        Matrix::from_vec(rows, cols, data)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + 8 * self.data.len());
        self.write_binary(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    // four accumulators let the compiler vectorise without reassociation
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn gemm(a: &Matrix, trans_a: bool, b: &Matrix, trans_b: bool) -> Matrix {
    let (m, k) = if trans_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let n = if trans_b { b.rows } else { b.cols };
    let mut c = Matrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // strides of the logical (possibly transposed) operands
    let (rsa, csa) = if trans_a { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if trans_b { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    unsafe {
        // SAFETY: the pointers cover `a`, `b` and `c` with the strides above,
        // which describe exactly the m×k, k×n and m×n logical operands.
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

fn symmetrize(mut m: Matrix) -> Matrix {
    let n = m.rows;
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    m
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    pub fn factor(a: &Matrix) -> Result<Self, LinalgError> {
        if a.rows != a.cols {
            return Err(mismatch("square matrix", format!("{}x{}", a.rows, a.cols)));
        }
        let asym = a.asymmetry();
        if asym > SYMMETRY_TOL {
            return Err(LinalgError::NotSymmetric(asym));
        }
        let n = a.rows;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let diag = a[(j, j)] - dot(&l.row(j)[..j], &l.row(j)[..j]);
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(LinalgError::NotSpd { pivot: j, value: diag });
            }
            let ljj = diag.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let (upper, lower) = l.data.split_at_mut(i * n);
                let row_j = &upper[j * n..j * n + j];
                let row_i = &mut lower[..n];
                let s = a[(i, j)] - dot(&row_i[..j], row_j);
                row_i[j] = s / ljj;
            }
        }
        Ok(Self { l })
    }

    pub fn factor_matrix(&self) -> &Matrix {
        &self.l
    }

    /// Solves `A X = B` for every column of `B`.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix, LinalgError> {
        let n = self.l.rows;
        if b.rows != n {
            return Err(mismatch(format!("{n} rows"), format!("{}x{}", b.rows, b.cols)));
        }
        let k = b.cols;
        // forward substitution, all right-hand sides at once: L Y = B
        let mut y = b.clone();
        for i in 0..n {
            let lrow = self.l.row(i);
            let (done, rest) = y.data.split_at_mut(i * k);
            let yi = &mut rest[..k];
            for (j, &lij) in lrow[..i].iter().enumerate() {
                if lij != 0.0 {
                    axpy(-lij, &done[j * k..(j + 1) * k], yi);
                }
            }
            let inv = 1.0 / lrow[i];
            yi.iter_mut().for_each(|v| *v *= inv);
        }
        // back substitution: Lᵀ X = Y
        let mut x = y;
        for i in (0..n).rev() {
            let (head, tail) = x.data.split_at_mut((i + 1) * k);
            let xi = &mut head[i * k..];
            for j in (i + 1)..n {
                let lji = self.l[(j, i)];
                if lji != 0.0 {
                    axpy(-lji, &tail[(j - i - 1) * k..(j - i) * k], xi);
                }
            }
            let inv = 1.0 / self.l[(i, i)];
            xi.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(x)
    }
}

/// Solves `A X = B` for symmetric positive-definite `A`.
///
/// Fails with [`LinalgError::NotSpd`] instead of regularising; callers that
/// need a ridge must add `λI` themselves.
pub fn cholesky_solve(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    if a.rows != b.rows {
        return Err(mismatch(format!("{} rows", a.rows), format!("{}x{}", b.rows, b.cols)));
    }
    Cholesky::factor(a)?.solve(b)
}

/// Eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEig {
    /// Sorted descending.
    pub eigenvalues: Vec<f64>,
    /// Column `k` is the unit eigenvector for `eigenvalues[k]`.
    pub eigenvectors: Matrix,
}

impl SymEig {
    /// Smallest eigenvalue above `rel_tol · λ_max` (and above zero).
    pub fn smallest_positive(&self, rel_tol: f64) -> Option<f64> {
        let top = self.eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
        let cutoff = rel_tol * top;
        self.eigenvalues
            .iter()
            .rev()
            .copied()
            .find(|&v| v > cutoff && v > 0.0)
    }

    /// Number of eigenvalues above `rel_tol · λ_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let top = self.eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
        self.eigenvalues
            .iter()
            .filter(|&&v| v > rel_tol * top && v > 0.0)
            .count()
    }

    pub fn reconstruct(&self) -> Matrix {
        let n = self.eigenvalues.len();
        let mut scaled = self.eigenvectors.clone();
        for r in 0..n {
            for (c, v) in scaled.row_mut(r).iter_mut().enumerate() {
                *v *= self.eigenvalues[c];
            }
        }
        symmetrize(gemm(&scaled, false, &self.eigenvectors, true))
    }
}

/// Cyclic Jacobi eigensolver for symmetric matrices.
pub fn sym_eig(a: &Matrix) -> Result<SymEig, LinalgError> {
    if a.rows != a.cols {
        return Err(mismatch("square matrix", format!("{}x{}", a.rows, a.cols)));
    }
    let asym = a.asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(LinalgError::NotSymmetric(asym));
    }
    let n = a.rows;
    let mut s = symmetrize(a.clone());
    // rows of `vt` are eigenvectors, so rotations touch contiguous memory
    let mut vt = Matrix::identity(n);
    let total = s.frobenius_norm();
    if n <= 1 || total == 0.0 {
        return Ok(finish_eig(s, vt));
    }

    let mut converged = false;
    for _sweep in 0..MAX_JACOBI_SWEEPS {
        let off: f64 = (0..n)
            .map(|i| ((i + 1)..n).map(|j| s[(i, j)] * s[(i, j)]).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * total {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = s[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = s[(p, p)];
                let aqq = s[(q, q)];
                if apq.abs() < 1e-300 || apq.abs() <= f64::EPSILON * 1e-3 * (app.abs() + aqq.abs()) {
                    s[(p, q)] = 0.0;
                    s[(q, p)] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                rotate_rows(&mut s, p, q, c, sn);
                // columns p and q mirror rows p and q
                for k in 0..n {
                    let vp = s[(p, k)];
                    let vq = s[(q, k)];
                    s[(k, p)] = vp;
                    s[(k, q)] = vq;
                }
                s[(p, p)] = app - t * apq;
                s[(q, q)] = aqq + t * apq;
                s[(p, q)] = 0.0;
                s[(q, p)] = 0.0;
                rotate_rows(&mut vt, p, q, c, sn);
            }
        }
    }
    if !converged {
        return Err(LinalgError::NonConvergence(MAX_JACOBI_SWEEPS));
    }
    Ok(finish_eig(s, vt))
}

fn rotate_rows(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = m.cols;
    let (head, tail) = m.data.split_at_mut(q * n);
    let rp = &mut head[p * n..(p + 1) * n];
    let rq = &mut tail[..n];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let a = *x;
        let b = *y;
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

fn finish_eig(s: Matrix, vt: Matrix) -> SymEig {
    let n = s.rows;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[(j, j)].total_cmp(&s[(i, i)]));
    let eigenvalues = order.iter().map(|&i| s[(i, i)]).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        for (r, &v) in vt.row(i).iter().enumerate() {
            eigenvectors[(r, col)] = v;
        }
    }
    SymEig {
        eigenvalues,
        eigenvectors,
    }
}

/// Smallest value above `rel_tol · max` (and above zero) in a spectrum.
pub fn smallest_positive(values: &[f64], rel_tol: f64) -> Option<f64> {
    let top = values.iter().copied().fold(0.0, f64::max);
    values
        .iter()
        .copied()
        .filter(|&v| v > rel_tol * top && v > 0.0)
        .min_by(|a, b| a.total_cmp(b))
}

/// Eigenvalues only (descending), via Householder tridiagonalisation and
/// implicit QL. Much cheaper than [`sym_eig`] for large matrices.
pub fn sym_eigvals(a: &Matrix) -> Result<Vec<f64>, LinalgError> {
    if a.rows != a.cols {
        return Err(mismatch("square matrix", format!("{}x{}", a.rows, a.cols)));
    }
    let asym = a.asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(LinalgError::NotSymmetric(asym));
    }
    let n = a.rows;
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut s = symmetrize(a.clone());
    let mut d = vec![0.0; n];
    // e[k] couples d[k] and d[k + 1]
    let mut e = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for k in 0..n.saturating_sub(2) {
        let len = n - k - 1;
        for i in 0..len {
            v[i] = s[(k + 1 + i, k)];
        }
        let norm = norm2(&v[..len]);
        d[k] = s[(k, k)];
        if norm == 0.0 {
            e[k] = 0.0;
            continue;
        }
        let alpha = if v[0] > 0.0 { -norm } else { norm };
        e[k] = alpha;
        v[0] -= alpha;
        let vn = norm2(&v[..len]);
        if vn == 0.0 {
            continue;
        }
        for x in v[..len].iter_mut() {
            *x /= vn;
        }
        // B <- B - 2 v wᵀ - 2 w vᵀ with w = Bv - (vᵀBv) v
        for i in 0..len {
            p[i] = dot(&s.row(k + 1 + i)[k + 1..], &v[..len]);
        }
        let kk = dot(&p[..len], &v[..len]);
        for i in 0..len {
            p[i] -= kk * v[i];
        }
        for i in 0..len {
            let (vi, wi) = (v[i], p[i]);
            let row = &mut s.row_mut(k + 1 + i)[k + 1..];
            for j in 0..len {
                row[j] -= 2.0 * (vi * p[j] + wi * v[j]);
            }
        }
    }
    if n >= 2 {
        d[n - 2] = s[(n - 2, n - 2)];
        e[n - 2] = s[(n - 1, n - 2)];
    }
    d[n - 1] = s[(n - 1, n - 1)];
    e[n - 1] = 0.0;
    tridiagonal_ql(&mut d, &mut e)?;
    d.sort_by(|x, y| y.total_cmp(x));
    Ok(d)
}

const MAX_QL_ITERATIONS: usize = 60;

fn tridiagonal_ql(d: &mut [f64], e: &mut [f64]) -> Result<(), LinalgError> {
    let n = d.len();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > MAX_QL_ITERATIONS {
                return Err(LinalgError::NonConvergence(MAX_QL_ITERATIONS));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Singular values (descending, `min(rows, cols)` of them) by one-sided
/// Jacobi orthogonalisation.
pub fn svd_singular_values(a: &Matrix) -> Result<Vec<f64>, LinalgError> {
    if let Some(idx) = a.data.iter().position(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite {
            row: idx / a.cols.max(1),
            col: idx % a.cols.max(1),
        });
    }
    // orthogonalise the rows of `u`; each row is a column of the tall operand
    let mut u = if a.rows >= a.cols { a.transpose() } else { a.clone() };
    let k = u.rows;
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut norms: Vec<f64> = (0..k).map(|i| dot(u.row(i), u.row(i))).collect();
    let mut converged = false;
    for _sweep in 0..MAX_JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..k {
            for q in (p + 1)..k {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(u.row(p), u.row(q));
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut u, p, q, c, s);
                norms[p] = dot(u.row(p), u.row(p));
                norms[q] = dot(u.row(q), u.row(q));
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::NonConvergence(MAX_JACOBI_SWEEPS));
    }
    let mut values: Vec<f64> = norms.iter().map(|&v| v.max(0.0).sqrt()).collect();
    values.sort_by(|x, y| y.total_cmp(x));
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let m = random_matrix(rng, n, n);
        let mut s = m.clone();
        for i in 0..n {
            for j in 0..n {
                s[(i, j)] = m[(i, j)] + m[(j, i)];
            }
        }
        s
    }

    /// Gauss–Jordan inverse with partial pivoting, independent of Cholesky.
    fn gauss_jordan_inverse(a: &Matrix) -> Matrix {
        let n = a.rows();
        let mut aug = vec![vec![0.0; 2 * n]; n];
        for i in 0..n {
            for j in 0..n {
                aug[i][j] = a[(i, j)];
            }
            aug[i][n + i] = 1.0;
        }
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&x, &y| aug[x][col].abs().total_cmp(&aug[y][col].abs()))
                .unwrap();
            aug.swap(col, piv);
            let d = aug[col][col];
            for v in aug[col].iter_mut() {
                *v /= d;
            }
            for r in 0..n {
                if r != col {
                    let f = aug[r][col];
                    for c in 0..2 * n {
                        aug[r][c] -= f * aug[col][c];
                    }
                }
            }
        }
        let mut inv = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                inv[(i, j)] = aug[i][n + j];
            }
        }
        inv
    }

    /// Eigenvalues by Sturm-sequence bisection on the characteristic
    /// polynomial of the Householder tridiagonal form. Independent of Jacobi.
    fn bisection_eigenvalues(a: &Matrix) -> Vec<f64> {
        let n = a.rows();
        let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
        for k in 0..n.saturating_sub(2) {
            let x: Vec<f64> = (k + 1..n).map(|i| m[i][k]).collect();
            let alpha = -x[0].signum() * x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if alpha == 0.0 {
                continue;
            }
            let mut v = x.clone();
            v[0] -= alpha;
            let vn = v.iter().map(|t| t * t).sum::<f64>().sqrt();
            if vn == 0.0 {
                continue;
            }
            v.iter_mut().for_each(|t| *t /= vn);
            // H = I - 2 v vᵀ on the trailing block; M ← H M H
            let idx: Vec<usize> = (k + 1..n).collect();
            for j in 0..n {
                let s: f64 = idx.iter().zip(&v).map(|(&i, vi)| vi * m[i][j]).sum();
                for (&i, vi) in idx.iter().zip(&v) {
                    m[i][j] -= 2.0 * vi * s;
                }
            }
            for i in 0..n {
                let s: f64 = idx.iter().zip(&v).map(|(&j, vj)| vj * m[i][j]).sum();
                for (&j, vj) in idx.iter().zip(&v) {
                    m[i][j] -= 2.0 * vj * s;
                }
            }
        }
        let diag: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
        let off: Vec<f64> = (0..n.saturating_sub(1)).map(|i| m[i + 1][i]).collect();
        let count_below = |x: f64| -> usize {
            let mut count = 0;
            let mut q = diag[0] - x;
            if q < 0.0 {
                count += 1;
            }
            for i in 1..n {
                let denom = if q == 0.0 { 1e-300 } else { q };
                q = diag[i] - x - off[i - 1] * off[i - 1] / denom;
                if q < 0.0 {
                    count += 1;
                }
            }
            count
        };
        let bound = (0..n)
            .map(|i| diag[i].abs() + off.get(i).map_or(0.0, |v| v.abs()) + if i > 0 { off[i - 1].abs() } else { 0.0 })
            .fold(0.0, f64::max)
            + 1.0;
        let mut out: Vec<f64> = (0..n)
            .map(|k| {
                // k-th smallest eigenvalue
                let (mut lo, mut hi) = (-bound, bound);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if count_below(mid) > k {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                0.5 * (lo + hi)
            })
            .collect();
        out.reverse();
        out
    }

    #[test]
    fn cholesky_identity_returns_rhs() {
        let b = Matrix::from_rows(&[[1.0, -2.0], [3.5, 0.25], [7.0, 1.0]]).unwrap();
        let x = cholesky_solve(&Matrix::identity(3), &b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn cholesky_diagonal_solve() {
        let a = Matrix::from_diag(&[2.0, 4.0]);
        let b = Matrix::from_rows(&[[2.0], [8.0]]).unwrap();
        let x = cholesky_solve(&a, &b).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-15 && (x[(1, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn cholesky_matches_inverse_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_matrix(&mut rng, 5, 5);
        let mut a = m.gram_cols();
        a.add_diagonal(1.0);
        let b = random_matrix(&mut rng, 5, 3);
        let x = cholesky_solve(&a, &b).unwrap();
        let expected = gauss_jordan_inverse(&a).matmul(&b).unwrap();
        let diff = x.sub(&expected).unwrap().frobenius_norm();
        assert!(diff <= 1e-10 * expected.frobenius_norm(), "diff {diff}");
        let resid = a.matmul(&x).unwrap().sub(&b).unwrap().frobenius_norm();
        assert!(resid <= 1e-8 * b.frobenius_norm());
    }

    #[test]
    fn cholesky_rejects_indefinite_and_mismatch() {
        let a = Matrix::from_diag(&[1.0, -1.0]);
        let b = Matrix::zeros(2, 1);
        assert!(matches!(cholesky_solve(&a, &b), Err(LinalgError::NotSpd { pivot: 1, .. })));
        let singular = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(cholesky_solve(&singular, &b), Err(LinalgError::NotSpd { .. })));
        let b3 = Matrix::zeros(3, 1);
        assert!(matches!(
            cholesky_solve(&Matrix::identity(2), &b3),
            Err(LinalgError::DimensionMismatch { .. })
        ));
        let asym = Matrix::from_rows(&[[2.0, 1.0], [0.0, 2.0]]).unwrap();
        assert!(matches!(cholesky_solve(&asym, &b), Err(LinalgError::NotSymmetric(_))));
    }

    #[test]
    fn eig_diagonal_sorted() {
        let e = sym_eig(&Matrix::from_diag(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(e.eigenvalues, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn eig_rank_one() {
        let v = [0.6, 0.0, 0.8, 0.0];
        let mut a = Matrix::zeros(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                a[(i, j)] = v[i] * v[j];
            }
        }
        let e = sym_eig(&a).unwrap();
        assert!((e.eigenvalues[0] - 1.0).abs() < 1e-12);
        for &x in &e.eigenvalues[1..] {
            assert!(x.abs() < 1e-12);
        }
        assert_eq!(e.rank(1e-10), 1);
        assert!((e.smallest_positive(1e-10).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eig_matches_bisection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_symmetric(&mut rng, 6);
        let e = sym_eig(&a).unwrap();
        let oracle = bisection_eigenvalues(&a);
        for (x, y) in e.eigenvalues.iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
    }

    #[test]
    fn eig_rejects_asymmetric() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&a), Err(LinalgError::NotSymmetric(_))));
    }

    #[test]
    fn eig_reconstruction_and_orthonormality_many_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..100 {
            let n = 1 + (trial * 7) % 32;
            let a = random_symmetric(&mut rng, n);
            let e = sym_eig(&a).unwrap();
            assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
            let recon = e.reconstruct().sub(&a).unwrap().frobenius_norm();
            assert!(recon <= 1e-8 * a.frobenius_norm(), "n={n} recon {recon}");
            let vtv = e.eigenvectors.gram_cols();
            let dev = vtv.sub(&Matrix::identity(n)).unwrap().max_abs();
            assert!(dev <= 1e-10, "n={n} orthonormality {dev}");
        }
    }

    #[test]
    fn eigvals_agree_with_jacobi() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in [1usize, 2, 3, 5, 17, 40] {
            let a = random_symmetric(&mut rng, n);
            let fast = sym_eigvals(&a).unwrap();
            let full = sym_eig(&a).unwrap().eigenvalues;
            let scale = a.frobenius_norm().max(1.0);
            for (x, y) in fast.iter().zip(&full) {
                assert!((x - y).abs() <= 1e-10 * scale, "n={n}: {x} vs {y}");
            }
        }
        assert_eq!(sym_eigvals(&Matrix::from_diag(&[3.0, 1.0, 2.0])).unwrap(), vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn eigvals_of_low_rank_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x = random_matrix(&mut rng, 4, 10);
        let vals = sym_eigvals(&x.gram_cols()).unwrap();
        let small = sym_eig(&x.gram_rows()).unwrap();
        assert_eq!(vals.len(), 10);
        assert!(vals[4..].iter().all(|v| v.abs() < 1e-12));
        let fast = smallest_positive(&vals, 1e-12).unwrap();
        let slow = small.smallest_positive(1e-12).unwrap();
        assert!((fast - slow).abs() < 1e-10 * slow.max(1.0));
        assert_eq!(smallest_positive(&[0.0, -1e-20], 1e-12), None);
    }

    #[test]
    fn singular_values_trivial_cases() {
        assert_eq!(svd_singular_values(&Matrix::identity(3)).unwrap(), vec![1.0; 3]);
        assert_eq!(svd_singular_values(&Matrix::zeros(3, 2)).unwrap(), vec![0.0; 2]);
        let swap = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let sv = svd_singular_values(&swap).unwrap();
        assert!((sv[0] - 1.0).abs() < 1e-14 && (sv[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn singular_values_match_gram_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(r, c) in &[(5, 3), (3, 5), (8, 8), (12, 4)] {
            let a = random_matrix(&mut rng, r, c);
            let sv = svd_singular_values(&a).unwrap();
            let gram = if r >= c { a.gram_cols() } else { a.gram_rows() };
            let ev = sym_eig(&gram).unwrap().eigenvalues;
            for (s, l) in sv.iter().zip(&ev) {
                assert!((s - l.max(0.0).sqrt()).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn binary_dump_layout() {
        let m = Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        let bytes = m.to_binary();
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(&bytes[..8], &1u64.to_le_bytes());
        assert_eq!(&bytes[8..16], &3u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &1.0f64.to_le_bytes());
        let back = Matrix::read_binary(&bytes[..]).unwrap();
        assert_eq!(back, m);
        assert!(Matrix::read_binary(&bytes[..20]).is_err());
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        assert!(matches!(
            Matrix::from_vec(1, 2, vec![1.0, f64::NAN]),
            Err(LinalgError::NonFinite { row: 0, col: 1 })
        ));
    }

    #[test]
    fn products_agree_with_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_matrix(&mut rng, 4, 3);
        let b = random_matrix(&mut rng, 3, 5);
        let c = a.matmul(&b).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let s: f64 = (0..3).map(|k| a[(i, k)] * b[(k, j)]).sum();
                assert!((c[(i, j)] - s).abs() < 1e-14);
            }
        }
        let at_a = a.t_matmul(&a).unwrap();
        assert!(at_a.sub(&a.gram_cols()).unwrap().max_abs() < 1e-14);
        let a_at = a.matmul_t(&a).unwrap();
        assert!(a_at.sub(&a.gram_rows()).unwrap().max_abs() < 1e-14);
    }
}
