//! Dense row-major matrices and the handful of kernels the trainer needs.
//!
//! Everything is `f64`. Kernels are written as plain loops ordered so the
//! innermost loop walks contiguous memory; that is enough for desk-sized
//! layers.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Matrix::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input; meant for
    /// literals in tests and examples.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
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
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols))
            .map(|i| self.data[i * self.cols + i])
            .sum()
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &Matrix, factor: f64) -> Result<()> {
        self.check_same_shape("add_scaled", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
        Ok(())
    }

    /// Adds `value` to every diagonal entry.
    pub fn add_diagonal(&mut self, value: f64) {
        for i in 0..self.rows.min(self.cols) {
            self.data[i * self.cols + i] += value;
        }
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, v) in sums.iter_mut().zip(self.row(i)) {
                *s += v;
            }
        }
        sums
    }

    /// Largest absolute deviation from symmetry.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    fn check_same_shape(&self, op: &'static str, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut c = Matrix::zeros(a.rows, b.cols);
    gemm(
        a.rows,
        a.cols,
        b.cols,
        a,
        (a.cols, 1),
        b,
        (b.cols, 1),
        &mut c,
    );
    Ok(c)
}

/// `aᵀ · b` without materialising the transpose.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul_tn",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut c = Matrix::zeros(a.cols, b.cols);
    gemm(
        a.cols,
        a.rows,
        b.cols,
        a,
        (1, a.cols),
        b,
        (b.cols, 1),
        &mut c,
    );
    Ok(c)
}

/// `a · bᵀ` without materialising the transpose.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::ShapeMismatch {
            op: "matmul_nt",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut c = Matrix::zeros(a.rows, b.rows);
    gemm(
        a.rows,
        a.cols,
        b.rows,
        a,
        (a.cols, 1),
        b,
        (1, b.cols),
        &mut c,
    );
    Ok(c)
}

/// `c = a · b` for an `m × k` by `k × n` product, with operands addressed by
/// (row, column) strides so transposed views cost nothing.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &Matrix,
    (rsa, csa): (usize, usize),
    b: &Matrix,
    (rsb, csb): (usize, usize),
    c: &mut Matrix,
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: the strides above address exactly the `rows × cols` buffers of
    // `a`, `b` and `c`, whose lengths `Matrix` keeps equal to rows · cols.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the compiler vectorise the loop.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    norm2(m.as_slice())
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Lower-triangular Cholesky factor `L` with `S = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Matrix,
    /// `Lᵀ`, kept so back substitution reads rows.
    upper: Matrix,
}

/// Relative tolerance for the symmetry precondition.
const SYMMETRY_TOL: f64 = 1e-10;

impl Cholesky {
    pub fn factor(s: &Matrix) -> Result<Self> {
        let n = s.rows;
        if s.cols != n {
            return Err(Error::ShapeMismatch {
                op: "cholesky",
                left: s.shape(),
                right: s.shape(),
            });
        }
        let max_abs = s.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if s.asymmetry() > SYMMETRY_TOL * max_abs.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "cholesky: matrix is not symmetric (max deviation {:e})",
                s.asymmetry()
            )));
        }

        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let l_j = l.row(j)[..j].to_vec();
            let diag = s[(j, j)] - dot(&l_j, &l_j);
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    pivot: j,
                    value: diag,
                });
            }
            let d = diag.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let v = (s[(i, j)] - dot(&l.row(i)[..j], &l_j)) / d;
                l[(i, j)] = v;
            }
        }
        let upper = l.transpose();
        Ok(Cholesky { lower: l, upper })
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    /// Solves `S X = rhs` column by column.
    pub fn solve(&self, rhs: &Matrix) -> Result<Matrix> {
        let n = self.lower.rows;
        if rhs.rows != n {
            return Err(Error::ShapeMismatch {
                op: "cholesky_solve",
                left: self.lower.shape(),
                right: rhs.shape(),
            });
        }
        let mut x = rhs.clone();
        self.solve_rows(&mut x);
        Ok(x)
    }

    /// Overwrites `x` with `S⁻¹ x`, sweeping whole rows so every update is a
    /// contiguous axpy across all right-hand sides.
    fn solve_rows(&self, x: &mut Matrix) {
        let n = self.lower.rows;
        let k = x.cols;
        let l = &self.lower;
        let data = x.as_mut_slice();
        // L y = b
        for i in 0..n {
            let (done, rest) = data.split_at_mut(i * k);
            let row = &mut rest[..k];
            for (j, &lij) in l.row(i)[..i].iter().enumerate() {
                if lij != 0.0 {
                    axpy(row, -lij, &done[j * k..(j + 1) * k]);
                }
            }
            let inv = 1.0 / l[(i, i)];
            row.iter_mut().for_each(|v| *v *= inv);
        }
        // Lᵀ x = y
        let u = &self.upper;
        for i in (0..n).rev() {
            let (head, done) = data.split_at_mut((i + 1) * k);
            let row = &mut head[i * k..];
            for (j, &uij) in u.row(i)[i + 1..].iter().enumerate() {
                if uij != 0.0 {
                    axpy(row, -uij, &done[j * k..(j + 1) * k]);
                }
            }
            let inv = 1.0 / u[(i, i)];
            row.iter_mut().for_each(|v| *v *= inv);
        }
    }

    /// Solves `S x = b` in place for one vector.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.lower.rows;
        let l = &self.lower;
        // L y = b
        for i in 0..n {
            let s = b[i] - dot(&l.row(i)[..i], &b[..i]);
            b[i] = s / l[(i, i)];
        }
        // Lᵀ x = y
        let u = &self.upper;
        for i in (0..n).rev() {
            let s = b[i] - dot(&u.row(i)[i + 1..], &b[i + 1..]);
            b[i] = s / u[(i, i)];
        }
    }

    /// Solves `X S = rhs` for `X`, i.e. right-multiplies by `S⁻¹`.
    pub fn solve_right(&self, rhs: &Matrix) -> Result<Matrix> {
        let n = self.lower.rows;
        if rhs.cols != n {
            return Err(Error::ShapeMismatch {
                op: "cholesky_solve_right",
                left: rhs.shape(),
                right: self.lower.shape(),
            });
        }
        // S is symmetric, so Xᵀ = S⁻¹ rhsᵀ.
        let mut xt = rhs.transpose();
        self.solve_rows(&mut xt);
        Ok(xt.transpose())
    }
}

/// Solves `s · X = rhs` for symmetric positive-definite `s`.
pub fn cholesky_solve(s: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    Cholesky::factor(s)?.solve(rhs)
}
