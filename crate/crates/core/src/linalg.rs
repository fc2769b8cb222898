//! Dense row-major `f64` matrices and the SPD solver behind the exact
//! inverse-Hessian mode.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Absolute tolerance for the symmetry check in [`solve_spd`].
pub const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
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

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                op: "Matrix::from_vec",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::LengthMismatch {
                    op: "Matrix::from_rows",
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
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

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on 0; a 0-column matrix has no data anyway
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    /// Copies the listed rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        matmul(self, other)
    }

    /// `self * v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                op: "matvec",
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: v.len(),
                right_cols: 1,
            });
        }
        Ok(self.row_iter().map(|r| dot(r, v)).collect())
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|x| *x *= c);
    }

    pub fn add_diagonal(&mut self, c: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += c;
        }
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| libm::fabs(a - b))
            .fold(0.0, f64::max)
    }

    /// `max |a_ij - a_ji|`, or infinity for a non-square matrix.
    pub fn max_asymmetry(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in i + 1..self.cols {
                worst = worst.max(libm::fabs(self[(i, j)] - self[(j, i)]));
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        norm2(&self.data)
    }
}

impl core::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::DimensionMismatch {
            op: "matmul",
            left_rows: a.rows,
            left_cols: a.cols,
            right_rows: b.rows,
            right_cols: b.cols,
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    if b.cols < 8 {
        // narrow output: contiguous dot products against the columns of b
        let bt = b.transpose();
        for i in 0..a.rows {
            for j in 0..b.cols {
                out.data[i * b.cols + j] = dot(a.row(i), bt.row(j));
            }
        }
        return Ok(out);
    }
    for i in 0..a.rows {
        let a_row = a.row(i);
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            for (o, &bkj) in out_row.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// `y += c * x`.
#[inline]
pub fn axpy(c: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * xi;
    }
}

/// Lower-triangular Cholesky factor `L` with `H = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    pub fn factor(h: &Matrix) -> Result<Self> {
        let n = h.rows;
        if h.cols != n {
            return Err(Error::DimensionMismatch {
                op: "cholesky",
                left_rows: h.rows,
                left_cols: h.cols,
                right_rows: h.cols,
                right_cols: h.rows,
            });
        }
        let asym = h.max_asymmetry();
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric {
                max_asymmetry: asym,
            });
        }
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = h[(j, j)] - dot(&l.row(j)[..j], &l.row(j)[..j]);
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            d = libm::sqrt(d);
            l[(j, j)] = d;
            for i in j + 1..n {
                let s = h[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j]);
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows
    }

    pub fn factor_matrix(&self) -> &Matrix {
        &self.l
    }

    /// Solves `L Lᵀ x = v`.
    pub fn solve(&self, v: &[f64]) -> Vec<f64> {
        let n = self.l.rows;
        assert_eq!(v.len(), n, "Cholesky::solve: rhs length");
        let mut y = v.to_vec();
        for i in 0..n {
            let s = dot(&self.l.row(i)[..i], &y[..i]);
            y[i] = (y[i] - s) / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for (k, yk) in y.iter().enumerate().skip(i + 1) {
                s -= self.l[(k, i)] * yk;
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }
}

/// Solves `H x = v` for symmetric positive definite `H`.
///
/// One step of iterative refinement is applied after the triangular solves.
pub fn solve_spd(h: &Matrix, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != h.rows {
        return Err(Error::DimensionMismatch {
            op: "solve_spd",
            left_rows: h.rows,
            left_cols: h.cols,
            right_rows: v.len(),
            right_cols: 1,
        });
    }
    let chol = Cholesky::factor(h)?;
    Ok(refined_solve(&chol, h, v))
}

pub(crate) fn refined_solve(chol: &Cholesky, h: &Matrix, v: &[f64]) -> Vec<f64> {
    let mut x = chol.solve(v);
    let hx = h.matvec(&x).expect("shape checked by factor");
    let r: Vec<f64> = v.iter().zip(&hx).map(|(a, b)| a - b).collect();
    let dx = chol.solve(&r);
    axpy(1.0, &dx, &mut x);
    x
}

/// `‖H x − v‖₂ / ‖v‖₂`.
pub fn relative_residual(h: &Matrix, x: &[f64], v: &[f64]) -> f64 {
    let hx = h.matvec(x).expect("residual shape");
    let r: Vec<f64> = hx.iter().zip(v).map(|(a, b)| a - b).collect();
    norm2(&r) / norm2(v).max(f64::MIN_POSITIVE)
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
pub fn power_iteration_max_eig(h: &Matrix, iters: usize) -> f64 {
    let n = h.rows;
    if n == 0 {
        return 0.0;
    }
    // deterministic, not orthogonal to any coordinate axis
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64) * 1e-3).collect();
    let mut lambda = 0.0;
    for _ in 0..iters {
        let y = h.matvec(&x).expect("square");
        let ny = norm2(&y);
        if ny == 0.0 {
            return 0.0;
        }
        lambda = dot(&x, &y) / dot(&x, &x);
        x = y.into_iter().map(|v| v / ny).collect();
    }
    lambda
}

/// Spectral condition estimate `λ_max / λ_min` of an SPD matrix, using power
/// iteration on `H` and on `H⁻¹` through an existing factorization.
pub fn condition_estimate(h: &Matrix, chol: &Cholesky, iters: usize) -> f64 {
    let n = h.rows;
    if n == 0 {
        return 1.0;
    }
    let max = power_iteration_max_eig(h, iters);
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64) * 1e-3).collect();
    let mut inv_max = 0.0;
    for _ in 0..iters {
        let y = chol.solve(&x);
        let ny = norm2(&y);
        inv_max = dot(&x, &y) / dot(&x, &x);
        x = y.into_iter().map(|v| v / ny).collect();
    }
    max * inv_max
}

/// Gershgorin upper bound on the spectral radius (max absolute row sum).
pub fn gershgorin_bound(h: &Matrix) -> f64 {
    h.row_iter()
        .map(|r| r.iter().map(|x| libm::fabs(*x)).sum::<f64>())
        .fold(0.0, f64::max)
}
