//! Small dense complex linear algebra.
//!
//! Only what the optimizer needs: LU with partial pivoting for inversion,
//! linear solves and `log|det|`, plus a handful of products. Matrices here
//! are at most a few channels wide, so everything is row-major `Vec` storage.

use std::fmt;
use std::ops::{Index, IndexMut, Mul};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Pivots below this fraction of the largest input magnitude are treated as zero.
pub const SINGULARITY_THRESHOLD: f64 = 1e-13;

#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for c in 0..self.cols {
                let z = self[(r, c)];
                write!(f, "{:+.6e}{:+.6e}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl ComplexMatrix {
    /// Builds a matrix from row-major entries, rejecting non-finite values.
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("matrix entry".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Complex64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_diag(diag: &[Complex64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(d, 0.0);
        }
        m
    }

    /// Outer product `a b^H`.
    pub fn outer(a: &[Complex64], b: &[Complex64]) -> Self {
        let mut m = Self::zeros(a.len(), b.len());
        for (r, &ar) in a.iter().enumerate() {
            for (c, &bc) in b.iter().enumerate() {
                m[(r, c)] = ar * bc.conj();
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [Complex64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<Complex64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(c, r)] = self[(r, c)].conj();
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    /// `self += s * a a^H`, the rank-one Hermitian accumulation used for
    /// weighted covariance sums.
    pub fn add_weighted_outer(&mut self, s: f64, a: &[Complex64]) {
        debug_assert_eq!(self.rows, a.len());
        debug_assert_eq!(self.cols, a.len());
        for r in 0..self.rows {
            let ar = a[r] * s;
            for c in 0..self.cols {
                self.data[r * self.cols + c] += ar * a[c].conj();
            }
        }
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn lu(&self) -> Result<Lu> {
        Lu::factor(self)
    }

    /// Solves `self * x = b`.
    pub fn solve(&self, b: &[Complex64]) -> Result<Vec<Complex64>> {
        Ok(self.lu()?.solve(b))
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;

    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.data[r * self.cols + c]
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.cols, rhs.rows, "inner dimensions differ");
        let mut out = ComplexMatrix::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                for c in 0..rhs.cols {
                    out.data[r * rhs.cols + c] += a * rhs[(k, c)];
                }
            }
        }
        out
    }
}

/// Packed LU factors `P A = L U` with unit-diagonal `L`.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<Complex64>,
    perm: Vec<usize>,
    swaps: usize,
}

impl Lu {
    fn factor(a: &ComplexMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "LU of a non-square {}x{} matrix",
                a.rows, a.cols
            )));
        }
        let n = a.rows;
        let scale = a.max_abs();
        if n == 0 {
            return Ok(Self { n, lu: Vec::new(), perm: Vec::new(), swaps: 0 });
        }
        if !scale.is_finite() {
            return Err(Error::NonFinite("matrix entry".into()));
        }
        let tol = SINGULARITY_THRESHOLD * scale;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut swaps = 0;

        for k in 0..n {
            let (p, pmag) = (k..n)
                .map(|r| (r, lu[r * n + k].norm()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmag <= tol || pmag == 0.0 {
                return Err(Error::SingularMatrix);
            }
            if p != k {
                for c in 0..n {
                    lu.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
                swaps += 1;
            }
            let pivot = lu[k * n + k];
            for r in k + 1..n {
                let f = lu[r * n + k] / pivot;
                lu[r * n + k] = f;
                for c in k + 1..n {
                    let u = lu[k * n + c];
                    lu[r * n + c] -= f * u;
                }
            }
        }
        Ok(Self { n, lu, perm, swaps })
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<Complex64> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            for c in 0..r {
                let l = self.lu[r * n + c];
                x[r] = x[r] - l * x[c];
            }
        }
        for r in (0..n).rev() {
            for c in r + 1..n {
                let u = self.lu[r * n + c];
                x[r] = x[r] - u * x[c];
            }
            x[r] /= self.lu[r * n + r];
        }
        x
    }

    pub fn inverse(&self) -> ComplexMatrix {
        let n = self.n;
        let mut inv = ComplexMatrix::zeros(n, n);
        let mut e = vec![Complex64::new(0.0, 0.0); n];
        for c in 0..n {
            e.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            e[c] = Complex64::new(1.0, 0.0);
            for (r, v) in self.solve(&e).into_iter().enumerate() {
                inv[(r, c)] = v;
            }
        }
        inv
    }

    pub fn log_abs_det(&self) -> f64 {
        (0..self.n).map(|k| self.lu[k * self.n + k].norm().ln()).sum()
    }

    pub fn det(&self) -> Complex64 {
        let sign = if self.swaps % 2 == 0 { 1.0 } else { -1.0 };
        (0..self.n).fold(Complex64::new(sign, 0.0), |acc, k| acc * self.lu[k * self.n + k])
    }
}

pub fn invert(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    Ok(a.lu()?.inverse())
}

pub fn log_abs_det(a: &ComplexMatrix) -> Result<f64> {
    Ok(a.lu()?.log_abs_det())
}

/// `|q^H x|^2`.
pub fn hermitian_form(q: &[Complex64], x: &[Complex64]) -> Result<f64> {
    if q.len() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "hermitian form of lengths {} and {}",
            q.len(),
            x.len()
        )));
    }
    Ok(inner(q, x).norm_sqr())
}

/// `q^H x` without length checks.
#[inline]
pub fn inner(q: &[Complex64], x: &[Complex64]) -> Complex64 {
    q.iter().zip(x).map(|(a, b)| a.conj() * b).sum()
}
