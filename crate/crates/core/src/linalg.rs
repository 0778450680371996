//! Small dense linear algebra.
//!
//! Vectors, row-major matrices and symmetric matrices, plus a cyclic Jacobi
//! eigensolver, projection onto the PSD cone and a power-iteration estimate
//! of the spectral norm. Everything here targets matrices of order a few
//! dozen, where a deterministic sweep order matters more than speed.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("vector must have at least one entry")]
    Empty,
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("Jacobi eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:.3e})")]
    NoConvergence { sweeps: usize, off_norm: f64 },
}

/// A point of a finite-dimensional real Hilbert space.
///
/// Constructors reject empty or non-finite input. Arithmetic does not
/// re-check, so callers that may overflow should test [`DenseVector::is_finite`].
#[derive(Clone, PartialEq)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(entries: Vec<f64>) -> Result<Self, LinalgError> {
        if entries.is_empty() {
            return Err(LinalgError::Empty);
        }
        if let Some(i) = entries.iter().position(|x| !x.is_finite()) {
            return Err(LinalgError::NonFinite(i));
        }
        Ok(DenseVector(entries))
    }

    pub fn zeros(n: usize) -> Self {
        DenseVector(vec![0.0; n])
    }

    /// The canonical basis vector `e_i` (zero-based `i`).
    pub fn unit(n: usize, i: usize) -> Self {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        DenseVector(v)
    }

    pub(crate) fn from_vec_unchecked(entries: Vec<f64>) -> Self {
        DenseVector(entries)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn dot(&self, other: &DenseVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist_sq(&self, other: &DenseVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn scaled(&self, s: f64) -> DenseVector {
        DenseVector(self.0.iter().map(|x| s * x).collect())
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &DenseVector) {
        for (s, xi) in self.0.iter_mut().zip(&x.0) {
            *s += a * xi;
        }
    }

    pub fn check_dim(&self, expected: usize) -> Result<(), LinalgError> {
        if self.len() == expected {
            Ok(())
        } else {
            Err(LinalgError::Dimension { expected, got: self.len() })
        }
    }
}

impl fmt::Debug for DenseVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl Index<usize> for DenseVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for DenseVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for &DenseVector {
    type Output = DenseVector;
    fn add(self, rhs: &DenseVector) -> DenseVector {
        DenseVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &DenseVector {
    type Output = DenseVector;
    fn sub(self, rhs: &DenseVector) -> DenseVector {
        DenseVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl Neg for &DenseVector {
    type Output = DenseVector;
    fn neg(self) -> DenseVector {
        self.scaled(-1.0)
    }
}

impl Mul<&DenseVector> for f64 {
    type Output = DenseVector;
    fn mul(self, rhs: &DenseVector) -> DenseVector {
        rhs.scaled(self)
    }
}

impl AddAssign<&DenseVector> for DenseVector {
    fn add_assign(&mut self, rhs: &DenseVector) {
        self.axpy(1.0, rhs);
    }
}

impl SubAssign<&DenseVector> for DenseVector {
    fn sub_assign(&mut self, rhs: &DenseVector) {
        self.axpy(-1.0, rhs);
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Build from rows; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let r = rows.len();
        if r == 0 {
            return Err(LinalgError::Empty);
        }
        let c = rows[0].len();
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(LinalgError::Dimension { expected: c, got: row.len() });
            }
            data.extend_from_slice(row);
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(LinalgError::NonFinite(i));
        }
        Ok(Matrix { rows: r, cols: c, data })
    }

    /// Build from columns given as vectors of equal length.
    pub fn from_columns(cols: &[DenseVector]) -> Self {
        let rows = cols.first().map_or(0, |c| c.len());
        Matrix::from_fn(rows, cols.len(), |i, j| cols[j][i])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> DenseVector {
        DenseVector((0..self.rows).map(|i| self[(i, j)]).collect())
    }

    pub fn set_column(&mut self, j: usize, v: &DenseVector) {
        for i in 0..self.rows {
            self[(i, j)] = v[i];
        }
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn mul_vec(&self, x: &DenseVector) -> DenseVector {
        debug_assert_eq!(x.len(), self.cols);
        DenseVector((0..self.rows).map(|i| dot(self.row(i), x.as_slice())).collect())
    }

    /// `selfᵀ x` without forming the transpose.
    pub fn tmul_vec(&self, x: &DenseVector) -> DenseVector {
        debug_assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let xi = x[i];
            if xi != 0.0 {
                for (o, a) in out.iter_mut().zip(self.row(i)) {
                    *o += a * xi;
                }
            }
        }
        DenseVector(out)
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self[(i, l)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[l * other.cols + j];
                }
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| s * x).collect() }
    }

    pub fn frobenius_norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    /// `‖selfᵀ self − I‖_F`, the deviation from orthonormal columns.
    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.transpose().matmul(self);
        let mut s = 0.0;
        for i in 0..g.rows {
            for j in 0..g.cols {
                let d = g[(i, j)] - if i == j { 1.0 } else { 0.0 };
                s += d * d;
            }
        }
        s.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Real symmetric matrix with full dense storage.
///
/// The only writer is [`SymMatrix::set`], which updates both triangles, so
/// the stored matrix is exactly symmetric.
#[derive(Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut s = SymMatrix::zeros(n);
        for i in 0..n {
            s.set(i, i, 1.0);
        }
        s
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut s = SymMatrix::zeros(d.len());
        for (i, &x) in d.iter().enumerate() {
            s.set(i, i, x);
        }
        s
    }

    /// Build from the upper triangle produced by `f(i, j)` with `i <= j`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut s = SymMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                s.set(i, j, f(i, j));
            }
        }
        s
    }

    /// Symmetrize a square matrix as `(M + Mᵀ)/2`.
    pub fn from_matrix(m: &Matrix) -> Result<Self, LinalgError> {
        if m.rows() != m.cols() {
            return Err(LinalgError::Dimension { expected: m.rows(), got: m.cols() });
        }
        Ok(SymMatrix::from_fn(m.rows(), |i, j| 0.5 * (m[(i, j)] + m[(j, i)])))
    }

    /// `a aᵀ`
    pub fn outer(a: &[f64]) -> Self {
        SymMatrix::from_fn(a.len(), |i, j| a[i] * a[j])
    }

    /// Symmetric outer product `a ⊙ b = (abᵀ + baᵀ)/2`.
    pub fn sym_outer(a: &[f64], b: &[f64]) -> Self {
        SymMatrix::from_fn(a.len(), |i, j| 0.5 * (a[i] * b[j] + b[i] * a[j]))
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    /// Row-major storage of the full matrix.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix { rows: self.n, cols: self.n, data: self.data.clone() }
    }

    /// Frobenius inner product `tr(self · other)`.
    pub fn frob_dot(&self, other: &SymMatrix) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn frob_norm(&self) -> f64 {
        self.frob_dot(self).sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn scaled(&self, s: f64) -> SymMatrix {
        SymMatrix { n: self.n, data: self.data.iter().map(|x| s * x).collect() }
    }

    /// `self += a * other`
    pub fn add_scaled(&mut self, a: f64, other: &SymMatrix) {
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        let mut out = self.clone();
        out.add_scaled(-1.0, other);
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| dot(self.row(i), x)).collect()
    }

    /// `xᵀ S x`
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul_vec(x))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `Q diag(λ) Qᵀ` with `Q` given by columns.
    pub fn from_eigen(values: &[f64], q: &Matrix) -> SymMatrix {
        let n = q.rows();
        let mut s = SymMatrix::zeros(n);
        for (k, &lam) in values.iter().enumerate() {
            if lam == 0.0 {
                continue;
            }
            for i in 0..n {
                let a = lam * q[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in i..n {
                    let v = s.get(i, j) + a * q[(j, k)];
                    s.data[i * n + j] = v;
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                s.data[i * n + j] = s.data[j * n + i];
            }
        }
        s
    }
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "SymMatrix {} [", self.n)?;
        for i in 0..self.n {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

/// Eigenvalues in descending order with eigenvectors as matrix columns.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: DenseVector,
    pub vectors: Matrix,
    pub sweeps: usize,
}

impl SymEig {
    pub fn reconstruct(&self) -> SymMatrix {
        SymMatrix::from_eigen(self.values.as_slice(), &self.vectors)
    }
}

pub const DEFAULT_EIG_TOL: f64 = 1e-12;
pub const MAX_SWEEPS: usize = 100;

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Stops once the off-diagonal Frobenius norm drops to `tol · ‖S‖_F`.
pub fn sym_eig(s: &SymMatrix, tol: f64) -> Result<SymEig, LinalgError> {
    jacobi(s.data.clone(), s.n, Matrix::identity(s.n), tol, s.frob_norm())
}

/// Same as [`sym_eig`] but starts the rotation from a previous eigenbasis
/// `q0`. When `S` is close to a matrix that `q0` diagonalizes, one or two
/// sweeps suffice.
pub fn sym_eig_warm(s: &SymMatrix, q0: &Matrix, tol: f64) -> Result<SymEig, LinalgError> {
    let n = s.n;
    if q0.rows() != n || q0.cols() != n {
        return Err(LinalgError::Dimension { expected: n, got: q0.rows() });
    }
    // A = Q0ᵀ S Q0
    let sq = s.to_matrix().matmul(q0);
    let a = q0.transpose().matmul(&sq);
    let mut data = a.data;
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (data[i * n + j] + data[j * n + i]);
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    jacobi(data, n, q0.clone(), tol, s.frob_norm())
}

fn off_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            s += a[i * n + j] * a[i * n + j];
        }
    }
    (2.0 * s).sqrt()
}

fn jacobi(mut a: Vec<f64>, n: usize, mut v: Matrix, tol: f64, scale: f64) -> Result<SymEig, LinalgError> {
    if a.iter().any(|x| !x.is_finite()) {
        let i = a.iter().position(|x| !x.is_finite()).unwrap_or(0);
        return Err(LinalgError::NonFinite(i));
    }
    let target = tol * scale;
    let mut sweeps = 0;
    loop {
        let off = off_norm(&a, n);
        if off <= target || off == 0.0 {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(LinalgError::NoConvergence { sweeps, off_norm: off });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    let nkp = c * akp - s * akq;
                    let nkq = s * akp + c * akq;
                    a[k * n + p] = nkp;
                    a[p * n + k] = nkp;
                    a[k * n + q] = nkq;
                    a[q * n + k] = nkq;
                }
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values = DenseVector(order.iter().map(|&i| a[i * n + i]).collect());
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymEig { values, vectors, sweeps })
}

/// Which closed convex cone to project onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeSign {
    /// `S^n_+`
    Plus,
    /// `−S^n_+`
    Minus,
}

fn clip(values: &[f64], sign: ConeSign) -> Vec<f64> {
    values
        .iter()
        .map(|&l| match sign {
            ConeSign::Plus => l.max(0.0),
            ConeSign::Minus => l.min(0.0),
        })
        .collect()
}

/// Frobenius-nearest point of `S^n_+` (or `−S^n_+`).
pub fn project_psd(s: &SymMatrix, sign: ConeSign) -> Result<SymMatrix, LinalgError> {
    let eig = sym_eig(s, DEFAULT_EIG_TOL)?;
    Ok(SymMatrix::from_eigen(&clip(eig.values.as_slice(), sign), &eig.vectors))
}

/// [`project_psd`] with a warm-started eigensolve; returns the eigenbasis for
/// the next call.
pub fn project_psd_warm(
    s: &SymMatrix,
    sign: ConeSign,
    q0: &Matrix,
    tol: f64,
) -> Result<(SymMatrix, SymEig), LinalgError> {
    let eig = sym_eig_warm(s, q0, tol)?;
    let proj = SymMatrix::from_eigen(&clip(eig.values.as_slice(), sign), &eig.vectors);
    Ok((proj, eig))
}

/// Largest singular value of `m` by power iteration on `mᵀm`.
///
/// The start vector is a fixed pseudo-random draw so the estimate is
/// deterministic. Iterates until the Rayleigh quotient changes by less than
/// `tol` relative.
pub fn spectral_norm(m: &Matrix, tol: f64) -> Result<f64, LinalgError> {
    if let Some(i) = m.data.iter().position(|x| !x.is_finite()) {
        return Err(LinalgError::NonFinite(i));
    }
    if m.cols == 0 || m.rows == 0 {
        return Ok(0.0);
    }
    let mut rng = SplitMix64::new(0x5EED_0F_5EC7);
    let mut x = DenseVector(rng.normal_vec(m.cols));
    let nx = x.norm();
    x = x.scaled(1.0 / nx);
    let mut last = 0.0f64;
    for _ in 0..100_000 {
        let y = m.tmul_vec(&m.mul_vec(&x));
        let rq = x.dot(&y);
        let ny = y.norm();
        if ny == 0.0 {
            return Ok(0.0);
        }
        x = y.scaled(1.0 / ny);
        if (rq - last).abs() <= tol * rq.abs() {
            // ny approximates the top eigenvalue of mᵀm from above rq
            return Ok(ny.max(rq).sqrt());
        }
        last = rq;
    }
    Ok(last.sqrt())
}
