//! Nonexpansive operators and their ground truth.
//!
//! An [`OperatorSpec`] bundles a map `T`, its dimension, and optionally the
//! infimal displacement vector `v` and a point `x⋆` with `x⋆ − Tx⋆ = v`.

use std::fmt;
use std::sync::Arc;

use crate::linalg::{DenseVector, LinalgError, Matrix};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OperatorError {
    #[error("dimension mismatch: operator has dimension {expected}, point has {got}")]
    Dimension { expected: usize, got: usize },
    #[error("worst-case instance needs alpha != 0")]
    ZeroAlpha,
    #[error("worst-case instance needs k >= 1")]
    ZeroK,
    #[error("rotation matrix is not orthonormal (defect {0:.3e})")]
    NotOrthonormal(f64),
    #[error("rotation matrix has {got} columns, inner operator has dimension {expected}")]
    RotationShape { expected: usize, got: usize },
    #[error("affine operator: matrix is {rows}x{cols}, offset has length {len}")]
    AffineShape { rows: usize, cols: usize, len: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// A self-map supplied from outside this module (used by the PG-EXTRA
/// operator). Implementations must be deterministic and thread safe.
pub trait FixedPointMap: Send + Sync {
    fn dimension(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]);
    fn name(&self) -> String;
}

#[derive(Clone)]
pub enum OperatorKind {
    /// `Tx = Ax + b`
    Affine { a: Matrix, b: DenseVector },
    /// `Tx = x − v`
    Translation { v: DenseVector },
    /// `T(x, y, z) = (−y, x, z − 1)`
    RotationShift,
    /// Hard instance for span methods: residual `Mx + αe₁ + ‖v‖e_{k+1}`.
    WorstCase { k: usize, v_norm: f64, alpha: f64 },
    /// `T_U(y) = U T Uᵀ(y − x0) + x0`
    Rotated { inner: Box<OperatorSpec>, u: Matrix, x0: DenseVector },
    Composite(Arc<dyn FixedPointMap>),
}

impl fmt::Debug for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OperatorKind::Affine { a, .. } => write!(f, "Affine({}x{})", a.rows(), a.cols()),
            OperatorKind::Translation { v } => write!(f, "Translation({v:?})"),
            OperatorKind::RotationShift => write!(f, "RotationShift"),
            OperatorKind::WorstCase { k, v_norm, alpha } => {
                write!(f, "WorstCase(k={k}, v_norm={v_norm}, alpha={alpha})")
            }
            OperatorKind::Rotated { inner, u, .. } => {
                write!(f, "Rotated({:?}, {}x{})", inner.kind, u.rows(), u.cols())
            }
            OperatorKind::Composite(m) => write!(f, "Composite({})", m.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub v: DenseVector,
    pub x_star: Option<DenseVector>,
}

#[derive(Debug, Clone)]
pub struct OperatorSpec {
    pub kind: OperatorKind,
    pub dimension: usize,
    pub ground_truth: Option<GroundTruth>,
}

impl OperatorSpec {
    pub fn evaluate(&self, x: &DenseVector) -> Result<DenseVector, OperatorError> {
        if x.len() != self.dimension {
            return Err(OperatorError::Dimension { expected: self.dimension, got: x.len() });
        }
        Ok(self.eval_unchecked(x))
    }

    pub fn residual(&self, x: &DenseVector) -> Result<DenseVector, OperatorError> {
        let tx = self.evaluate(x)?;
        Ok(x - &tx)
    }

    fn eval_unchecked(&self, x: &DenseVector) -> DenseVector {
        match &self.kind {
            OperatorKind::Affine { a, b } => {
                let mut y = a.mul_vec(x);
                y += b;
                y
            }
            OperatorKind::Translation { v } => x - v,
            OperatorKind::RotationShift => {
                DenseVector::from_vec_unchecked(vec![-x[1], x[0], x[2] - 1.0])
            }
            OperatorKind::WorstCase { k, v_norm, alpha } => {
                // Tx = x − r(x) = (I − M)x − αe₁ − ‖v‖e_{k+1}, and I − M is the
                // signed permutation e_i ↦ e_{i+1} (i < k), e_k ↦ −e₁, e_{k+1} ↦ e_{k+1}.
                let k = *k;
                let mut y = vec![0.0; k + 1];
                y[0] = -x[k - 1];
                for i in 1..k {
                    y[i] = x[i - 1];
                }
                y[k] = x[k];
                y[0] -= alpha;
                y[k] -= v_norm;
                DenseVector::from_vec_unchecked(y)
            }
            OperatorKind::Rotated { inner, u, x0 } => {
                let z = u.tmul_vec(&(x - x0));
                let tz = inner.eval_unchecked(&z);
                let mut y = u.mul_vec(&tz);
                y += x0;
                y
            }
            OperatorKind::Composite(m) => {
                let mut out = vec![0.0; self.dimension];
                m.apply(x.as_slice(), &mut out);
                DenseVector::from_vec_unchecked(out)
            }
        }
    }

    pub fn x_star(&self) -> Option<&DenseVector> {
        self.ground_truth.as_ref().and_then(|g| g.x_star.as_ref())
    }

    pub fn idv(&self) -> Option<&DenseVector> {
        self.ground_truth.as_ref().map(|g| &g.v)
    }

    /// Short human-readable label.
    pub fn label(&self) -> String {
        match &self.kind {
            OperatorKind::Affine { .. } => format!("affine(d={})", self.dimension),
            OperatorKind::Translation { .. } => format!("translation(d={})", self.dimension),
            OperatorKind::RotationShift => "rotation-shift".into(),
            OperatorKind::WorstCase { k, .. } => format!("worst-case(k={k})"),
            OperatorKind::Rotated { inner, .. } => format!("rotated[{}](d={})", inner.label(), self.dimension),
            OperatorKind::Composite(m) => m.name(),
        }
    }
}

pub fn make_affine(a: Matrix, b: DenseVector, ground_truth: Option<GroundTruth>) -> Result<OperatorSpec, OperatorError> {
    if a.rows() != a.cols() || a.rows() != b.len() {
        return Err(OperatorError::AffineShape { rows: a.rows(), cols: a.cols(), len: b.len() });
    }
    let dimension = b.len();
    Ok(OperatorSpec { kind: OperatorKind::Affine { a, b }, dimension, ground_truth })
}

/// `Tx = x − v`; every point is a minimizer of the displacement, so `x⋆ = 0`
/// is attached.
pub fn make_translation(v: DenseVector) -> OperatorSpec {
    let d = v.len();
    OperatorSpec {
        kind: OperatorKind::Translation { v: v.clone() },
        dimension: d,
        ground_truth: Some(GroundTruth { v, x_star: Some(DenseVector::zeros(d)) }),
    }
}

/// Rotation by a quarter turn in the first two coordinates combined with a
/// unit shift in the third. The residual range is `R² × {1}`, so `v = e₃`,
/// and the origin attains it.
pub fn make_counterexample() -> OperatorSpec {
    OperatorSpec {
        kind: OperatorKind::RotationShift,
        dimension: 3,
        ground_truth: Some(GroundTruth {
            v: DenseVector::unit(3, 2),
            x_star: Some(DenseVector::zeros(3)),
        }),
    }
}

/// Hard instance of dimension `k + 1` for span methods.
///
/// The residual is `r(x) = Mx + αe₁ + v_norm·e_{k+1}` where row 1 of `M` is
/// `e₁ + e_k`, row `i` (2 ≤ i ≤ k) is `e_i − e_{i−1}` and row `k+1` is zero.
/// Ground truth: `v = v_norm·e_{k+1}` and `x⋆ = −(α/2)(e₁ + … + e_k)`.
pub fn make_worst_case(k: usize, v_norm: f64, alpha: f64) -> Result<OperatorSpec, OperatorError> {
    if k == 0 {
        return Err(OperatorError::ZeroK);
    }
    if alpha == 0.0 {
        return Err(OperatorError::ZeroAlpha);
    }
    let mut v = DenseVector::zeros(k + 1);
    v[k] = v_norm;
    let mut xs = DenseVector::zeros(k + 1);
    for i in 0..k {
        xs[i] = -alpha / 2.0;
    }
    Ok(OperatorSpec {
        kind: OperatorKind::WorstCase { k, v_norm, alpha },
        dimension: k + 1,
        ground_truth: Some(GroundTruth { v, x_star: Some(xs) }),
    })
}

/// Default `α` for the hard instance: `√k·v_norm`, or 1 when `v_norm = 0`.
pub fn default_worst_case_alpha(k: usize, v_norm: f64) -> f64 {
    if v_norm > 0.0 {
        (k as f64).sqrt() * v_norm
    } else {
        1.0
    }
}

/// The matrix `M` of the hard instance, for audits.
pub fn worst_case_matrix(k: usize) -> Matrix {
    let mut m = Matrix::zeros(k + 1, k + 1);
    m[(0, 0)] += 1.0;
    m[(0, k - 1)] += 1.0;
    for i in 1..k {
        m[(i, i - 1)] = -1.0;
        m[(i, i)] = 1.0;
    }
    m
}

/// Conjugate `op` by a matrix `u` with orthonormal columns, centred at `x0`.
///
/// `u` is `d × n` with `n = op.dimension`; the result acts on `R^d`.
pub fn rotate_operator(op: OperatorSpec, u: Matrix, x0: DenseVector) -> Result<OperatorSpec, OperatorError> {
    if u.cols() != op.dimension {
        return Err(OperatorError::RotationShape { expected: op.dimension, got: u.cols() });
    }
    if x0.len() != u.rows() {
        return Err(OperatorError::Dimension { expected: u.rows(), got: x0.len() });
    }
    let defect = u.orthonormality_defect();
    if defect > 1e-10 {
        return Err(OperatorError::NotOrthonormal(defect));
    }
    let ground_truth = op.ground_truth.as_ref().map(|g| GroundTruth {
        v: u.mul_vec(&g.v),
        x_star: g.x_star.as_ref().map(|xs| &x0 + &u.mul_vec(xs)),
    });
    let dimension = u.rows();
    Ok(OperatorSpec { kind: OperatorKind::Rotated { inner: Box::new(op), u, x0 }, dimension, ground_truth })
}

pub fn make_composite(map: Arc<dyn FixedPointMap>, ground_truth: Option<GroundTruth>) -> OperatorSpec {
    let dimension = map.dimension();
    OperatorSpec { kind: OperatorKind::Composite(map), dimension, ground_truth }
}

/// Random matrix with orthonormal columns (`rows × cols`, `cols ≤ rows`)
/// from Gram-Schmidt on Gaussian draws.
pub fn random_orthonormal(rows: usize, cols: usize, rng: &mut SplitMix64) -> Matrix {
    let mut basis: Vec<DenseVector> = Vec::with_capacity(cols);
    while basis.len() < cols {
        let mut c = DenseVector::from_vec_unchecked(rng.normal_vec(rows));
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for b in &basis {
                let p = c.dot(b);
                c.axpy(-p, b);
            }
        }
        let n = c.norm();
        if n > 1e-8 {
            basis.push(c.scaled(1.0 / n));
        }
    }
    Matrix::from_columns(&basis)
}

/// Random nonexpansive affine operator with a known `x⋆` and, when
/// `fixed_dim > 0`, a nonzero infimal displacement vector.
///
/// Built as `A = Q (I_r ⊕ B) Qᵀ` with `Q` orthogonal and `B` either a
/// rotation without eigenvalue 1 or a Gaussian matrix scaled to spectral
/// norm `ρ ∈ [0.5, 0.999]`. The first `r` columns of `Q` span the kernel of
/// `I − A` and its orthogonal complement of the range, so `v` drawn there is
/// the minimum-norm residual. `b` is then chosen so that `x⋆ − Tx⋆ = v`.
pub fn random_affine_with_solution(dim: usize, fixed_dim: usize, rng: &mut SplitMix64) -> OperatorSpec {
    assert!(fixed_dim < dim, "need a nontrivial moving part");
    let q = random_orthonormal(dim, dim, rng);
    let m = dim - fixed_dim;
    let mut core = Matrix::identity(dim);
    let rotation = rng.next_f64() < 0.5;
    if rotation {
        // block rotations by angles in [0.2, π − 0.2]; an odd leftover gets −1
        let mut i = fixed_dim;
        while i + 1 < dim {
            let th = rng.uniform(0.2, std::f64::consts::PI - 0.2);
            core[(i, i)] = th.cos();
            core[(i, i + 1)] = -th.sin();
            core[(i + 1, i)] = th.sin();
            core[(i + 1, i + 1)] = th.cos();
            i += 2;
        }
        if i < dim {
            core[(i, i)] = -1.0;
        }
    } else {
        let g = Matrix::from_fn(m, m, |_, _| rng.normal());
        let rho = rng.uniform(0.5, 0.999);
        let s = crate::linalg::spectral_norm(&g, 1e-14).expect("finite draw");
        // power iteration can undershoot slightly; the safety factor keeps ‖B‖ ≤ ρ(1+1e-6) < 1
        let g = g.scaled(rho / (s * (1.0 + 1e-6)));
        for i in 0..m {
            for j in 0..m {
                core[(fixed_dim + i, fixed_dim + j)] = g[(i, j)];
            }
        }
    }
    let a = q.matmul(&core).matmul(&q.transpose());
    let mut v = DenseVector::zeros(dim);
    for j in 0..fixed_dim {
        let c = rng.normal();
        v.axpy(c, &q.column(j));
    }
    let x_star = DenseVector::from_vec_unchecked(rng.normal_vec(dim));
    // b = x⋆ − A x⋆ − v
    let b = &(&x_star - &a.mul_vec(&x_star)) - &v;
    OperatorSpec {
        kind: OperatorKind::Affine { a, b },
        dimension: dim,
        ground_truth: Some(GroundTruth { v, x_star: Some(x_star) }),
    }
}

/// Seeded batch of random affine operators used by audits and tests.
pub fn affine_zoo(count: usize, seed: u64) -> Vec<OperatorSpec> {
    let mut rng = SplitMix64::new(seed);
    (0..count)
        .map(|i| {
            let mut r = rng.fork(i as u64);
            let dim = 4 + r.below(9);
            let fixed = 1 + r.below(dim - 2);
            random_affine_with_solution(dim, fixed, &mut r)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonexpansiveAudit {
    pub samples: usize,
    pub max_ratio: f64,
    pub flagged: bool,
}

/// Sampled check of `‖Tx − Ty‖ ≤ ‖x − y‖`; flags ratios above `1 + 1e−9`.
pub fn audit_nonexpansive(op: &OperatorSpec, samples: usize, seed: u64) -> Result<NonexpansiveAudit, OperatorError> {
    let mut rng = SplitMix64::new(seed);
    let d = op.dimension;
    let mut max_ratio: f64 = 0.0;
    for s in 0..samples {
        let scale = 10f64.powi((s % 5) as i32 - 2);
        let x = DenseVector::from_vec_unchecked(rng.normal_vec(d)).scaled(scale * 3.0);
        let y = &x + &DenseVector::from_vec_unchecked(rng.normal_vec(d)).scaled(scale);
        let dxy = x.dist_sq(&y).sqrt();
        if dxy == 0.0 {
            continue;
        }
        let dt = op.evaluate(&x)?.dist_sq(&op.evaluate(&y)?).sqrt();
        max_ratio = max_ratio.max(dt / dxy);
    }
    Ok(NonexpansiveAudit { samples, max_ratio, flagged: max_ratio > 1.0 + 1e-9 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(x: &[f64]) -> DenseVector {
        DenseVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn basic_examples() {
        let t = make_translation(dv(&[0.0, 0.0, 1.0]));
        assert_eq!(t.evaluate(&dv(&[5.0, 5.0, 5.0])).unwrap(), dv(&[5.0, 5.0, 4.0]));
        assert_eq!(t.residual(&dv(&[-3.0, 2.0, 9.0])).unwrap(), dv(&[0.0, 0.0, 1.0]));
        let c = make_counterexample();
        assert_eq!(c.evaluate(&dv(&[1.0, 0.0, 0.0])).unwrap(), dv(&[0.0, 1.0, -1.0]));
        assert_eq!(c.residual(&dv(&[0.0, 0.0, 0.0])).unwrap(), dv(&[0.0, 0.0, 1.0]));
        let id = make_affine(Matrix::identity(3), DenseVector::zeros(3), None).unwrap();
        assert_eq!(id.evaluate(&dv(&[1.5, -2.0, 0.25])).unwrap(), dv(&[1.5, -2.0, 0.25]));
        assert!(matches!(t.evaluate(&dv(&[1.0])), Err(OperatorError::Dimension { .. })));
    }

    #[test]
    fn worst_case_structure() {
        let w = make_worst_case(2, 1.0, 1.0).unwrap();
        assert_eq!(w.residual(&DenseVector::zeros(3)).unwrap(), dv(&[1.0, 0.0, 1.0]));
        // (I − M) columns for k = 3
        let m = worst_case_matrix(3);
        let i_m = Matrix::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.0 } - m[(i, j)]);
        assert_eq!(i_m.column(0), DenseVector::unit(4, 1));
        assert_eq!(i_m.column(2), DenseVector::unit(4, 0).scaled(-1.0));
        assert_eq!(i_m.column(3), DenseVector::unit(4, 3));
        assert!(i_m.orthonormality_defect() == 0.0);
        // residual formula agrees with the explicit matrix
        let op = make_worst_case(3, 0.7, -1.3).unwrap();
        let x = dv(&[0.3, -1.0, 2.0, 0.5]);
        let mut expect = m.mul_vec(&x);
        expect[0] += -1.3;
        expect[3] += 0.7;
        assert!(op.residual(&x).unwrap().dist_sq(&expect) < 1e-28);
        let xs = op.x_star().unwrap();
        assert!(op.residual(xs).unwrap().dist_sq(op.idv().unwrap()) < 1e-28);
        assert_eq!(make_worst_case(3, 1.0, 0.0).unwrap_err(), OperatorError::ZeroAlpha);
    }

    #[test]
    fn k_equals_one_instance() {
        let op = make_worst_case(1, 1.0, 2.0).unwrap();
        let xs = op.x_star().unwrap().clone();
        assert_eq!(op.residual(&xs).unwrap(), dv(&[0.0, 1.0]));
        assert_eq!(worst_case_matrix(1)[(0, 0)], 2.0);
    }

    #[test]
    fn rotation_identity_and_shape() {
        let op = make_counterexample();
        let r = rotate_operator(op.clone(), Matrix::identity(3), DenseVector::zeros(3)).unwrap();
        let x = dv(&[0.4, -0.2, 3.0]);
        assert_eq!(r.evaluate(&x).unwrap(), op.evaluate(&x).unwrap());
        let bad = Matrix::identity(3).scaled(2.0);
        assert!(matches!(rotate_operator(op, bad, DenseVector::zeros(3)), Err(OperatorError::NotOrthonormal(_))));
    }

    #[test]
    fn audits() {
        let t = make_translation(dv(&[1.0, 2.0]));
        let a = audit_nonexpansive(&t, 50, 1).unwrap();
        assert!((a.max_ratio - 1.0).abs() < 1e-12 && !a.flagged);
        let big = make_affine(Matrix::identity(3).scaled(1.5), DenseVector::zeros(3), None).unwrap();
        assert!(audit_nonexpansive(&big, 20, 1).unwrap().flagged);
    }

    #[test]
    fn zoo_ground_truth() {
        for op in affine_zoo(20, 42) {
            let g = op.ground_truth.as_ref().unwrap();
            let xs = g.x_star.as_ref().unwrap();
            assert!(op.residual(xs).unwrap().dist_sq(&g.v).sqrt() <= 1e-10);
            assert!(g.v.norm() > 0.0);
            assert!(!audit_nonexpansive(&op, 200, 9).unwrap().flagged);
        }
    }
}
