//! Hard instances and lower-bound audits.
//!
//! On the worst-case operator of dimension `k + 1` with `x⁰ = 0`, every
//! combination `Σ ν_i v^i` (with `Σ ν_i = 1`) of the first `k` residuals of a
//! span method stays far from `v`:
//!
//! ```text
//! ‖Σ ν_i v^i − v‖²       ≥ 4/k²     ‖x⁰ − x⋆‖²
//! (‖Σ ν_i v^i‖ − ‖v‖)²   ≥ 1/(2k²)  ‖x⁰ − x⋆‖²   (for α = √k‖v‖)
//! ```
//!
//! [`resisting_rotation`] extends this to arbitrary deterministic methods by
//! choosing the rotation adaptively, one column at a time, so that the
//! pulled-back iterates can only touch coordinates already revealed.

use crate::linalg::{DenseVector, Matrix};
use crate::operators::{rotate_operator, OperatorError, OperatorKind, OperatorSpec};
use crate::rng::SplitMix64;

/// Entries below this magnitude count as zero when reading supports.
pub const SUPPORT_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LowerBoundError {
    #[error("weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("trace lengths disagree: {iterates} iterates, {residuals} residuals, {weights} weights")]
    Lengths { iterates: usize, residuals: usize, weights: usize },
    #[error("empty trace")]
    Empty,
    #[error("span condition violated at iterate {index} (distance {distance:.3e})")]
    Span { index: usize, distance: f64 },
    #[error("operator is not a worst-case instance")]
    NotWorstCase,
    #[error("the bound needs x0 = 0")]
    NonzeroStart,
    #[error("trace has {got} iterates but the instance is built for k = {k}")]
    TraceLength { k: usize, got: usize },
    #[error("stored residual {index} disagrees with the operator by {error:.3e}")]
    ResidualMismatch { index: usize, error: f64 },
    #[error("ambient dimension {dim} is below 2K − 1 = {need}")]
    DimensionTooSmall { dim: usize, need: usize },
    #[error("Gram-Schmidt breakdown while choosing column {column} (residual norm {norm:.3e})")]
    GramSchmidt { column: usize, norm: f64 },
    #[error("inner operator must be worst_case(K) with K = {expected}")]
    InnerMismatch { expected: usize },
    #[error("‖v‖ = {given} does not match the inner instance's {inner}")]
    VNorm { given: f64, inner: f64 },
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Iterates `x^0..x^{k−1}` of a method, their residuals, and weights `ν`.
#[derive(Debug, Clone)]
pub struct SpanTrace {
    pub iterates: Vec<DenseVector>,
    pub residuals: Vec<DenseVector>,
    pub weights: Vec<f64>,
}

/// Incrementally maintained orthonormal basis.
#[derive(Debug, Clone, Default)]
struct Basis {
    vectors: Vec<DenseVector>,
}

impl Basis {
    fn project_out(&self, x: &DenseVector) -> DenseVector {
        let mut r = x.clone();
        for _ in 0..2 {
            for b in &self.vectors {
                let c = r.dot(b);
                r.axpy(-c, b);
            }
        }
        r
    }

    /// Add `x` if it has a component of relative size above `tol` outside the span.
    fn push(&mut self, x: &DenseVector, tol: f64) -> bool {
        let r = self.project_out(x);
        let n = r.norm();
        if n > tol * x.norm().max(f64::MIN_POSITIVE) && n > 0.0 {
            self.vectors.push(r.scaled(1.0 / n));
            true
        } else {
            false
        }
    }
}

impl SpanTrace {
    /// Validate `Σν = 1` (to 1e−12) and the span condition: each
    /// `x^{n+1} − x^0` lies within `1e−8·max(1, ‖x^{n+1} − x^0‖)` of
    /// `span{v^0, …, v^n}`.
    pub fn new(iterates: Vec<DenseVector>, residuals: Vec<DenseVector>, weights: Vec<f64>) -> Result<Self, LowerBoundError> {
        if iterates.is_empty() {
            return Err(LowerBoundError::Empty);
        }
        if iterates.len() != residuals.len() || iterates.len() != weights.len() {
            return Err(LowerBoundError::Lengths {
                iterates: iterates.len(),
                residuals: residuals.len(),
                weights: weights.len(),
            });
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(LowerBoundError::WeightSum(s));
        }
        let mut basis = Basis::default();
        for n in 0..iterates.len() - 1 {
            basis.push(&residuals[n], 1e-12);
            let d = &iterates[n + 1] - &iterates[0];
            let dist = basis.project_out(&d).norm();
            if dist > 1e-8 * d.norm().max(1.0) {
                return Err(LowerBoundError::Span { index: n + 1, distance: dist });
            }
        }
        Ok(SpanTrace { iterates, residuals, weights })
    }

    pub fn len(&self) -> usize {
        self.iterates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterates.is_empty()
    }

    /// `Σ ν_i v^i`
    pub fn combination(&self) -> DenseVector {
        combine(&self.residuals, &self.weights)
    }
}

fn combine(residuals: &[DenseVector], weights: &[f64]) -> DenseVector {
    let mut c = DenseVector::zeros(residuals[0].len());
    for (r, w) in residuals.iter().zip(weights) {
        c.axpy(*w, r);
    }
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowerBoundReport {
    pub k: usize,
    /// `‖Σν_i v^i − v‖²`
    pub dist_sq: f64,
    /// `4/k² · ‖x⁰ − x⋆‖²`
    pub dist_bound: f64,
    /// `(‖Σν_i v^i‖ − ‖v‖)²`
    pub gap_sq: f64,
    /// `1/(2k²) · ‖x⁰ − x⋆‖²`
    pub gap_bound: f64,
    /// The norm-gap bound is proven for `α = √k‖v‖` only.
    pub gap_applicable: bool,
    pub passed: bool,
}

fn report(k: usize, combo: &DenseVector, v: &DenseVector, r0_sq: f64, gap_applicable: bool) -> LowerBoundReport {
    let kf = k as f64;
    let dist_sq = combo.dist_sq(v);
    let gap_sq = (combo.norm() - v.norm()).powi(2);
    let dist_bound = 4.0 / (kf * kf) * r0_sq;
    let gap_bound = r0_sq / (2.0 * kf * kf);
    let dist_ok = dist_sq >= dist_bound - 1e-9;
    let gap_ok = !gap_applicable || gap_sq >= gap_bound - 1e-9;
    LowerBoundReport { k, dist_sq, dist_bound, gap_sq, gap_bound, gap_applicable, passed: dist_ok && gap_ok }
}

fn worst_case_params(op: &OperatorSpec) -> Result<(usize, f64, f64), LowerBoundError> {
    match op.kind {
        OperatorKind::WorstCase { k, v_norm, alpha } => Ok((k, v_norm, alpha)),
        _ => Err(LowerBoundError::NotWorstCase),
    }
}

fn gap_applies(k: usize, v_norm: f64, alpha: f64) -> bool {
    let target = (k as f64).sqrt() * v_norm;
    (alpha - target).abs() <= 1e-12 * target.abs().max(1.0)
}

/// Check both lower-bound inequalities for a span trace on a worst-case
/// instance started at the origin.
pub fn verify_lower_bound(op_worst: &OperatorSpec, trace: &SpanTrace) -> Result<LowerBoundReport, LowerBoundError> {
    let (k, v_norm, alpha) = worst_case_params(op_worst)?;
    if trace.len() != k {
        return Err(LowerBoundError::TraceLength { k, got: trace.len() });
    }
    if trace.iterates[0].as_slice().iter().any(|&x| x != 0.0) {
        return Err(LowerBoundError::NonzeroStart);
    }
    for (i, (x, r)) in trace.iterates.iter().zip(&trace.residuals).enumerate() {
        let err = op_worst.residual(x)?.dist_sq(r).sqrt();
        if err > 1e-10 * r.norm().max(1.0) {
            return Err(LowerBoundError::ResidualMismatch { index: i, error: err });
        }
    }
    let gt = op_worst.ground_truth.as_ref().ok_or(LowerBoundError::NotWorstCase)?;
    let xs = gt.x_star.as_ref().ok_or(LowerBoundError::NotWorstCase)?;
    let r0_sq = xs.norm_sq();
    Ok(report(k, &trace.combination(), &gt.v, r0_sq, gap_applies(k, v_norm, alpha)))
}

/// Run a span method given as a closure `(x⁰, residuals so far) → next
/// iterate` on `op` for `k` iterates and attach `weights`.
pub fn collect_trace(
    op: &OperatorSpec,
    alg: &mut dyn DeterministicAlgorithm,
    x0: &DenseVector,
    k: usize,
    weights: Vec<f64>,
) -> Result<SpanTrace, LowerBoundError> {
    let mut iterates = vec![x0.clone()];
    let mut residuals = vec![op.residual(x0)?];
    for _ in 1..k {
        let x = alg.next_query(x0, &residuals);
        residuals.push(op.residual(&x)?);
        iterates.push(x);
    }
    SpanTrace::new(iterates, residuals, weights)
}

/// A deterministic iteration that sees the operator only through residuals.
///
/// `next_query` receives `x⁰` and the residuals `v^0, …, v^{t−1}` of the
/// points queried so far and returns `x^t`.
pub trait DeterministicAlgorithm {
    fn name(&self) -> &str;
    fn next_query(&mut self, x0: &DenseVector, residuals: &[DenseVector]) -> DenseVector;
}

/// `x^{t} = x^{t−1} − v^{t−1}`
#[derive(Debug, Default)]
pub struct PicardAlgorithm {
    last: Option<DenseVector>,
}

impl DeterministicAlgorithm for PicardAlgorithm {
    fn name(&self) -> &str {
        "picard"
    }
    fn next_query(&mut self, x0: &DenseVector, residuals: &[DenseVector]) -> DenseVector {
        let prev = self.last.clone().unwrap_or_else(|| x0.clone());
        let x = &prev - residuals.last().expect("at least one residual");
        self.last = Some(x.clone());
        x
    }
}

/// `x^{t} = x⁰/(t+1) + t/(t+1) · (x^{t−1} − v^{t−1})`
#[derive(Debug, Default)]
pub struct OhmAlgorithm {
    last: Option<DenseVector>,
}

impl DeterministicAlgorithm for OhmAlgorithm {
    fn name(&self) -> &str {
        "ohm"
    }
    fn next_query(&mut self, x0: &DenseVector, residuals: &[DenseVector]) -> DenseVector {
        let t = residuals.len() as f64;
        let prev = self.last.clone().unwrap_or_else(|| x0.clone());
        let tx = &prev - residuals.last().expect("at least one residual");
        let mut x = x0.scaled(1.0 / (t + 1.0));
        x.axpy(t / (t + 1.0), &tx);
        self.last = Some(x.clone());
        x
    }
}

/// Heavy-ball style span method:
/// `x^{t} = x^{t−1} − a·v^{t−1} + b·(x^{t−1} − x^{t−2})`.
#[derive(Debug)]
pub struct HeavyBallAlgorithm {
    pub step: f64,
    pub momentum: f64,
    prev: Option<DenseVector>,
    last: Option<DenseVector>,
}

impl HeavyBallAlgorithm {
    pub fn new(step: f64, momentum: f64) -> Self {
        HeavyBallAlgorithm { step, momentum, prev: None, last: None }
    }
}

impl DeterministicAlgorithm for HeavyBallAlgorithm {
    fn name(&self) -> &str {
        "heavy-ball"
    }
    fn next_query(&mut self, x0: &DenseVector, residuals: &[DenseVector]) -> DenseVector {
        let last = self.last.clone().unwrap_or_else(|| x0.clone());
        let prev = self.prev.clone().unwrap_or_else(|| last.clone());
        let mut x = last.clone();
        x.axpy(-self.step, residuals.last().expect("at least one residual"));
        x.axpy(self.momentum, &(&last - &prev));
        self.prev = Some(last);
        self.last = Some(x.clone());
        x
    }
}

/// Result of the adaptive construction.
#[derive(Debug, Clone)]
pub struct ResistingResult {
    /// `T_U` acting on the ambient space.
    pub operator: OperatorSpec,
    /// `d × (K+1)` matrix with orthonormal columns.
    pub u: Matrix,
    pub iterates: Vec<DenseVector>,
    pub residuals: Vec<DenseVector>,
    /// `Uᵀ(x^t − x⁰)`
    pub pulled_back: Vec<DenseVector>,
}

/// Build a rotation `U` adaptively against `alg` so that the pulled-back
/// iterates `Uᵀ(x^t − x⁰)` are zero-respecting for `inner`.
///
/// `inner` must be `worst_case(K, ‖v‖, α)`; the column of `U` matching the
/// inner IDV coordinate (the last one) is `v/‖v‖`. New columns are drawn
/// from `seed` and made orthonormal to every chosen column and every
/// displacement `x^s − x⁰` seen so far. The algorithm is queried `K − 1`
/// times.
pub fn resisting_rotation(
    alg: &mut dyn DeterministicAlgorithm,
    inner: &OperatorSpec,
    x0: &DenseVector,
    v: &DenseVector,
    ambient_dim: usize,
    big_k: usize,
    seed: u64,
) -> Result<ResistingResult, LowerBoundError> {
    let (k, v_norm, _) = worst_case_params(inner)?;
    if k != big_k {
        return Err(LowerBoundError::InnerMismatch { expected: big_k });
    }
    let need = 2 * big_k - 1;
    if ambient_dim < need.max(big_k + 1) {
        return Err(LowerBoundError::DimensionTooSmall { dim: ambient_dim, need: need.max(big_k + 1) });
    }
    x0.check_dim(ambient_dim).map_err(|_| OperatorError::Dimension { expected: ambient_dim, got: x0.len() })?;
    v.check_dim(ambient_dim).map_err(|_| OperatorError::Dimension { expected: ambient_dim, got: v.len() })?;
    if (v.norm() - v_norm).abs() > 1e-12 * v_norm.max(1.0) {
        return Err(LowerBoundError::VNorm { given: v.norm(), inner: v_norm });
    }
    let n = big_k + 1;
    let mut rng = SplitMix64::new(seed);
    let mut columns: Vec<Option<DenseVector>> = vec![None; n];
    // span of chosen columns and displacements
    let mut w = Basis::default();

    let choose = |j: usize, columns: &mut Vec<Option<DenseVector>>, w: &mut Basis, rng: &mut SplitMix64| {
        for _ in 0..8 {
            let g = DenseVector::new(rng.normal_vec(ambient_dim)).expect("finite draw");
            let r = w.project_out(&g);
            let nr = r.norm();
            if nr > 1e-6 * g.norm() {
                let u = r.scaled(1.0 / nr);
                w.vectors.push(u.clone());
                columns[j] = Some(u);
                return Ok(());
            }
        }
        Err(LowerBoundError::GramSchmidt { column: j, norm: w.project_out(&DenseVector::unit(ambient_dim, 0)).norm() })
    };

    if v_norm > 0.0 {
        let u = v.scaled(1.0 / v_norm);
        w.vectors.push(u.clone());
        columns[n - 1] = Some(u);
    }

    let mut iterates = Vec::with_capacity(big_k);
    let mut residuals = Vec::with_capacity(big_k);
    let mut pulled_back = Vec::with_capacity(big_k);
    let mut x = x0.clone();
    for t in 0..big_k {
        if t > 0 {
            x = alg.next_query(x0, &residuals);
            x.check_dim(ambient_dim).map_err(|_| OperatorError::Dimension { expected: ambient_dim, got: x.len() })?;
            // later columns must be orthogonal to this displacement
            w.push(&(&x - x0), 1e-12);
        }
        let d = &x - x0;
        // z = Uᵀ(x − x⁰) over the chosen columns; unchosen columns will be
        // orthogonal to d, so their coordinates are zero.
        let mut z = DenseVector::zeros(n);
        for (j, c) in columns.iter().enumerate() {
            if let Some(c) = c {
                z[j] = c.dot(&d);
            }
        }
        let rz = inner.residual(&z)?;
        for j in 0..n {
            if columns[j].is_none() && rz[j].abs() > SUPPORT_THRESHOLD {
                choose(j, &mut columns, &mut w, &mut rng)?;
            }
        }
        // ambient residual (x − x⁰) − U z + U r(z)
        let mut res = d.clone();
        for (j, c) in columns.iter().enumerate() {
            if let Some(c) = c {
                res.axpy(rz[j] - z[j], c);
            }
        }
        iterates.push(x.clone());
        residuals.push(res);
        pulled_back.push(z);
    }
    for j in 0..n {
        if columns[j].is_none() {
            choose(j, &mut columns, &mut w, &mut rng)?;
        }
    }
    let cols: Vec<DenseVector> = columns.into_iter().map(|c| c.expect("all columns chosen")).collect();
    let u = Matrix::from_columns(&cols);
    let operator = rotate_operator(inner.clone(), u.clone(), x0.clone())?;
    Ok(ResistingResult { operator, u, iterates, residuals, pulled_back })
}

/// First `(t, j)` where the pulled-back iterate `z_t` has a coordinate `j`
/// outside the union of the supports of `r(z_0), …, r(z_{t−1})`.
pub fn zero_respecting_violation(inner: &OperatorSpec, pulled_back: &[DenseVector]) -> Result<Option<(usize, usize)>, LowerBoundError> {
    let n = inner.dimension;
    let mut support = vec![false; n];
    for (t, z) in pulled_back.iter().enumerate() {
        for j in 0..n {
            if z[j].abs() > SUPPORT_THRESHOLD && !support[j] {
                return Ok(Some((t, j)));
            }
        }
        let r = inner.residual(z)?;
        for j in 0..n {
            if r[j].abs() > SUPPORT_THRESHOLD {
                support[j] = true;
            }
        }
    }
    Ok(None)
}

/// Lower-bound inequalities for the ambient residuals of a resisting run.
pub fn verify_resisting(result: &ResistingResult, weights: &[f64]) -> Result<LowerBoundReport, LowerBoundError> {
    let s: f64 = weights.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(LowerBoundError::WeightSum(s));
    }
    if weights.len() != result.residuals.len() {
        return Err(LowerBoundError::Lengths {
            iterates: result.iterates.len(),
            residuals: result.residuals.len(),
            weights: weights.len(),
        });
    }
    let inner = match &result.operator.kind {
        OperatorKind::Rotated { inner, .. } => inner,
        _ => return Err(LowerBoundError::NotWorstCase),
    };
    let (k, v_norm, alpha) = worst_case_params(inner)?;
    let gt = result.operator.ground_truth.as_ref().ok_or(LowerBoundError::NotWorstCase)?;
    let y_star = gt.x_star.as_ref().ok_or(LowerBoundError::NotWorstCase)?;
    let r0_sq = result.iterates[0].dist_sq(y_star);
    let combo = combine(&result.residuals, weights);
    Ok(report(k, &combo, &gt.v, r0_sq, gap_applies(k, v_norm, alpha)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::make_worst_case;

    fn uniform(k: usize) -> Vec<f64> {
        vec![1.0 / k as f64; k]
    }

    #[test]
    fn picard_normalized_iterate_is_tight() {
        let k = 8;
        let op = make_worst_case(k, 1.0, (k as f64).sqrt()).unwrap();
        let tr = collect_trace(&op, &mut PicardAlgorithm::default(), &DenseVector::zeros(k + 1), k, uniform(k)).unwrap();
        let rep = verify_lower_bound(&op, &tr).unwrap();
        assert!(rep.passed);
        assert!((rep.dist_sq - rep.dist_bound).abs() <= 1e-8 * rep.dist_bound);
    }

    #[test]
    fn ohm_and_last_residual_weights() {
        let k = 8;
        let op = make_worst_case(k, 1.0, (k as f64).sqrt()).unwrap();
        let total: f64 = (1..=k).map(|i| i as f64).sum();
        let w: Vec<f64> = (0..k).map(|i| (i + 1) as f64 / total).collect();
        let tr = collect_trace(&op, &mut OhmAlgorithm::default(), &DenseVector::zeros(k + 1), k, w).unwrap();
        assert!(verify_lower_bound(&op, &tr).unwrap().passed);
        let mut last = vec![0.0; k];
        last[k - 1] = 1.0;
        let tr = collect_trace(&op, &mut HeavyBallAlgorithm::new(0.7, 0.3), &DenseVector::zeros(k + 1), k, last).unwrap();
        assert!(verify_lower_bound(&op, &tr).unwrap().passed);
    }

    #[test]
    fn span_violation_detected() {
        let op = make_worst_case(3, 1.0, 3f64.sqrt()).unwrap();
        let x0 = DenseVector::zeros(4);
        let x1 = DenseVector::unit(4, 2);
        let r0 = op.residual(&x0).unwrap();
        let r1 = op.residual(&x1).unwrap();
        let e = SpanTrace::new(vec![x0, x1], vec![r0, r1], vec![0.5, 0.5]).unwrap_err();
        assert!(matches!(e, LowerBoundError::Span { index: 1, .. }));
    }

    #[test]
    fn resisting_picard_matches_direct_run() {
        let big_k = 6;
        let d = 2 * big_k - 1;
        let inner = make_worst_case(big_k, 1.0, (big_k as f64).sqrt()).unwrap();
        let mut rng = SplitMix64::new(3);
        let v = DenseVector::new(rng.normal_vec(d)).unwrap();
        let v = v.scaled(1.0 / v.norm());
        let x0 = DenseVector::new(rng.normal_vec(d)).unwrap();
        let res = resisting_rotation(&mut PicardAlgorithm::default(), &inner, &x0, &v, d, big_k, 17).unwrap();
        assert!(res.u.orthonormality_defect() <= 1e-10);
        let direct = collect_trace(&inner, &mut PicardAlgorithm::default(), &DenseVector::zeros(big_k + 1), big_k, uniform(big_k)).unwrap();
        for (z, x) in res.pulled_back.iter().zip(&direct.iterates) {
            assert!(z.dist_sq(x).sqrt() <= 1e-8);
        }
        // stored residuals agree with the final operator
        for (x, r) in res.iterates.iter().zip(&res.residuals) {
            assert!(res.operator.residual(x).unwrap().dist_sq(r).sqrt() <= 1e-10);
        }
        assert!((res.operator.idv().unwrap().norm() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn small_ambient_dimension_rejected() {
        let inner = make_worst_case(6, 1.0, 6f64.sqrt()).unwrap();
        let v = DenseVector::unit(10, 0);
        let e = resisting_rotation(&mut PicardAlgorithm::default(), &inner, &DenseVector::zeros(10), &v, 10, 6, 1).unwrap_err();
        assert!(matches!(e, LowerBoundError::DimensionTooSmall { .. }));
    }
}
