//! Iteration rules and the trajectory runner.
//!
//! Indices follow the usual convention: `λ_k` is the parameter used to go
//! from `x^{k−1}` to `x^k`, so the first step uses `λ_1`.
//!
//! * Picard: `x^{k+1} = Tx^k`
//! * KM: `x^{k+1} = λ_{k+1} x^k + (1 − λ_{k+1}) Tx^k`
//! * Halpern: `x^{k+1} = λ_{k+1} x^0 + (1 − λ_{k+1}) Tx^k`; OHM is `λ_k = 1/(k+1)`
//! * Mann: `x^k = Σ_{i=0}^{k} ν_i^k T x^{i−1}` with `T x^{−1} := x^0`
//!
//! Each rule comes with a normalization factor (`Σ(1−λ_i)`, `θ_k` or `α_k`)
//! such that `−(x^k − x^0)/factor` approaches the infimal displacement vector.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use crate::analysis;
use crate::linalg::DenseVector;
use crate::operators::{OperatorError, OperatorSpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScheduleError {
    #[error("{op} is not defined for schedule {schedule}")]
    WrongKind { op: &'static str, schedule: String },
    #[error("normalization factor vanishes at k = {k}")]
    Degenerate { k: usize },
    #[error("lambda_{k} = {value} is outside [0, 1)")]
    InvalidLambda { k: usize, value: f64 },
    #[error("Mann row {k} is invalid: {reason}")]
    InvalidMannRow { k: usize, reason: String },
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("iterate became non-finite after k = {last_finite_k}")]
    NonFinite { last_finite_k: usize },
}

/// A sequence `k ↦ λ_k` for `k ≥ 1`.
#[derive(Clone)]
pub enum LambdaRule {
    Constant(f64),
    Custom { name: String, f: Arc<dyn Fn(usize) -> f64 + Send + Sync> },
}

impl LambdaRule {
    pub fn custom(name: impl Into<String>, f: impl Fn(usize) -> f64 + Send + Sync + 'static) -> Self {
        LambdaRule::Custom { name: name.into(), f: Arc::new(f) }
    }

    pub fn at(&self, k: usize) -> f64 {
        match self {
            LambdaRule::Constant(c) => *c,
            LambdaRule::Custom { f, .. } => f(k),
        }
    }

    fn label(&self) -> String {
        match self {
            LambdaRule::Constant(c) => format!("{c}"),
            LambdaRule::Custom { name, .. } => name.clone(),
        }
    }
}

/// Row `k ≥ 1` of a Mann weight table: `ν_0^k … ν_k^k`.
#[derive(Clone)]
pub struct MannRule {
    name: String,
    f: Arc<dyn Fn(usize) -> Vec<f64> + Send + Sync>,
}

impl MannRule {
    pub fn new(name: impl Into<String>, f: impl Fn(usize) -> Vec<f64> + Send + Sync + 'static) -> Self {
        MannRule { name: name.into(), f: Arc::new(f) }
    }

    pub fn row(&self, k: usize) -> Vec<f64> {
        (self.f)(k)
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

#[derive(Clone)]
pub enum Schedule {
    Picard,
    Km(LambdaRule),
    Halpern(LambdaRule),
    Ohm,
    Mann(MannRule),
}

impl fmt::Debug for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

impl Schedule {
    pub fn km_constant(lambda: f64) -> Self {
        Schedule::Km(LambdaRule::Constant(lambda))
    }

    pub fn halpern_constant(lambda: f64) -> Self {
        Schedule::Halpern(LambdaRule::Constant(lambda))
    }

    pub fn label(&self) -> String {
        match self {
            Schedule::Picard => "picard".into(),
            Schedule::Km(l) => format!("km({})", l.label()),
            Schedule::Halpern(l) => format!("halpern({})", l.label()),
            Schedule::Ohm => "ohm".into(),
            Schedule::Mann(m) => format!("mann({})", m.name),
        }
    }

    /// `λ_k` for the KM and Halpern families (Picard is KM with `λ ≡ 0`).
    pub fn lambda(&self, k: usize) -> Option<f64> {
        match self {
            Schedule::Picard => Some(0.0),
            Schedule::Km(l) | Schedule::Halpern(l) => Some(l.at(k)),
            Schedule::Ohm => Some(1.0 / (k as f64 + 1.0)),
            Schedule::Mann(_) => None,
        }
    }

    pub fn is_km_family(&self) -> bool {
        matches!(self, Schedule::Picard | Schedule::Km(_))
    }

    pub fn is_halpern_family(&self) -> bool {
        matches!(self, Schedule::Halpern(_) | Schedule::Ohm)
    }

    /// Re-express the rule as a Mann weight table.
    pub fn to_mann(&self) -> MannRule {
        match self {
            Schedule::Mann(m) => m.clone(),
            Schedule::Picard => mann_picard(),
            Schedule::Ohm => mann_ohm(),
            Schedule::Halpern(l) => {
                let l = l.clone();
                MannRule::new(format!("halpern({})", l.label()), move |k| {
                    let lam = l.at(k);
                    let mut row = vec![0.0; k + 1];
                    row[0] += lam;
                    row[k] += 1.0 - lam;
                    row
                })
            }
            Schedule::Km(l) => {
                let l = l.clone();
                MannRule::new(format!("km({})", l.label()), move |k| {
                    // ν_i^k = λ_k ⋯ λ_{i+1} (1 − λ_i) for i ≥ 1, ν_0^k = λ_k ⋯ λ_1
                    let mut row = vec![0.0; k + 1];
                    let mut tail = 1.0;
                    for i in (1..=k).rev() {
                        let lam = l.at(i);
                        row[i] = tail * (1.0 - lam);
                        tail *= lam;
                    }
                    row[0] = tail;
                    row
                })
            }
        }
    }

    /// Check `λ_k ∈ [0, 1)` or the Mann row conditions for `k = 1..=horizon`.
    pub fn validate(&self, horizon: usize) -> Result<(), ScheduleError> {
        match self {
            Schedule::Mann(m) => {
                for k in 1..=horizon {
                    check_mann_row(k, &m.row(k))?;
                }
            }
            _ => {
                for k in 1..=horizon {
                    let lam = self.lambda(k).unwrap_or(0.0);
                    if !(0.0..1.0).contains(&lam) {
                        return Err(ScheduleError::InvalidLambda { k, value: lam });
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_mann_row(k: usize, row: &[f64]) -> Result<(), ScheduleError> {
    if row.len() != k + 1 {
        return Err(ScheduleError::InvalidMannRow { k, reason: format!("expected {} weights, got {}", k + 1, row.len()) });
    }
    if let Some(w) = row.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(ScheduleError::InvalidMannRow { k, reason: format!("weight {w} is negative or non-finite") });
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(ScheduleError::InvalidMannRow { k, reason: format!("weights sum to {s}") });
    }
    Ok(())
}

/// Picard as a Mann table: `ν_k^k = 1`.
pub fn mann_picard() -> MannRule {
    MannRule::new("picard", |k| {
        let mut row = vec![0.0; k + 1];
        row[k] = 1.0;
        row
    })
}

/// OHM as a Mann table: `ν_0^k = 1/(k+1)`, `ν_k^k = k/(k+1)`.
pub fn mann_ohm() -> MannRule {
    MannRule::new("ohm", |k| {
        let mut row = vec![0.0; k + 1];
        row[0] = 1.0 / (k as f64 + 1.0);
        row[k] += k as f64 / (k as f64 + 1.0);
        row
    })
}

/// `Σ_{i=1}^k (1 − λ_i)`; Picard gives `k`.
pub fn km_factor(schedule: &Schedule, k: usize) -> Result<f64, ScheduleError> {
    if !schedule.is_km_family() {
        return Err(ScheduleError::WrongKind { op: "km_factor", schedule: schedule.label() });
    }
    let f: f64 = (1..=k).map(|i| 1.0 - schedule.lambda(i).unwrap_or(0.0)).sum();
    if f <= 0.0 {
        return Err(ScheduleError::Degenerate { k });
    }
    Ok(f)
}

/// `θ_0 = 0`, `θ_{k+1} = (1 − λ_{k+1})(1 + θ_k)`.
pub fn halpern_theta(schedule: &Schedule, k: usize) -> Result<f64, ScheduleError> {
    if !schedule.is_halpern_family() {
        return Err(ScheduleError::WrongKind { op: "halpern_theta", schedule: schedule.label() });
    }
    let mut theta = 0.0;
    for i in 1..=k {
        theta = (1.0 - schedule.lambda(i).unwrap_or(0.0)) * (1.0 + theta);
    }
    Ok(theta)
}

/// `α_0 = 0`, `α_k = (1 − ν_0^k) + Σ_{i=1}^k ν_i^k α_{i−1}`.
pub fn mann_alpha(schedule: &Schedule, k: usize) -> Result<f64, ScheduleError> {
    let rule = match schedule {
        Schedule::Mann(m) => m,
        _ => return Err(ScheduleError::WrongKind { op: "mann_alpha", schedule: schedule.label() }),
    };
    let a = mann_alpha_table(rule, k)?;
    if a[k] <= 0.0 {
        return Err(ScheduleError::Degenerate { k });
    }
    Ok(a[k])
}

fn mann_alpha_table(rule: &MannRule, k: usize) -> Result<Vec<f64>, ScheduleError> {
    let mut alpha = vec![0.0; k + 1];
    for n in 1..=k {
        let row = rule.row(n);
        check_mann_row(n, &row)?;
        let mut a = 1.0 - row[0];
        for i in 1..=n {
            a += row[i] * alpha[i - 1];
        }
        alpha[n] = a;
    }
    Ok(alpha)
}

/// Normalization factor of any schedule at `k`; zero means degenerate.
pub fn normalization_factor(schedule: &Schedule, k: usize) -> f64 {
    match schedule {
        Schedule::Picard | Schedule::Km(_) => km_factor(schedule, k).unwrap_or(0.0),
        Schedule::Halpern(_) | Schedule::Ohm => halpern_theta(schedule, k).unwrap_or(0.0),
        Schedule::Mann(m) => mann_alpha_table(m, k).map(|a| a[k]).unwrap_or(0.0),
    }
}

/// One step of output from [`Stepper`].
#[derive(Debug, Clone)]
pub struct Step {
    pub k: usize,
    pub x: DenseVector,
    pub tx: DenseVector,
    /// Normalization factor at `k` (0 at `k = 0` and when degenerate).
    pub factor: f64,
}

impl Step {
    pub fn residual(&self) -> DenseVector {
        &self.x - &self.tx
    }

    /// `−(x^k − x^0)/factor`, absent when the factor vanishes.
    pub fn normalized(&self, x0: &DenseVector) -> Option<DenseVector> {
        (self.factor > 0.0).then(|| (x0 - &self.x).scaled(1.0 / self.factor))
    }
}

/// Streaming form of [`run`]: yields `(k, x^k, Tx^k)` one step at a time
/// with one operator evaluation per step.
pub struct Stepper<'a> {
    op: &'a OperatorSpec,
    schedule: Schedule,
    mann: Option<MannRule>,
    x0: DenseVector,
    k: usize,
    x: DenseVector,
    factor: f64,
    // Mann: T x^{i−1} for i = 1..=k (index 0 holds T x^0)
    history: Vec<DenseVector>,
    mann_alpha: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(op: &'a OperatorSpec, schedule: Schedule, x0: DenseVector) -> Result<Self, RunError> {
        x0.check_dim(op.dimension).map_err(|_| OperatorError::Dimension { expected: op.dimension, got: x0.len() })?;
        let mann = match &schedule {
            Schedule::Mann(m) => Some(m.clone()),
            _ => None,
        };
        Ok(Stepper {
            op,
            schedule,
            mann,
            x: x0.clone(),
            x0,
            k: 0,
            factor: 0.0,
            history: Vec::new(),
            mann_alpha: vec![0.0],
        })
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn x0(&self) -> &DenseVector {
        &self.x0
    }

    /// Evaluate `T` at the current iterate, advance to the next one and
    /// return the record of the current index.
    pub fn step(&mut self) -> Result<Step, RunError> {
        let tx = self.op.evaluate(&self.x)?;
        if !tx.is_finite() {
            return Err(RunError::NonFinite { last_finite_k: self.k.saturating_sub(1) });
        }
        let out = Step { k: self.k, x: self.x.clone(), tx: tx.clone(), factor: self.factor };
        let next = self.k + 1;
        let x_next = match &self.schedule {
            Schedule::Mann(_) => {
                self.history.push(tx);
                let row = self.mann.as_ref().map(|m| m.row(next)).unwrap_or_default();
                check_mann_row(next, &row)?;
                let mut x = self.x0.scaled(row[0]);
                for i in 1..=next {
                    if row[i] != 0.0 {
                        x.axpy(row[i], &self.history[i - 1]);
                    }
                }
                let mut a = 1.0 - row[0];
                for i in 1..=next {
                    a += row[i] * self.mann_alpha[i - 1];
                }
                self.mann_alpha.push(a);
                self.factor = a;
                x
            }
            s => {
                let lam = s.lambda(next).unwrap_or(0.0);
                if !(0.0..1.0).contains(&lam) {
                    return Err(ScheduleError::InvalidLambda { k: next, value: lam }.into());
                }
                let base = if s.is_halpern_family() { &self.x0 } else { &self.x };
                let mut x = tx.scaled(1.0 - lam);
                if lam != 0.0 {
                    x.axpy(lam, base);
                }
                self.factor = if s.is_halpern_family() {
                    (1.0 - lam) * (1.0 + self.factor)
                } else {
                    self.factor + (1.0 - lam)
                };
                x
            }
        };
        if !x_next.is_finite() {
            return Err(RunError::NonFinite { last_finite_k: self.k });
        }
        self.x = x_next;
        self.k = next;
        Ok(out)
    }
}

/// Per-iteration record of a trajectory.
#[derive(Debug, Clone)]
pub struct Record {
    pub k: usize,
    pub x: DenseVector,
    /// `v^k = x^k − Tx^k`
    pub residual: DenseVector,
    pub factor: f64,
    /// `−(x^k − x^0)/factor`; absent when the factor vanishes.
    pub normalized: Option<DenseVector>,
    /// KM-weighted average `Σ_{i≤k} w_i v^i / Σ w_i` with `w_i = λ_{i+1}(1 − λ_{i+1})`.
    pub cesaro: Option<DenseVector>,
    /// `‖v^k − v‖²` when `v` is known.
    pub fpr_dist_v_sq: Option<f64>,
    /// `‖normalized − v‖²` when `v` is known.
    pub norm_iter_dist_v_sq: Option<f64>,
    /// `(Σ w_i ‖v^i − v‖ / Σ w_i)²`, the weighted mean of residual distances.
    pub cesaro_dist_v_sq: Option<f64>,
    /// OHM potential anchored at `x⋆` (OHM runs with known `x⋆`, `k ≥ 1`).
    pub lyapunov: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub operator: String,
    pub schedule: Schedule,
    pub x0: DenseVector,
    pub v: Option<DenseVector>,
    pub x_star: Option<DenseVector>,
    pub records: Vec<Record>,
}

pub const CSV_HEADER: [&str; 7] = [
    "k",
    "fpr_norm_sq",
    "norm_iter_norm_sq",
    "fpr_dist_v_sq",
    "norm_iter_dist_v_sq",
    "cesaro_dist_v_sq",
    "lyapunov",
];

/// Decimal scientific notation with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt17(x: Option<f64>) -> String {
    x.map(fmt17).unwrap_or_default()
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.records.last().map_or(0, |r| r.k)
    }

    pub fn record(&self, k: usize) -> &Record {
        &self.records[k]
    }

    /// Write the trajectory as CSV with the fixed column order of
    /// [`CSV_HEADER`]; absent values become empty fields.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.k.to_string(),
                fmt17(r.residual.norm_sq()),
                opt17(r.normalized.as_ref().map(|n| n.norm_sq())),
                opt17(r.fpr_dist_v_sq),
                opt17(r.norm_iter_dist_v_sq),
                opt17(r.cesaro_dist_v_sq),
                opt17(r.lyapunov),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Run `schedule` on `op` from `x0` for `horizon` steps and record
/// `k = 0..=horizon`.
///
/// Mann schedules keep every past operator output, so memory grows as
/// `O(horizon · dim)`.
pub fn run(op: &OperatorSpec, schedule: Schedule, x0: DenseVector, horizon: usize) -> Result<Trajectory, RunError> {
    if horizon == 0 {
        return Err(RunError::ZeroHorizon);
    }
    schedule.validate(horizon + 1)?;
    let v = op.idv().cloned();
    let x_star = op.x_star().cloned();
    let is_ohm = matches!(schedule, Schedule::Ohm);
    let km_lambdas: Option<Vec<f64>> =
        schedule.is_km_family().then(|| (0..=horizon + 1).map(|k| schedule.lambda(k).unwrap_or(0.0)).collect());

    let mut stepper = Stepper::new(op, schedule.clone(), x0.clone())?;
    let mut records = Vec::with_capacity(horizon + 1);
    let mut wsum = 0.0;
    let mut wres = DenseVector::zeros(op.dimension);
    let mut wdist = 0.0;
    for _ in 0..=horizon {
        let step = stepper.step()?;
        let residual = step.residual();
        let normalized = step.normalized(&x0);
        let mut cesaro = None;
        let mut cesaro_dist_v_sq = None;
        if let Some(l) = &km_lambdas {
            let lam = l[step.k + 1];
            let w = lam * (1.0 - lam);
            wsum += w;
            wres.axpy(w, &residual);
            if let Some(v) = &v {
                wdist += w * residual.dist_sq(v).sqrt();
            }
            if wsum > 0.0 {
                cesaro = Some(wres.scaled(1.0 / wsum));
                if v.is_some() {
                    cesaro_dist_v_sq = Some((wdist / wsum).powi(2));
                }
            }
        }
        let fpr_dist_v_sq = v.as_ref().map(|v| residual.dist_sq(v));
        let norm_iter_dist_v_sq = match (&v, &normalized) {
            (Some(v), Some(n)) => Some(n.dist_sq(v)),
            _ => None,
        };
        let lyapunov = match (&x_star, is_ohm && step.k >= 1) {
            (Some(xs), true) => {
                let ts = op.evaluate(xs)?;
                Some(analysis::lyapunov_value(step.k, &x0, &step.x, &step.tx, xs, &ts))
            }
            _ => None,
        };
        records.push(Record {
            k: step.k,
            x: step.x,
            residual,
            factor: step.factor,
            normalized,
            cesaro,
            fpr_dist_v_sq,
            norm_iter_dist_v_sq,
            cesaro_dist_v_sq,
            lyapunov,
        });
    }
    Ok(Trajectory { operator: op.label(), schedule, x0, v, x_star, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{make_counterexample, make_translation};

    #[test]
    fn factor_examples() {
        assert_eq!(km_factor(&Schedule::km_constant(0.0), 7).unwrap(), 7.0);
        assert_eq!(km_factor(&Schedule::Picard, 7).unwrap(), 7.0);
        assert_eq!(km_factor(&Schedule::km_constant(0.5), 4).unwrap(), 2.0);
        let s = Schedule::Km(LambdaRule::custom("1-1/i", |i| 1.0 - 1.0 / i as f64));
        assert!((km_factor(&s, 3).unwrap() - (1.0 + 0.5 + 1.0 / 3.0)).abs() < 1e-15);
        assert!(matches!(km_factor(&Schedule::Ohm, 3), Err(ScheduleError::WrongKind { .. })));
    }

    #[test]
    fn theta_examples() {
        assert_eq!(halpern_theta(&Schedule::Ohm, 10).unwrap(), 5.0);
        assert_eq!(halpern_theta(&Schedule::halpern_constant(0.0), 10).unwrap(), 10.0);
        assert!((halpern_theta(&Schedule::halpern_constant(0.5), 3).unwrap() - 0.875).abs() < 1e-15);
    }

    #[test]
    fn mann_examples() {
        let p = Schedule::Mann(mann_picard());
        let o = Schedule::Mann(mann_ohm());
        for k in 1..20 {
            assert!((mann_alpha(&p, k).unwrap() - k as f64).abs() < 1e-12);
            assert!((mann_alpha(&o, k).unwrap() - k as f64 / 2.0).abs() < 1e-12);
        }
        let anchor_only = Schedule::Mann(MannRule::new("anchor", |k| {
            let mut r = vec![0.0; k + 1];
            r[0] = 1.0;
            r
        }));
        assert_eq!(mann_alpha(&anchor_only, 3), Err(ScheduleError::Degenerate { k: 3 }));
    }

    #[test]
    fn translation_picard_telescopes() {
        let v = DenseVector::new(vec![0.5, -1.0]).unwrap();
        let op = make_translation(v.clone());
        let t = run(&op, Schedule::Picard, DenseVector::new(vec![1.0, 1.0]).unwrap(), 20).unwrap();
        assert!(t.records[0].normalized.is_none());
        for r in &t.records[1..] {
            assert!(r.normalized.as_ref().unwrap().dist_sq(&v) < 1e-28);
        }
    }

    #[test]
    fn counterexample_closed_form() {
        let op = make_counterexample();
        let t = run(&op, Schedule::Picard, DenseVector::unit(3, 0), 8).unwrap();
        for r in &t.records {
            let a = r.k as f64 * std::f64::consts::FRAC_PI_2;
            let expect = [a.cos(), a.sin(), -(r.k as f64)];
            for i in 0..3 {
                assert!((r.x[i] - expect[i]).abs() < 1e-12);
            }
        }
        assert_eq!(t.records[4].x.as_slice(), &[1.0, 0.0, -4.0]);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let op = make_counterexample();
        let t = run(&op, Schedule::Picard, DenseVector::unit(3, 0), 3).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], CSV_HEADER.join(","));
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("0,"));
        // picard has no Cesàro weights and no Lyapunov value
        assert!(lines[2].ends_with(",,"));
    }

    #[test]
    fn rejects_bad_lambda_and_zero_horizon() {
        let op = make_counterexample();
        assert!(matches!(
            run(&op, Schedule::km_constant(1.0), DenseVector::zeros(3), 3),
            Err(RunError::Schedule(ScheduleError::InvalidLambda { .. }))
        ));
        assert!(matches!(run(&op, Schedule::Picard, DenseVector::zeros(3), 0), Err(RunError::ZeroHorizon)));
    }
}
