//! Certificates and rate verification.
//!
//! All envelopes assume the attained case: a point `x⋆` with
//! `x⋆ − Tx⋆ = v` exists, and `R² = ‖x⁰ − x⋆‖²`.

use std::io::Write;

use crate::linalg::DenseVector;
use crate::operators::{OperatorError, OperatorSpec};
use crate::schedules::{self, fmt17, RunError, Schedule, ScheduleError, Stepper, Trajectory};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("envelope needs k >= {min}, got {k}")]
    SmallK { k: usize, min: usize },
    #[error("envelope {envelope} does not apply to schedule {schedule}")]
    WrongSchedule { envelope: &'static str, schedule: String },
    #[error("trajectory has no ground truth ({0} missing)")]
    MissingGroundTruth(&'static str),
    #[error("the potential is defined for OHM trajectories only, got {0}")]
    NotOhm(String),
    #[error("k = {k} is outside the trajectory (horizon {horizon})")]
    OutOfRange { k: usize, horizon: usize },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// `H_k = 1 + 1/2 + … + 1/k`
pub fn harmonic(k: usize) -> f64 {
    (1..=k).map(|n| 1.0 / n as f64).sum()
}

/// Upper-bound envelopes on the distance of an iterate-derived vector to `v`.
#[derive(Debug, Clone)]
pub enum Envelope {
    /// KM normalized iterate: `4/(Σ_{i≤k}(1−λ_i))² · R²`.
    KmNormalizedIterate(Schedule),
    /// KM weighted mean of residual distances, squared:
    /// `R² / Σ_{i=0}^k λ_{i+1}(1−λ_{i+1})`.
    KmCesaro(Schedule),
    /// KM residual norm gap `(‖v^k‖ − ‖v‖)²`, same right-hand side as
    /// [`Envelope::KmCesaro`]; valid from the first `k` with `λ_k > 0`.
    KmNormGap(Schedule),
    /// Halpern normalized iterate: `4/θ_k² · R²`.
    HalpernNormalizedIterate(Schedule),
    /// OHM residual distance: `((√(H_k + 4) + 1)/(k+1))² · R²`.
    OhmResidual,
    /// OHM normalized iterate `‖2(x^k − x⁰)/k + v‖² ≤ 16/k² · R²`.
    OhmNormalizedIterate,
    /// OHM residual norm gap `(‖v^k‖ − ‖v‖)² ≤ 16/k² · R²`.
    OhmNormGap,
}

impl Envelope {
    /// Picard normalized iterate, `4/k² · R²`.
    pub fn picard() -> Self {
        Envelope::KmNormalizedIterate(Schedule::Picard)
    }

    pub fn id(&self) -> &'static str {
        match self {
            Envelope::KmNormalizedIterate(_) => "km-norm-iter",
            Envelope::KmCesaro(_) => "km-cesaro",
            Envelope::KmNormGap(_) => "km-norm-gap",
            Envelope::HalpernNormalizedIterate(_) => "halpern-norm-iter",
            Envelope::OhmResidual => "ohm-fpr",
            Envelope::OhmNormalizedIterate => "ohm-norm-iter",
            Envelope::OhmNormGap => "ohm-norm-gap",
        }
    }

    /// The measured quantity this envelope bounds.
    pub fn quantity(&self) -> Quantity {
        match self {
            Envelope::KmNormalizedIterate(_) | Envelope::HalpernNormalizedIterate(_) | Envelope::OhmNormalizedIterate => {
                Quantity::NormIterDistVSq
            }
            Envelope::KmCesaro(_) => Quantity::CesaroDistVSq,
            Envelope::KmNormGap(_) | Envelope::OhmNormGap => Quantity::FprNormGapSq,
            Envelope::OhmResidual => Quantity::FprDistVSq,
        }
    }

    /// First index at which the envelope applies.
    pub fn first_k(&self) -> usize {
        match self {
            Envelope::KmNormGap(s) => (1..10_000_000).find(|&i| s.lambda(i).unwrap_or(0.0) > 0.0).unwrap_or(usize::MAX),
            _ => 1,
        }
    }
}

/// Value of `envelope` at `k` for `R² = r0_sq`.
pub fn envelope(env: &Envelope, r0_sq: f64, k: usize) -> Result<f64, AnalysisError> {
    if k < 1 {
        return Err(AnalysisError::SmallK { k, min: 1 });
    }
    let kf = k as f64;
    let need = |s: &Schedule, ok: bool| -> Result<(), AnalysisError> {
        if ok {
            Ok(())
        } else {
            Err(AnalysisError::WrongSchedule { envelope: env.id(), schedule: s.label() })
        }
    };
    Ok(match env {
        Envelope::KmNormalizedIterate(s) => {
            need(s, s.is_km_family())?;
            let f = schedules::km_factor(s, k)?;
            4.0 / (f * f) * r0_sq
        }
        Envelope::KmCesaro(s) | Envelope::KmNormGap(s) => {
            need(s, s.is_km_family())?;
            let w: f64 = (0..=k)
                .map(|i| {
                    let l = s.lambda(i + 1).unwrap_or(0.0);
                    l * (1.0 - l)
                })
                .sum();
            if w <= 0.0 {
                return Err(ScheduleError::Degenerate { k }.into());
            }
            r0_sq / w
        }
        Envelope::HalpernNormalizedIterate(s) => {
            need(s, s.is_halpern_family())?;
            let t = schedules::halpern_theta(s, k)?;
            if t <= 0.0 {
                return Err(ScheduleError::Degenerate { k }.into());
            }
            4.0 / (t * t) * r0_sq
        }
        Envelope::OhmResidual => {
            let c = ((harmonic(k) + 4.0).sqrt() + 1.0) / (kf + 1.0);
            c * c * r0_sq
        }
        Envelope::OhmNormalizedIterate | Envelope::OhmNormGap => 16.0 / (kf * kf) * r0_sq,
    })
}

/// Potential of the anchored iteration with `λ_k = 1/(k+1)`.
///
/// With `r = x^k − Tx^k`, `r_a = x_a − Tx_a` and `d = x^k − x⁰`:
///
/// ```text
/// V^k = (k+1)(k‖r‖² + 2⟨r, d⟩)
///     + k(k+1)⟨−(2/k)d − r_a, r_a⟩
///     + (2(k+1)/k)‖x^k − x_a + (k/2) r_a‖²
///     − H_k ‖x⁰ − x_a‖²
/// ```
pub fn lyapunov_value(
    k: usize,
    x0: &DenseVector,
    xk: &DenseVector,
    txk: &DenseVector,
    x_anchor: &DenseVector,
    tx_anchor: &DenseVector,
) -> f64 {
    let kf = k as f64;
    let r = xk - txk;
    let ra = x_anchor - tx_anchor;
    let d = xk - x0;
    let t1 = (kf + 1.0) * (kf * r.norm_sq() + 2.0 * r.dot(&d));
    let mut inner = d.scaled(-2.0 / kf);
    inner -= &ra;
    let t2 = kf * (kf + 1.0) * inner.dot(&ra);
    let mut shifted = xk - x_anchor;
    shifted.axpy(kf / 2.0, &ra);
    let t3 = 2.0 * (kf + 1.0) / kf * shifted.norm_sq();
    let t4 = harmonic(k) * x0.dist_sq(x_anchor);
    t1 + t2 + t3 - t4
}

/// `V^k` on an OHM trajectory, recomputing `Tx^k` and `Tx_a`.
pub fn lyapunov(op: &OperatorSpec, traj: &Trajectory, x_anchor: &DenseVector, k: usize) -> Result<f64, AnalysisError> {
    if !matches!(traj.schedule, Schedule::Ohm) {
        return Err(AnalysisError::NotOhm(traj.schedule.label()));
    }
    if k < 1 {
        return Err(AnalysisError::SmallK { k, min: 1 });
    }
    if k > traj.horizon() {
        return Err(AnalysisError::OutOfRange { k, horizon: traj.horizon() });
    }
    let xk = &traj.records[k].x;
    let txk = op.evaluate(xk)?;
    let ta = op.evaluate(x_anchor)?;
    Ok(lyapunov_value(k, &traj.x0, xk, &txk, x_anchor, &ta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateSource {
    PicardNormalized,
    HalpernNormalized,
    Fpr,
}

/// Infeasibility certificate: an estimate of the infimal displacement vector.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub v_hat: DenseVector,
    pub source: CertificateSource,
    pub iterations: usize,
    pub v_hat_norm: f64,
    /// `‖x^K − Tx^K‖` of the run that produced the estimate.
    pub last_residual_norm: f64,
}

/// Estimate `v` after `iterations` steps. `PicardNormalized` returns
/// `−(x^K − x⁰)/K`, `HalpernNormalized` returns `−(x^K − x⁰)/θ_K` for OHM and
/// `Fpr` returns the OHM residual `x^K − Tx^K`.
pub fn estimate_idv(
    op: &OperatorSpec,
    x0: &DenseVector,
    iterations: usize,
    method: CertificateSource,
) -> Result<Certificate, AnalysisError> {
    if iterations < 1 {
        return Err(AnalysisError::SmallK { k: iterations, min: 1 });
    }
    let schedule = match method {
        CertificateSource::PicardNormalized => Schedule::Picard,
        _ => Schedule::Ohm,
    };
    let mut st = Stepper::new(op, schedule, x0.clone())?;
    let mut last = st.step()?;
    for _ in 0..iterations {
        last = st.step()?;
    }
    let v_hat = match method {
        CertificateSource::Fpr => last.residual(),
        _ => last.normalized(x0).ok_or(ScheduleError::Degenerate { k: iterations })?,
    };
    let v_hat_norm = v_hat.norm();
    Ok(Certificate { v_hat, source: method, iterations, v_hat_norm, last_residual_norm: last.residual().norm() })
}

/// Largest `‖(x^k − Tx^k) + (y^{k+1} − y⁰)/(k+1)‖` over `k ≤ horizon`, with
/// `x` the anchored run (`λ_k = 1/(k+1)`) and `y` the Picard run, both from
/// `x0`. For affine `T` the two sequences coincide and this is rounding error.
pub fn picard_ohm_deviation(op: &OperatorSpec, x0: &DenseVector, horizon: usize) -> Result<f64, AnalysisError> {
    let mut ohm = Stepper::new(op, Schedule::Ohm, x0.clone())?;
    let mut picard = Stepper::new(op, Schedule::Picard, x0.clone())?;
    picard.step()?;
    let mut worst = 0.0f64;
    for _ in 0..=horizon {
        let a = ohm.step()?;
        let b = picard.step()?;
        let norm_iter = b.normalized(x0).ok_or(ScheduleError::Degenerate { k: b.k })?;
        worst = worst.max(a.residual().dist_sq(&norm_iter).sqrt());
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionReport {
    /// Smallest `⟨u, v⟩ − ‖v‖²` over residuals and normalized iterates.
    pub worst_margin: f64,
    pub worst_k: usize,
    pub checked: usize,
    pub passed: bool,
}

/// Check `⟨u, v⟩ ≥ ‖v‖² − 1e−8` for every stored residual and normalized
/// iterate `u`.
pub fn check_projection_inequality(traj: &Trajectory, v: &DenseVector) -> ProjectionReport {
    let vv = v.norm_sq();
    let mut worst = f64::INFINITY;
    let mut worst_k = 0;
    let mut checked = 0;
    for r in &traj.records {
        for u in std::iter::once(&r.residual).chain(r.normalized.as_ref()) {
            let m = u.dot(v) - vv;
            checked += 1;
            if m < worst {
                worst = m;
                worst_k = r.k;
            }
        }
    }
    ProjectionReport { worst_margin: worst, worst_k, checked, passed: worst >= -1e-8 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    NormIterDistVSq,
    FprDistVSq,
    FprNormGapSq,
    CesaroDistVSq,
}

impl Quantity {
    pub fn name(&self) -> &'static str {
        match self {
            Quantity::NormIterDistVSq => "norm_iter_dist_v_sq",
            Quantity::FprDistVSq => "fpr_dist_v_sq",
            Quantity::FprNormGapSq => "fpr_normgap_sq",
            Quantity::CesaroDistVSq => "cesaro_dist_v_sq",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub k: usize,
    pub measured: f64,
    pub bound: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateAudit {
    pub envelope: &'static str,
    pub quantity: Quantity,
    pub rows: Vec<RateRow>,
    pub min_slack: f64,
    pub argmin_k: usize,
    pub passed: bool,
}

impl RateAudit {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "k,{},envelope,slack", self.quantity.name())?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.k, fmt17(r.measured), fmt17(r.bound), fmt17(r.slack))?;
        }
        writeln!(out, "# envelope={} min_slack={} argmin_k={} passed={}", self.envelope, fmt17(self.min_slack), self.argmin_k, self.passed)
    }
}

/// Compare a measured quantity against an envelope at every `k ≥ 1`.
/// Negative slack below `−1e−8 · max(1, bound)` fails the audit.
pub fn audit_rate(traj: &Trajectory, env: &Envelope, quantity: Quantity) -> Result<RateAudit, AnalysisError> {
    let v = traj.v.as_ref().ok_or(AnalysisError::MissingGroundTruth("v"))?;
    let xs = traj.x_star.as_ref().ok_or(AnalysisError::MissingGroundTruth("x_star"))?;
    let r0_sq = traj.x0.dist_sq(xs);
    let vn = v.norm();
    let mut rows = Vec::new();
    let mut min_slack = f64::INFINITY;
    let mut argmin_k = 0;
    let mut passed = true;
    for r in traj.records.iter().filter(|r| r.k >= env.first_k().max(1)) {
        let measured = match quantity {
            Quantity::NormIterDistVSq => r.norm_iter_dist_v_sq,
            Quantity::FprDistVSq => r.fpr_dist_v_sq,
            Quantity::FprNormGapSq => Some((r.residual.norm() - vn).powi(2)),
            Quantity::CesaroDistVSq => r.cesaro_dist_v_sq,
        };
        let Some(measured) = measured else { continue };
        let bound = envelope(env, r0_sq, r.k)?;
        let slack = bound - measured;
        if slack < min_slack {
            min_slack = slack;
            argmin_k = r.k;
        }
        if slack < -1e-8 * bound.max(1.0) {
            passed = false;
        }
        rows.push(RateRow { k: r.k, measured, bound, slack });
    }
    Ok(RateAudit { envelope: env.id(), quantity, rows, min_slack, argmin_k, passed })
}
