//! Short textual specs for operators, schedules and audits.
//!
//! Operators are written `name` or `name:key=value,...`. A value may itself
//! contain commas (`translation:v=0,0,1`): tokens without `=` extend the
//! previous value.
//!
//! | spec | operator |
//! |------|----------|
//! | `rotation-shift` | `T(x, y, z) = (−y, x, z − 1)` |
//! | `translation:v=a,b,...` | `Tx = x − v` |
//! | `worst-case:k=K[,v=NORM][,alpha=A]` | span-method hard instance |
//! | `zoo:seed=S,index=I` | member `I` of the seeded random affine family |
//!
//! Schedules: `picard`, `ohm`, `km:λ`, `halpern:λ`, `mann:picard`, `mann:ohm`.

use anyhow::{anyhow, bail, Context, Result};
use infeas_core::analysis::Envelope;
use infeas_core::operators::{
    affine_zoo, default_worst_case_alpha, make_affine, make_counterexample, make_translation, make_worst_case,
    GroundTruth,
};
use infeas_core::schedules::{mann_ohm, mann_picard};
use infeas_core::{DenseVector, Matrix, OperatorSpec, Schedule};

use crate::config::AffineConfig;

fn params(rest: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for token in rest.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match token.split_once('=') {
            Some((k, v)) => out.push((k.trim().to_string(), v.trim().to_string())),
            None => match out.last_mut() {
                Some((_, v)) => {
                    v.push(',');
                    v.push_str(token);
                }
                None => bail!("expected key=value, found `{token}`"),
            },
        }
    }
    Ok(out)
}

fn take<T: std::str::FromStr>(ps: &[(String, String)], key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match ps.iter().find(|(k, _)| k == key) {
        Some((_, v)) => v.parse::<T>().map(Some).map_err(|e| anyhow!("bad value for `{key}`: {e}")),
        None => Ok(None),
    }
}

fn check_keys(ps: &[(String, String)], allowed: &[&str], name: &str) -> Result<()> {
    for (k, _) in ps {
        if !allowed.contains(&k.as_str()) {
            bail!("operator `{name}` has no parameter `{k}` (expected one of {})", allowed.join(", "));
        }
    }
    Ok(())
}

pub fn parse_vector(s: &str) -> Result<DenseVector> {
    let entries = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("bad number `{t}`")))
        .collect::<Result<Vec<_>>>()?;
    DenseVector::new(entries).map_err(|e| anyhow!("{e}"))
}

/// Build an operator from a spec string.
pub fn parse_operator(spec: &str) -> Result<OperatorSpec> {
    let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let ps = params(rest)?;
    match name.trim() {
        "rotation-shift" => {
            check_keys(&ps, &[], name)?;
            Ok(make_counterexample())
        }
        "translation" => {
            check_keys(&ps, &["v"], name)?;
            let v = ps.iter().find(|(k, _)| k == "v").ok_or_else(|| anyhow!("translation needs v=..."))?;
            Ok(make_translation(parse_vector(&v.1)?))
        }
        "worst-case" => {
            check_keys(&ps, &["k", "v", "alpha"], name)?;
            let k: usize = take(&ps, "k")?.ok_or_else(|| anyhow!("worst-case needs k=..."))?;
            if k == 0 {
                bail!("worst-case needs k >= 1");
            }
            let v: f64 = take(&ps, "v")?.unwrap_or(1.0);
            let alpha = take(&ps, "alpha")?.unwrap_or_else(|| default_worst_case_alpha(k, v));
            make_worst_case(k, v, alpha).map_err(|e| anyhow!("{e}"))
        }
        "zoo" => {
            check_keys(&ps, &["seed", "index"], name)?;
            let seed: u64 = take(&ps, "seed")?.unwrap_or(0);
            let index: usize = take(&ps, "index")?.unwrap_or(0);
            affine_zoo(index + 1, seed).pop().ok_or_else(|| anyhow!("empty zoo"))
        }
        other => bail!("unknown operator `{other}`"),
    }
}

/// Build an affine operator from its config table.
pub fn affine_operator(cfg: &AffineConfig) -> Result<OperatorSpec> {
    let a = Matrix::from_rows(&cfg.a).map_err(|e| anyhow!("affine.a: {e}"))?;
    let b = DenseVector::new(cfg.b.clone()).map_err(|e| anyhow!("affine.b: {e}"))?;
    let ground_truth = match (&cfg.v, &cfg.x_star) {
        (Some(v), xs) => Some(GroundTruth {
            v: DenseVector::new(v.clone()).map_err(|e| anyhow!("affine.v: {e}"))?,
            x_star: xs.as_ref().map(|x| DenseVector::new(x.clone())).transpose().map_err(|e| anyhow!("affine.x_star: {e}"))?,
        }),
        (None, Some(_)) => bail!("affine.x_star needs affine.v"),
        (None, None) => None,
    };
    make_affine(a, b, ground_truth).map_err(|e| anyhow!("{e}"))
}

/// Default starting point: `(1, 0, 0)` for the rotation-shift example,
/// the origin otherwise.
pub fn default_start(spec: &str, op: &OperatorSpec) -> DenseVector {
    if spec.trim() == "rotation-shift" {
        DenseVector::unit(3, 0)
    } else {
        DenseVector::zeros(op.dimension)
    }
}

pub fn parse_schedule(spec: &str) -> Result<Schedule> {
    let (name, arg) = spec.split_once(':').unwrap_or((spec, ""));
    let lambda = || -> Result<f64> {
        let l: f64 = arg.trim().parse().with_context(|| format!("schedule `{spec}` needs a numeric λ"))?;
        if !(0.0..1.0).contains(&l) {
            bail!("λ = {l} is outside [0, 1)");
        }
        Ok(l)
    };
    let s = match (name.trim(), arg.trim()) {
        ("picard", "") => Schedule::Picard,
        ("ohm", "") => Schedule::Ohm,
        ("km", _) => Schedule::km_constant(lambda()?),
        ("halpern", _) => Schedule::halpern_constant(lambda()?),
        ("mann", "picard") => Schedule::Mann(mann_picard()),
        ("mann", "ohm") => Schedule::Mann(mann_ohm()),
        _ => bail!("unknown schedule `{spec}` (picard, ohm, km:λ, halpern:λ, mann:picard, mann:ohm)"),
    };
    Ok(s)
}

/// Envelope ids accepted by `--audit`.
pub const AUDIT_IDS: [&str; 7] =
    ["km-norm-iter", "km-cesaro", "km-norm-gap", "halpern-norm-iter", "ohm-fpr", "ohm-norm-iter", "ohm-norm-gap"];

pub fn parse_audit(id: &str, schedule: &Schedule) -> Result<Envelope> {
    let env = match id {
        "km-norm-iter" => Envelope::KmNormalizedIterate(schedule.clone()),
        "km-cesaro" => Envelope::KmCesaro(schedule.clone()),
        "km-norm-gap" => Envelope::KmNormGap(schedule.clone()),
        "halpern-norm-iter" => Envelope::HalpernNormalizedIterate(schedule.clone()),
        "ohm-fpr" => Envelope::OhmResidual,
        "ohm-norm-iter" => Envelope::OhmNormalizedIterate,
        "ohm-norm-gap" => Envelope::OhmNormGap,
        other => bail!("unknown audit `{other}` (expected one of {})", AUDIT_IDS.join(", ")),
    };
    Ok(env)
}

/// Envelopes that apply to a schedule when no `--audit` is given.
pub fn default_audits(schedule: &Schedule) -> Vec<&'static str> {
    match schedule {
        Schedule::Picard => vec!["km-norm-iter"],
        Schedule::Km(_) => vec!["km-norm-iter", "km-cesaro", "km-norm-gap"],
        Schedule::Halpern(_) => vec!["halpern-norm-iter"],
        Schedule::Ohm => vec!["ohm-fpr", "ohm-norm-iter", "ohm-norm-gap"],
        Schedule::Mann(_) => Vec::new(),
    }
}

/// `"5"`, `"1..20"` (inclusive) or `"2,4,8"`.
pub fn parse_k_list(s: &str) -> Result<Vec<usize>> {
    let ks: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().with_context(|| format!("bad range `{s}`"))?;
        let b: usize = b.trim().parse().with_context(|| format!("bad range `{s}`"))?;
        if a > b {
            bail!("empty range `{s}`");
        }
        (a..=b).collect()
    } else {
        s.split(',').map(|t| t.trim().parse().with_context(|| format!("bad k `{t}`"))).collect::<Result<_>>()?
    };
    if ks.is_empty() || ks.contains(&0) {
        bail!("k must be at least 1");
    }
    Ok(ks)
}
