use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail};
use infeas_core::analysis::{audit_rate, Envelope, RateAudit};
use infeas_core::lowerbound::{
    collect_trace, resisting_rotation, verify_lower_bound, verify_resisting, zero_respecting_violation,
    DeterministicAlgorithm, HeavyBallAlgorithm, OhmAlgorithm, PicardAlgorithm,
};
use infeas_core::operators::{affine_zoo, make_counterexample, make_worst_case};
use infeas_core::pep::{build_pep, export_sdpa, solve_pep, text_dump, verify_pep_bounds, SolveOptions};
use infeas_core::pgextra::{run_experiment, ExperimentConfig, ObjectiveKind, Variant};
use infeas_core::schedules::{fmt17, run};
use infeas_core::{DenseVector, Schedule, SplitMix64};
use rayon::prelude::*;

use crate::config::{IterateConfig, LowerBoundConfig, PepConfig, PgExtraConfig};
use crate::spec;
use crate::{IterateArgs, LowerBoundArgs, PepFormat, PepGenArgs, PepSolveArgs, PgExtraArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0:#}")]
    Usage(anyhow::Error),
    #[error("{0:#}")]
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn inner(&self) -> &anyhow::Error {
        match self {
            CliError::Usage(e) | CliError::Runtime(e) => e,
        }
    }
}

fn usage(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Usage(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

/// Audits that did not pass. Whether they change the exit status is up to
/// `--strict`.
#[derive(Debug, Default)]
pub struct Report {
    pub failures: Vec<String>,
}

pub struct Context {
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Context {
    /// Creates the output directory up front so that a bad path fails before
    /// any computation.
    pub fn new(out_dir: PathBuf, seed: u64) -> Result<Self, CliError> {
        std::fs::create_dir_all(&out_dir)
            .map_err(|e| usage(anyhow!("cannot create output directory {}: {e}", out_dir.display())))?;
        Ok(Context { out_dir, seed })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| runtime(anyhow!("cannot write {}: {e}", path.display())))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| runtime(anyhow!("cannot write {}: {e}", path.display())))
}

pub fn iterate(ctx: &Context, args: &IterateArgs, cfg: &IterateConfig) -> Result<Report, CliError> {
    let op_spec = args.operator.clone().or_else(|| cfg.operator.clone());
    let (op, label) = match (&op_spec, &cfg.affine) {
        (Some(s), _) => (spec::parse_operator(s).map_err(usage)?, s.clone()),
        (None, Some(a)) => (spec::affine_operator(a).map_err(usage)?, "affine".to_string()),
        (None, None) => return Err(usage(anyhow!("iterate needs --op or an [iterate] operator in the config"))),
    };
    let schedule =
        spec::parse_schedule(args.schedule.as_deref().or(cfg.schedule.as_deref()).unwrap_or("picard")).map_err(usage)?;
    let horizon = args.horizon.or(cfg.horizon).unwrap_or(100);
    if horizon == 0 {
        return Err(usage(anyhow!("--k must be at least 1")));
    }
    let x0 = match (&args.x0, &cfg.x0) {
        (Some(s), _) => spec::parse_vector(s).map_err(usage)?,
        (None, Some(v)) => DenseVector::new(v.clone()).map_err(|e| usage(anyhow!("x0: {e}")))?,
        (None, None) => spec::default_start(&label, &op),
    };
    if x0.len() != op.dimension {
        return Err(usage(anyhow!("x0 has {} entries, operator dimension is {}", x0.len(), op.dimension)));
    }
    let ids: Vec<String> = if !args.audits.is_empty() {
        args.audits.clone()
    } else if let Some(a) = &cfg.audits {
        a.clone()
    } else {
        spec::default_audits(&schedule).into_iter().map(String::from).collect()
    };
    let envelopes = ids.iter().map(|id| spec::parse_audit(id, &schedule)).collect::<anyhow::Result<Vec<_>>>().map_err(usage)?;
    schedule.validate(horizon).map_err(usage)?;

    let start = Instant::now();
    let traj = run(&op, schedule.clone(), x0, horizon).map_err(runtime)?;
    let path = ctx.path("trajectory.csv");
    let mut w = create(&path)?;
    traj.write_csv(&mut w).map_err(runtime)?;
    finish(w, &path)?;

    let mut report = Report::default();
    println!("operator {}  schedule {}  k = {horizon}  ({:.3}s)", op.label(), schedule.label(), start.elapsed().as_secs_f64());
    let last = traj.record(horizon);
    println!("  |x^k - Tx^k|^2 = {}", fmt17(last.residual.norm_sq()));
    if let Some(n) = &last.normalized {
        println!("  |normalized iterate|^2 = {}", fmt17(n.norm_sq()));
    }
    if let Some(d) = last.fpr_dist_v_sq {
        println!("  |x^k - Tx^k - v|^2 = {}", fmt17(d));
    }
    if !envelopes.is_empty() && op.x_star().is_none() {
        return Err(usage(anyhow!("rate audits need an operator with a known x*")));
    }
    for env in &envelopes {
        let audit = audit_rate(&traj, env, env.quantity()).map_err(usage)?;
        let path = ctx.path(&format!("audit-{}.csv", env.id()));
        let mut w = create(&path)?;
        audit.write_csv(&mut w).map_err(runtime)?;
        finish(w, &path)?;
        print_audit(&audit);
        if !audit.passed {
            report.failures.push(format!("{} (min slack {:e} at k = {})", env.id(), audit.min_slack, audit.argmin_k));
        }
    }
    Ok(report)
}

fn print_audit(a: &RateAudit) {
    println!(
        "  audit {:<18} {:<22} min slack {:>12.4e} at k = {:<6} {}",
        a.envelope,
        a.quantity.name(),
        a.min_slack,
        a.argmin_k,
        if a.passed { "pass" } else { "FAIL" }
    );
}

fn algorithm(index: usize) -> Box<dyn DeterministicAlgorithm> {
    match index % 3 {
        0 => Box::new(PicardAlgorithm::default()),
        1 => Box::new(OhmAlgorithm::default()),
        _ => Box::new(HeavyBallAlgorithm::new(0.8, 0.4)),
    }
}

struct SpanRow {
    k: usize,
    draw: usize,
    algorithm: String,
    dist_sq: f64,
    dist_bound: f64,
    gap_sq: f64,
    gap_bound: f64,
    passed: bool,
}

pub fn lowerbound(ctx: &Context, args: &LowerBoundArgs, cfg: &LowerBoundConfig) -> Result<Report, CliError> {
    let ks = spec::parse_k_list(args.k.as_deref().or(cfg.k.as_deref()).unwrap_or("4,8,16")).map_err(usage)?;
    let draws = args.draws.or(cfg.draws).unwrap_or(100);
    let resist_k = args.resist_k.or(cfg.resist_k).unwrap_or(6);
    if resist_k == 0 {
        return Err(usage(anyhow!("--resist-k must be at least 1")));
    }
    let seed = ctx.seed;

    let per_k: Vec<Result<Vec<SpanRow>, CliError>> = ks
        .par_iter()
        .map(|&k| {
            let op = make_worst_case(k, 1.0, (k as f64).sqrt()).map_err(runtime)?;
            let mut rng = SplitMix64::new(seed).fork(k as u64);
            let mut rows = Vec::with_capacity(draws);
            for draw in 0..draws {
                let weights = rng.simplex(k);
                let mut alg = algorithm(draw);
                let trace = collect_trace(&op, alg.as_mut(), &DenseVector::zeros(k + 1), k, weights).map_err(runtime)?;
                let r = verify_lower_bound(&op, &trace).map_err(runtime)?;
                rows.push(SpanRow {
                    k,
                    draw,
                    algorithm: alg.name().to_string(),
                    dist_sq: r.dist_sq,
                    dist_bound: r.dist_bound,
                    gap_sq: r.gap_sq,
                    gap_bound: r.gap_bound,
                    passed: r.passed,
                });
            }
            Ok(rows)
        })
        .collect();

    let mut report = Report::default();
    let path = ctx.path("lowerbound.csv");
    let mut w = create(&path)?;
    let io = |e: std::io::Error| runtime(e);
    writeln!(w, "k,draw,algorithm,dist_sq,dist_bound,gap_sq,gap_bound,passed").map_err(io)?;
    println!("{:>4} {:>6} {:>14} {:>14}  violations", "k", "draws", "min dist/bound", "min gap/bound");
    for rows in per_k {
        let rows = rows?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.k,
                r.draw,
                r.algorithm,
                fmt17(r.dist_sq),
                fmt17(r.dist_bound),
                fmt17(r.gap_sq),
                fmt17(r.gap_bound),
                r.passed
            )
            .map_err(io)?;
        }
        let k = rows.first().map_or(0, |r| r.k);
        let bad = rows.iter().filter(|r| !r.passed).count();
        let min_dist = rows.iter().map(|r| r.dist_sq / r.dist_bound).fold(f64::INFINITY, f64::min);
        let min_gap = rows.iter().map(|r| r.gap_sq / r.gap_bound).fold(f64::INFINITY, f64::min);
        println!("{k:>4} {:>6} {min_dist:>14.6} {min_gap:>14.6}  {bad}", rows.len());
        if bad > 0 {
            report.failures.push(format!("span lower bound at k = {k}: {bad} of {} draws", rows.len()));
        }
    }
    finish(w, &path)?;

    if !args.no_resist {
        let d = 2 * resist_k - 1;
        let inner = make_worst_case(resist_k, 1.0, (resist_k as f64).sqrt()).map_err(runtime)?;
        let mut rng = SplitMix64::new(seed).fork(u64::MAX);
        let v = DenseVector::new(rng.normal_vec(d)).map_err(runtime)?;
        let v = v.scaled(1.0 / v.norm());
        let x0 = DenseVector::new(rng.normal_vec(d)).map_err(runtime)?;
        let uniform = vec![1.0 / resist_k as f64; resist_k];
        let path = ctx.path("resisting.csv");
        let mut w = create(&path)?;
        writeln!(w, "algorithm,K,d,zero_respecting,dist_sq,dist_bound,passed").map_err(io)?;
        for index in 0..3 {
            let mut alg = algorithm(index);
            let res = resisting_rotation(alg.as_mut(), &inner, &x0, &v, d, resist_k, seed).map_err(runtime)?;
            let zr = zero_respecting_violation(&inner, &res.pulled_back).map_err(runtime)?;
            let rep = verify_resisting(&res, &uniform).map_err(runtime)?;
            let ok = zr.is_none() && rep.passed;
            writeln!(
                w,
                "{},{resist_k},{d},{},{},{},{ok}",
                alg.name(),
                zr.is_none(),
                fmt17(rep.dist_sq),
                fmt17(rep.dist_bound)
            )
            .map_err(io)?;
            println!(
                "resisting rotation K = {resist_k}, d = {d}, {:<10} zero-respecting {:<5} dist/bound {:.6}",
                alg.name(),
                zr.is_none(),
                rep.dist_sq / rep.dist_bound
            );
            if !ok {
                report.failures.push(format!("resisting rotation against {}", alg.name()));
            }
        }
        finish(w, &path)?;
    }
    Ok(report)
}

pub fn pep_gen(ctx: &Context, args: &PepGenArgs, cfg: &PepConfig) -> Result<Report, CliError> {
    let ks = spec::parse_k_list(args.k.as_deref().or(cfg.k.as_deref()).unwrap_or("5")).map_err(usage)?;
    if args.out.is_some() && ks.len() > 1 {
        return Err(usage(anyhow!("--out needs a single k")));
    }
    if let Some(parent) = args.out.as_deref().and_then(Path::parent) {
        if !parent.as_os_str().is_empty() && !parent.is_dir() {
            return Err(usage(anyhow!("directory {} does not exist", parent.display())));
        }
    }
    for &k in &ks {
        let problem = build_pep(k).map_err(usage)?;
        let ext = match args.format {
            PepFormat::Sdpa => "dat-s",
            PepFormat::Text => "txt",
        };
        let path = args.out.clone().unwrap_or_else(|| ctx.path(&format!("pep-k{k}.{ext}")));
        let mut w = create(&path)?;
        match args.format {
            PepFormat::Sdpa => export_sdpa(&problem, &mut w).map_err(runtime)?,
            PepFormat::Text => w.write_all(text_dump(&problem).as_bytes()).map_err(runtime)?,
        }
        finish(w, &path)?;
        println!("k = {k}: order {}, {} constraints -> {}", problem.order(), problem.constraints.len(), path.display());
    }
    Ok(Report::default())
}

pub fn pep_solve(ctx: &Context, args: &PepSolveArgs, cfg: &PepConfig) -> Result<Report, CliError> {
    let ks = spec::parse_k_list(args.k.as_deref().or(cfg.k.as_deref()).unwrap_or("1..15")).map_err(usage)?;
    let defaults = SolveOptions::default();
    let tol = args.tol.or(cfg.tol).unwrap_or(defaults.tol);
    if !(tol > 0.0) {
        return Err(usage(anyhow!("--tol must be positive")));
    }
    let max_iter = args.max_iter.or(cfg.max_iter).unwrap_or(defaults.max_iter);
    let options = SolveOptions { tol, max_iter, ..defaults };

    let start = Instant::now();
    let results = ks
        .par_iter()
        .map(|&k| {
            let problem = build_pep(k)?;
            solve_pep(&problem, &options).map(|r| (k, r))
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(runtime)?;

    let mut report = Report::default();
    let path = ctx.path("pep-values.csv");
    let mut w = create(&path)?;
    let io = |e: std::io::Error| runtime(e);
    writeln!(w, "k,value,lower,upper,scaled_value,within_bracket,converged,iterations,primal_residual,dual_residual,relative_gap")
        .map_err(io)?;
    println!("{:>3} {:>12} {:>12} {:>12} {:>12}  {:<8} {:<9}", "k", "value", "lower", "upper", "(k+1)^2 val", "bracket", "converged");
    let mut previous: Option<f64> = None;
    for (k, r) in &results {
        let b = verify_pep_bounds(*k, r.value, tol);
        let scaled = r.value * ((k + 1) * (k + 1)) as f64;
        let d = &r.diagnostics;
        writeln!(
            w,
            "{k},{},{},{},{},{},{},{},{},{},{}",
            fmt17(r.value),
            fmt17(b.lower),
            fmt17(b.upper),
            fmt17(scaled),
            b.passed(),
            d.converged,
            d.iterations,
            fmt17(d.primal_residual),
            fmt17(d.dual_residual),
            fmt17(d.relative_gap)
        )
        .map_err(io)?;
        println!(
            "{k:>3} {:>12.6} {:>12.6} {:>12.6} {:>12.6}  {:<8} {:<9}",
            r.value,
            b.lower,
            b.upper,
            scaled,
            if b.passed() { "ok" } else { "outside" },
            d.converged
        );
        if !b.passed() {
            report.failures.push(format!("k = {k}: value {:.6} outside [{:.6}, {:.6}]", r.value, b.lower, b.upper));
        }
        if !d.converged {
            report.failures.push(format!("k = {k}: solver stopped after {} iterations", d.iterations));
        }
        // the trend is checked from k = 2 on
        if let Some(prev) = previous.filter(|_| *k >= 3) {
            if scaled < prev {
                report.failures.push(format!("k = {k}: (k+1)^2 value decreased"));
            }
        }
        previous = Some(scaled);
    }
    finish(w, &path)?;
    println!("{} solves in {:.1}s", results.len(), start.elapsed().as_secs_f64());
    Ok(report)
}

fn parse_variant(s: &str) -> anyhow::Result<Variant> {
    match spec::parse_schedule(s)? {
        Schedule::Picard => Ok(Variant::Picard),
        Schedule::Ohm => Ok(Variant::Ohm),
        Schedule::Km(_) => Ok(Variant::Km(spec::parse_schedule(s)?.lambda(1).unwrap_or(0.0))),
        _ => bail!("variant `{s}` must be picard, ohm or km:λ"),
    }
}

fn experiment_config(ctx: &Context, args: &PgExtraArgs, cfg: &PgExtraConfig) -> anyhow::Result<ExperimentConfig> {
    let mut c = match args.preset.as_deref().or(cfg.preset.as_deref()).unwrap_or("reduced") {
        "reduced" => ExperimentConfig::reduced(),
        "full" => ExperimentConfig::full(),
        other => bail!("unknown preset `{other}` (reduced, full)"),
    };
    c.seed = ctx.seed;
    c.m = args.m.or(cfg.m).unwrap_or(c.m);
    c.n = args.n.or(cfg.n).unwrap_or(c.n);
    c.p = args.p.or(cfg.p).unwrap_or(c.p);
    c.epsilon = args.epsilon.or(cfg.epsilon).unwrap_or(c.epsilon);
    c.alpha = args.alpha.or(cfg.alpha).unwrap_or(c.alpha);
    c.beta = args.beta.or(cfg.beta).unwrap_or(c.beta);
    c.horizon = args.horizon.or(cfg.horizon).unwrap_or(c.horizon);
    c.reference_factor = args.reference_factor.or(cfg.reference_factor).unwrap_or(c.reference_factor);
    if let Some(e) = &cfg.edges {
        c.edges = Some(e.clone());
    }
    c.objective = match args.objective.as_deref().or(cfg.objective.as_deref()) {
        None => c.objective,
        Some("random") => ObjectiveKind::Random,
        Some("zero") => ObjectiveKind::Zero,
        Some(other) => bail!("unknown objective `{other}` (random, zero)"),
    };
    let variants: Vec<String> = if !args.variants.is_empty() {
        args.variants.clone()
    } else {
        cfg.variants.clone().unwrap_or_default()
    };
    if !variants.is_empty() {
        c.variants = variants.iter().map(|s| parse_variant(s)).collect::<anyhow::Result<_>>()?;
    }
    if c.horizon < 2 {
        bail!("horizon must be at least 2");
    }
    if c.reference_factor == 0 {
        bail!("reference_factor must be at least 1");
    }
    Ok(c)
}

pub fn pgextra(ctx: &Context, args: &PgExtraArgs, cfg: &PgExtraConfig) -> Result<Report, CliError> {
    let config = experiment_config(ctx, args, cfg).map_err(usage)?;
    let start = Instant::now();
    let out = run_experiment(&config).map_err(|e| match e {
        infeas_core::pgextra::PgExtraError::Run(_) | infeas_core::pgextra::PgExtraError::Linalg(_) => runtime(e),
        other => usage(other),
    })?;
    for s in &out.series {
        let path = ctx.path(&format!("pgextra-{}.csv", s.variant.label()));
        let mut w = create(&path)?;
        s.write_csv(&mut w).map_err(runtime)?;
        finish(w, &path)?;
    }
    println!(
        "instance m = {}, n = {}, p = {}, eps = {}; |L|^2 = {:.6}; |v_hat|_M^2 = {}  ({:.1}s)",
        config.m,
        config.n,
        config.p,
        config.epsilon,
        out.l_norm_sq,
        fmt17(out.v_hat_norm_sq),
        start.elapsed().as_secs_f64()
    );
    for s in &out.series {
        let last = s.last();
        println!(
            "  {:<8} k = {:<7} |normalized|_M^2 = {:<24} |residual|_M^2 = {}",
            s.variant.label(),
            last.k,
            last.norm_iter_norm_sq.map_or("-".into(), fmt17),
            fmt17(last.fpr_mnorm_sq)
        );
    }
    let c = &out.checks;
    let mut report = Report::default();
    if let Some(ok) = c.norm_iter_agree {
        println!("  normalized iterates agree: {ok} (relative difference {:.3e})", c.norm_iter_relative_diff.unwrap_or(f64::NAN));
        if !ok {
            report.failures.push("normalized-iterate norms disagree".into());
        }
    }
    if let Some(ok) = c.ohm_residual_smaller {
        println!("  anchored residual below Picard residual: {ok}");
        if !ok {
            report.failures.push("anchored residual is not below the Picard residual".into());
        }
    }
    println!("  min <v^k, v_hat>_M / |v_hat|_M^2 over the tail: {:.6} ({})", c.min_projection_ratio, c.projection_ok);
    if !c.projection_ok {
        report.failures.push(format!("projection ratio {:.6}", c.min_projection_ratio));
    }
    Ok(report)
}

pub fn demo(ctx: &Context) -> Result<Report, CliError> {
    let mut report = Report::default();

    let op = make_counterexample();
    let t = run(&op, Schedule::Picard, DenseVector::unit(3, 0), 1000).map_err(runtime)?;
    let dev = t.records.iter().map(|r| (r.fpr_dist_v_sq.unwrap_or(f64::NAN) - 2.0).abs()).fold(0.0, f64::max);
    println!("rotation-shift, Picard, 1000 steps: max | |v^k - v|^2 - 2 | = {dev:.1e}");
    if !(dev <= 1e-12) {
        report.failures.push("rotation-shift residual distance".into());
    }

    for k in [5usize, 20] {
        let op = make_worst_case(k, 1.0, (k as f64).sqrt()).map_err(runtime)?;
        let t = run(&op, Schedule::Picard, DenseVector::zeros(k + 1), k).map_err(runtime)?;
        let env = Envelope::picard();
        let a = audit_rate(&t, &env, env.quantity()).map_err(runtime)?;
        println!("worst case k = {k}, Picard: normalized-iterate envelope slack at k = {:.2e}", a.rows.last().map_or(f64::NAN, |r| r.slack));
        if !a.passed {
            report.failures.push(format!("worst-case envelope at k = {k}"));
        }
    }

    let zoo = affine_zoo(5, ctx.seed);
    let mut min_slack = f64::INFINITY;
    for (i, op) in zoo.iter().enumerate() {
        let mut rng = SplitMix64::new(ctx.seed).fork(i as u64);
        let x0 = DenseVector::new(rng.normal_vec(op.dimension)).map_err(runtime)?;
        let t = run(op, Schedule::Ohm, x0, 300).map_err(runtime)?;
        for id in spec::default_audits(&Schedule::Ohm) {
            let env = spec::parse_audit(id, &Schedule::Ohm).map_err(runtime)?;
            min_slack = min_slack.min(audit_rate(&t, &env, env.quantity()).map_err(runtime)?.min_slack);
        }
    }
    println!("5 random affine operators, anchored iteration, 300 steps: min envelope slack {min_slack:.3e}");
    if min_slack < 0.0 {
        report.failures.push("anchored-iteration envelopes".into());
    }

    let lb = LowerBoundArgs { k: Some("8".into()), draws: Some(30), resist_k: Some(4), no_resist: false };
    report.failures.extend(lowerbound(ctx, &lb, &LowerBoundConfig::default())?.failures);

    let gen = PepGenArgs { k: Some("3".into()), out: None, format: PepFormat::Sdpa };
    report.failures.extend(pep_gen(ctx, &gen, &PepConfig::default())?.failures);

    let pg = PgExtraArgs {
        preset: Some("reduced".into()),
        m: None,
        n: None,
        p: None,
        epsilon: None,
        alpha: None,
        beta: None,
        horizon: Some(1000),
        objective: None,
        variants: Vec::new(),
        reference_factor: Some(4),
    };
    let config = experiment_config(ctx, &pg, &PgExtraConfig::default()).map_err(usage)?;
    let out = run_experiment(&config).map_err(runtime)?;
    println!(
        "decentralized SDP (m = 5, n = 4, p = 5), 1000 sweeps: |v_hat|_M^2 = {:.6}, anchored residual below Picard: {}",
        out.v_hat_norm_sq,
        out.checks.ohm_residual_smaller.unwrap_or(false)
    );
    Ok(report)
}
