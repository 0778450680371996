//! Performance estimation for the anchored iteration with `λ_k = 1/(k+1)`.
//!
//! The worst case of `‖x^k − Tx^k − v‖²` over nonexpansive `T` with
//! `‖x⁰ − x⋆‖ ≤ 1` is the value of an SDP over the Gram matrix
//! `Z = GᵀG`, `G = [v⁰ … v^k, v, x⁰ − x⋆]`, of order `k + 3`. Column indices
//! below are zero-based: `v^i` is column `i`, `v` is column `k+1` and
//! `x⁰ − x⋆` is column `k+2`.
//!
//! The iterates are encoded through the span form of the iteration,
//! `x^i − x⋆ = (x⁰ − x⋆) − Σ_{l<i} (l+1)/(i+1) · v^l`, and `Tx = x − (x − Tx)`.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::sync::{Arc, Mutex};

use crate::analysis::harmonic;
use crate::linalg::{self, ConeSign, DenseVector, LinalgError, Matrix, SymMatrix};
use crate::operators::{make_composite, FixedPointMap};
use crate::schedules::{LambdaRule, RunError, Schedule, Stepper, Trajectory};

#[derive(Debug, thiserror::Error)]
pub enum PepError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("SDPA parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("solver produced a non-finite iterate after {iterations} iterations")]
    NonFinite { iterations: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Run(#[from] RunError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// `tr(A Z) ≥ 0`
    GeZero,
    /// `tr(A Z) ≤ 0`
    LeZero,
    /// `tr(A Z) ≤ 1`
    LeOne,
}

impl Sense {
    fn rhs(self) -> f64 {
        match self {
            Sense::LeOne => 1.0,
            _ => 0.0,
        }
    }

    fn token(self) -> &'static str {
        match self {
            Sense::GeZero => ">=0",
            Sense::LeZero => "<=0",
            Sense::LeOne => "<=1",
        }
    }

    fn parse(s: &str) -> Option<Sense> {
        match s {
            ">=0" => Some(Sense::GeZero),
            "<=0" => Some(Sense::LeZero),
            "<=1" => Some(Sense::LeOne),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    /// `‖Tx^i − Tx^j‖² ≤ ‖x^i − x^j‖²`
    Nonexp(usize, usize),
    /// `‖Tx^i − Tx⋆‖² ≤ ‖x^i − x⋆‖²`
    NonexpStar(usize),
    /// `⟨v^i, v⟩ ≥ ‖v‖²`
    Idv(usize),
    /// `‖x⁰ − x⋆‖² ≤ 1`
    Radius,
}

impl Tag {
    pub fn label(&self) -> String {
        match self {
            Tag::Nonexp(i, j) => format!("nonexp({i},{j})"),
            Tag::NonexpStar(i) => format!("nonexp_star({i})"),
            Tag::Idv(i) => format!("idv({i})"),
            Tag::Radius => "radius".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub matrix: SymMatrix,
    pub sense: Sense,
    pub tag: Tag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PepProblem {
    pub k: usize,
    pub objective: SymMatrix,
    pub constraints: Vec<Constraint>,
}

impl PepProblem {
    pub fn order(&self) -> usize {
        self.k + 3
    }

    /// `(k+1)k + (k+1) + (k+1) + 1`
    pub fn expected_constraint_count(k: usize) -> usize {
        (k + 1) * k + 2 * (k + 1) + 1
    }

    /// Largest violation of any constraint at `z`.
    pub fn max_violation(&self, z: &SymMatrix) -> f64 {
        self.constraints
            .iter()
            .map(|c| {
                let s = c.matrix.frob_dot(z);
                match c.sense {
                    Sense::GeZero => (-s).max(0.0),
                    Sense::LeZero => s.max(0.0),
                    Sense::LeOne => (s - 1.0).max(0.0),
                }
            })
            .fold(0.0, f64::max)
    }
}

fn unit(n: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[i] = 1.0;
    e
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Coefficients of `x^i − x⋆` over the columns of `G`.
fn iterate_coeffs(k: usize, i: usize) -> Vec<f64> {
    let mut x = unit(k + 3, k + 2);
    for l in 0..i {
        x[l] -= (l as f64 + 1.0) / (i as f64 + 1.0);
    }
    x
}

/// `2 a⊙b − aaᵀ` for residual difference `a` and iterate difference `b`:
/// `‖b − a‖² ≤ ‖b‖²` is `tr((2a⊙b − aaᵀ) Z) ≥ 0`.
fn nonexp_matrix(a: &[f64], b: &[f64]) -> SymMatrix {
    let mut m = SymMatrix::sym_outer(a, b).scaled(2.0);
    m.add_scaled(-1.0, &SymMatrix::outer(a));
    m
}

/// Build the SDP data for iteration count `k`.
pub fn build_pep(k: usize) -> Result<PepProblem, PepError> {
    if k == 0 {
        return Err(PepError::ZeroK);
    }
    let n = k + 3;
    let xs: Vec<Vec<f64>> = (0..=k).map(|i| iterate_coeffs(k, i)).collect();
    let ev = unit(n, k + 1);
    let mut constraints = Vec::with_capacity(PepProblem::expected_constraint_count(k));
    for i in 0..=k {
        for j in 0..=k {
            if i == j {
                continue;
            }
            let a = sub(&unit(n, i), &unit(n, j));
            let b = sub(&xs[i], &xs[j]);
            constraints.push(Constraint { matrix: nonexp_matrix(&a, &b), sense: Sense::GeZero, tag: Tag::Nonexp(i, j) });
        }
    }
    for i in 0..=k {
        let a = sub(&unit(n, i), &ev);
        constraints.push(Constraint { matrix: nonexp_matrix(&a, &xs[i]), sense: Sense::GeZero, tag: Tag::NonexpStar(i) });
    }
    for i in 0..=k {
        let a = sub(&unit(n, i), &ev);
        constraints.push(Constraint { matrix: SymMatrix::sym_outer(&a, &ev), sense: Sense::GeZero, tag: Tag::Idv(i) });
    }
    constraints.push(Constraint { matrix: SymMatrix::outer(&unit(n, k + 2)), sense: Sense::LeOne, tag: Tag::Radius });
    let c = sub(&unit(n, k), &ev);
    Ok(PepProblem { k, objective: SymMatrix::outer(&c), constraints })
}

/// Gram matrix `GᵀG` of `G = [v⁰ … v^k, v, x⁰ − x⋆]` from an OHM trajectory
/// with horizon at least `k` and known `v`, `x⋆`.
pub fn gram_from_trajectory(traj: &Trajectory, k: usize) -> Option<SymMatrix> {
    let v = traj.v.as_ref()?;
    let xs = traj.x_star.as_ref()?;
    if traj.horizon() < k {
        return None;
    }
    let mut cols: Vec<DenseVector> = (0..=k).map(|i| traj.records[i].residual.clone()).collect();
    cols.push(v.clone());
    cols.push(&traj.x0 - xs);
    let n = cols.len();
    Some(SymMatrix::from_fn(n, |i, j| cols[i].dot(&cols[j])))
}

fn tag_tokens(tag: &Tag) -> String {
    match tag {
        Tag::Nonexp(i, j) => format!("nonexp {i} {j}"),
        Tag::NonexpStar(i) => format!("nonexp_star {i}"),
        Tag::Idv(i) => format!("idv {i}"),
        Tag::Radius => "radius".into(),
    }
}

fn write_entries(out: &mut String, matno: usize, m: &SymMatrix) {
    let n = m.order();
    for i in 0..n {
        for j in i..n {
            let x = m.get(i, j);
            if x != 0.0 {
                let _ = writeln!(out, "{} 1 {} {} {:?}", matno, i + 1, j + 1, x);
            }
        }
    }
}

/// Write the problem in sparse SDPA format.
///
/// There is one block of order `k+3`. Matrix 0 is the objective, to be
/// maximized as `tr(F_0 Z)`. Matrix `l` carries constraint `l`, which reads
/// `tr(F_l Z) ≥ c_l` or `tr(F_l Z) ≤ c_l` as recorded in the `* tag` comment
/// lines; a solver that only accepts equalities adds one nonnegative slack
/// per inequality. Comment lines start with `*` and precede the data.
pub fn export_sdpa<W: Write>(problem: &PepProblem, mut out: W) -> Result<(), PepError> {
    let mut s = String::new();
    let _ = writeln!(s, "* performance estimation SDP, anchored iteration lambda_k = 1/(k+1), k = {}", problem.k);
    let _ = writeln!(s, "* maximize tr(F0 Z) over Z psd; constraint l: tr(Fl Z) [sense] cl with cl on the rhs line");
    let _ = writeln!(s, "* slack convention: >= rows become tr(Fl Z) - s_l = cl, <= rows become tr(Fl Z) + s_l = cl, s_l >= 0");
    let _ = writeln!(s, "* k {}", problem.k);
    for (l, c) in problem.constraints.iter().enumerate() {
        let _ = writeln!(s, "* tag {} {} {}", l + 1, c.sense.token(), tag_tokens(&c.tag));
    }
    let _ = writeln!(s, "{}", problem.constraints.len());
    let _ = writeln!(s, "1");
    let _ = writeln!(s, "{}", problem.order());
    let rhs: Vec<String> = problem.constraints.iter().map(|c| format!("{:?}", c.sense.rhs())).collect();
    let _ = writeln!(s, "{}", rhs.join(" "));
    write_entries(&mut s, 0, &problem.objective);
    for (l, c) in problem.constraints.iter().enumerate() {
        write_entries(&mut s, l + 1, &c.matrix);
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

/// Read a file written by [`export_sdpa`].
pub fn read_sdpa<R: BufRead>(input: R) -> Result<PepProblem, PepError> {
    let perr = |line: usize, msg: &str| PepError::Parse { line, msg: msg.to_string() };
    let mut k: Option<usize> = None;
    let mut tags: Vec<(Sense, Tag)> = Vec::new();
    let mut data: Vec<(usize, String)> = Vec::new();
    for (no, line) in input.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(c) = t.strip_prefix('*').or_else(|| t.strip_prefix('"')) {
            let f: Vec<&str> = c.split_whitespace().collect();
            match f.as_slice() {
                ["k", v] => k = Some(v.parse().map_err(|_| perr(no + 1, "bad k"))?),
                ["tag", l, sense, rest @ ..] => {
                    let l: usize = l.parse().map_err(|_| perr(no + 1, "bad tag index"))?;
                    if l != tags.len() + 1 {
                        return Err(perr(no + 1, "tags out of order"));
                    }
                    let sense = Sense::parse(sense).ok_or_else(|| perr(no + 1, "bad sense"))?;
                    let num = |s: &str| s.parse::<usize>().map_err(|_| perr(no + 1, "bad tag argument"));
                    let tag = match rest {
                        ["nonexp", i, j] => Tag::Nonexp(num(i)?, num(j)?),
                        ["nonexp_star", i] => Tag::NonexpStar(num(i)?),
                        ["idv", i] => Tag::Idv(num(i)?),
                        ["radius"] => Tag::Radius,
                        _ => return Err(perr(no + 1, "unknown tag")),
                    };
                    tags.push((sense, tag));
                }
                _ => {}
            }
            continue;
        }
        data.push((no + 1, t.to_string()));
    }
    let mut it = data.into_iter();
    let mut next = |what: &str| it.next().ok_or_else(|| perr(0, &format!("missing {what}")));
    let (ln, m) = next("constraint count")?;
    let m: usize = m.trim_matches(|c: char| !c.is_ascii_digit()).parse().map_err(|_| perr(ln, "bad constraint count"))?;
    let (ln, nb) = next("block count")?;
    if nb.split_whitespace().next() != Some("1") {
        return Err(perr(ln, "expected a single block"));
    }
    let (ln, bs) = next("block size")?;
    let n: usize = bs
        .split(|c: char| c.is_whitespace() || c == ',')
        .find(|s| !s.is_empty())
        .and_then(|s| s.trim_start_matches(['{', '(']).parse().ok())
        .ok_or_else(|| perr(ln, "bad block size"))?;
    let (ln, rhs_line) = next("rhs")?;
    let rhs: Vec<f64> = rhs_line
        .split(|c: char| c.is_whitespace() || c == ',' || c == '{' || c == '}')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| perr(ln, "bad rhs")))
        .collect::<Result<_, _>>()?;
    if rhs.len() != m {
        return Err(perr(ln, "rhs length differs from constraint count"));
    }
    if tags.len() != m {
        return Err(perr(0, "every constraint needs a '* tag' line"));
    }
    let k = k.unwrap_or(n.saturating_sub(3));
    let mut mats = vec![SymMatrix::zeros(n); m + 1];
    for (ln, l) in it {
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 5 {
            return Err(perr(ln, "expected five fields"));
        }
        let mat: usize = f[0].parse().map_err(|_| perr(ln, "bad matrix number"))?;
        let blk: usize = f[1].parse().map_err(|_| perr(ln, "bad block number"))?;
        let i: usize = f[2].parse().map_err(|_| perr(ln, "bad row"))?;
        let j: usize = f[3].parse().map_err(|_| perr(ln, "bad column"))?;
        let x: f64 = f[4].parse().map_err(|_| perr(ln, "bad value"))?;
        if blk != 1 || mat > m || i == 0 || j == 0 || i > n || j > n {
            return Err(perr(ln, "index out of range"));
        }
        mats[mat].set(i - 1, j - 1, x);
    }
    let objective = mats[0].clone();
    let constraints = tags
        .into_iter()
        .zip(mats.into_iter().skip(1))
        .zip(rhs)
        .enumerate()
        .map(|(l, (((sense, tag), matrix), c))| {
            if c != sense.rhs() {
                return Err(perr(0, &format!("rhs of constraint {} does not match its sense", l + 1)));
            }
            Ok(Constraint { matrix, sense, tag })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PepProblem { k, objective, constraints })
}

/// Self-describing dump: one section per matrix with dense rows.
pub fn text_dump(problem: &PepProblem) -> String {
    let mut s = String::new();
    let rows = |s: &mut String, m: &SymMatrix| {
        for i in 0..m.order() {
            let r: Vec<String> = m.row(i).iter().map(|x| format!("{x:>8.4}")).collect();
            let _ = writeln!(s, "{}", r.join(" "));
        }
    };
    let _ = writeln!(s, "# k = {}, order = {}, constraints = {}", problem.k, problem.order(), problem.constraints.len());
    let _ = writeln!(s, "[objective maximize]");
    rows(&mut s, &problem.objective);
    for (l, c) in problem.constraints.iter().enumerate() {
        let _ = writeln!(s, "[constraint {} {} {}]", l + 1, c.tag.label(), c.sense.token());
        rows(&mut s, &c.matrix);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    /// Plain KM iteration of the primal-dual map.
    Km,
    /// Anchored iteration with `λ_k = 1/(k+1)`, re-anchored at the current
    /// point whenever the fixed-point residual has dropped by a fixed factor.
    RestartedHalpern,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub method: SolveMethod,
    /// KM relaxation `λ` for [`SolveMethod::Km`]; 0 is the plain step.
    pub lambda: f64,
    /// Residuals are evaluated every `check_every` iterations.
    pub check_every: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { max_iter: 200_000, tol: 1e-6, method: SolveMethod::RestartedHalpern, lambda: 0.0, check_every: 50 }
    }
}

#[derive(Debug, Clone)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub restarts: usize,
    pub converged: bool,
    /// Largest constraint violation of the returned `Z`.
    pub primal_residual: f64,
    /// Positive part of `λ_max(C − 𝒜*y)` in the equilibrated scaling.
    pub dual_residual: f64,
    /// `|primal − dual| / (1 + |primal| + |dual|)`
    pub relative_gap: f64,
    pub dual_value: f64,
    /// Objective at the raw iterate and at its PSD projection.
    pub raw_value: f64,
    pub rounded_value: f64,
    pub min_eigenvalue: f64,
    pub operator_norm: f64,
    pub tau: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub value: f64,
    pub z: SymMatrix,
    pub diagnostics: SolveDiagnostics,
}

/// One primal-dual step as a self-map on `(Z, y)` stored as
/// `[Z row-major (n²), y (m)]`:
///
/// ```text
/// Z⁺ = Π_{S+}(Z + τ(C − 𝒜*y))
/// y⁺ = prox_{σg*}(y + σ𝒜(2Z⁺ − Z))
/// ```
///
/// where `g` is the indicator of the constraint set. This map is firmly
/// nonexpansive in the metric `[[I/τ, −𝒜*], [−𝒜, I/σ]]` when `τσ‖𝒜‖² < 1`.
/// Rows of `𝒜` are scaled to unit Frobenius norm.
struct PdhgMap {
    n: usize,
    c: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    senses: Vec<Sense>,
    tau: f64,
    sigma: f64,
    basis: Mutex<Matrix>,
}

impl PdhgMap {
    fn apply_a(&self, z: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|&(p, a)| a * z[p]).sum()).collect()
    }

    fn apply_at(&self, y: &[f64], out: &mut [f64]) {
        for (r, &yl) in self.rows.iter().zip(y) {
            if yl != 0.0 {
                for &(p, a) in r {
                    out[p] += a * yl;
                }
            }
        }
    }

    fn sym(&self, full: &[f64]) -> SymMatrix {
        SymMatrix::from_fn(self.n, |i, j| 0.5 * (full[i * self.n + j] + full[j * self.n + i]))
    }

    /// `C − 𝒜*y` as a symmetric matrix.
    fn dual_slack(&self, y: &[f64]) -> SymMatrix {
        let mut g = self.c.clone();
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        self.apply_at(&neg, &mut g);
        self.sym(&g)
    }

    fn dual_value(&self, y: &[f64]) -> f64 {
        y.iter().zip(&self.rhs).map(|(a, b)| a * b).sum()
    }
}

impl FixedPointMap for PdhgMap {
    fn dimension(&self) -> usize {
        self.n * self.n + self.rows.len()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let nn = self.n * self.n;
        let (z, y) = x.split_at(nn);
        let mut g: Vec<f64> = self.c.iter().map(|c| self.tau * c).collect();
        let ty: Vec<f64> = y.iter().map(|v| -self.tau * v).collect();
        self.apply_at(&ty, &mut g);
        for (gi, zi) in g.iter_mut().zip(z) {
            *gi += zi;
        }
        let gs = self.sym(&g);
        let mut basis = self.basis.lock().expect("basis lock");
        let zp = match linalg::project_psd_warm(&gs, ConeSign::Plus, &basis, 1e-13) {
            Ok((p, eig)) => {
                *basis = eig.vectors;
                p
            }
            Err(_) => {
                out.iter_mut().for_each(|o| *o = f64::NAN);
                return;
            }
        };
        drop(basis);
        let zp = zp.as_slice();
        let extrap: Vec<f64> = zp.iter().zip(z).map(|(a, b)| 2.0 * a - b).collect();
        let az = self.apply_a(&extrap);
        out[..nn].copy_from_slice(zp);
        for (l, sense) in self.senses.iter().enumerate() {
            let yb = y[l] + self.sigma * az[l];
            let shifted = yb - self.sigma * self.rhs[l];
            out[nn + l] = match sense {
                Sense::GeZero => shifted.min(0.0),
                Sense::LeZero | Sense::LeOne => shifted.max(0.0),
            };
        }
    }

    fn name(&self) -> String {
        format!("pdhg(n={}, m={})", self.n, self.rows.len())
    }
}

struct Check {
    z: SymMatrix,
    primal: f64,
    dual: f64,
    gap: f64,
    dual_value: f64,
}

fn check(problem: &PepProblem, map: &PdhgMap, point: &[f64]) -> Result<Check, PepError> {
    let nn = map.n * map.n;
    let z = map.sym(&point[..nn]);
    let y = &point[nn..];
    let primal = problem.max_violation(&z);
    let top = linalg::sym_eig(&map.dual_slack(y), 1e-12)?.values[0];
    let pobj = problem.objective.frob_dot(&z);
    let dual_value = map.dual_value(y);
    let gap = (pobj - dual_value).abs() / (1.0 + pobj.abs() + dual_value.abs());
    Ok(Check { z, primal, dual: top.max(0.0), gap, dual_value })
}

/// Solve the SDP with a first-order primal-dual method. The primal-dual map
/// is iterated through [`Stepper`], either as a KM run or as restarted
/// anchored runs.
pub fn solve_pep(problem: &PepProblem, options: &SolveOptions) -> Result<SolveResult, PepError> {
    let n = problem.order();
    let m = problem.constraints.len();
    let scales: Vec<f64> = problem
        .constraints
        .iter()
        .map(|c| {
            let f = c.matrix.frob_norm();
            if f > 0.0 {
                1.0 / f
            } else {
                1.0
            }
        })
        .collect();
    let rows: Vec<Vec<(usize, f64)>> = problem
        .constraints
        .iter()
        .zip(&scales)
        .map(|(c, s)| {
            c.matrix
                .as_slice()
                .iter()
                .enumerate()
                .filter(|(_, &a)| a != 0.0)
                .map(|(p, &a)| (p, a * s))
                .collect()
        })
        .collect();
    let dense = Matrix::from_fn(m, n * n, |l, p| problem.constraints[l].matrix.as_slice()[p] * scales[l]);
    let op_norm = linalg::spectral_norm(&dense, 1e-10)? * (1.0 + 1e-6);
    let step = 0.95 / op_norm;
    let map = Arc::new(PdhgMap {
        n,
        c: problem.objective.as_slice().to_vec(),
        rows,
        rhs: problem.constraints.iter().zip(&scales).map(|(c, s)| c.sense.rhs() * s).collect(),
        senses: problem.constraints.iter().map(|c| c.sense).collect(),
        tau: step,
        sigma: step,
        basis: Mutex::new(Matrix::identity(n)),
    });
    let op = make_composite(map.clone(), None);
    let schedule = || match options.method {
        SolveMethod::Km => Schedule::Km(LambdaRule::Constant(options.lambda)),
        SolveMethod::RestartedHalpern => Schedule::Ohm,
    };
    let mut start = vec![0.0; n * n + m];
    // Z = e_{k+3} e_{k+3}ᵀ is feasible
    start[n * n - 1] = 1.0;
    let mut stepper = Stepper::new(&op, schedule(), DenseVector::new(start)?)?;
    let mut anchor_residual = f64::INFINITY;
    let mut restarts = 0;
    let mut iterations = 0;
    let mut converged = false;
    let mut last: Option<Check> = None;
    while iterations < options.max_iter {
        let s = stepper.step()?;
        iterations += 1;
        let residual = s.x.dist_sq(&s.tx).sqrt();
        if !residual.is_finite() {
            return Err(PepError::NonFinite { iterations });
        }
        if iterations % options.check_every == 0 || iterations == options.max_iter {
            let c = check(problem, &map, s.tx.as_slice())?;
            let done = c.primal <= options.tol && c.dual <= options.tol && c.gap <= options.tol;
            last = Some(c);
            if done {
                converged = true;
                break;
            }
        }
        if options.method == SolveMethod::RestartedHalpern {
            if s.k == 0 {
                anchor_residual = residual;
            } else if residual <= 0.2 * anchor_residual {
                stepper = Stepper::new(&op, schedule(), s.tx)?;
                restarts += 1;
            }
        }
    }
    let last = match last {
        Some(c) => c,
        None => return Err(PepError::NonFinite { iterations }),
    };
    let raw = last.z;
    let eig = linalg::sym_eig(&raw, 1e-12)?;
    let min_eigenvalue = eig.values[n - 1];
    let z = linalg::project_psd(&raw, ConeSign::Plus)?;
    let raw_value = problem.objective.frob_dot(&raw);
    let value = problem.objective.frob_dot(&z);
    Ok(SolveResult {
        value,
        diagnostics: SolveDiagnostics {
            iterations,
            restarts,
            converged,
            primal_residual: problem.max_violation(&z).max(last.primal),
            dual_residual: last.dual,
            relative_gap: last.gap,
            dual_value: last.dual_value,
            raw_value,
            rounded_value: value,
            min_eigenvalue,
            operator_norm: op_norm,
            tau: step,
            sigma: step,
        },
        z,
    })
}

/// `4/(k+1)²`: the span lower bound for the `k+1` residuals `v⁰ … v^k` that
/// the method has seen when it reports `v^k`, at `‖x⁰ − x⋆‖ = 1`.
pub fn pep_lower(k: usize) -> f64 {
    4.0 / ((k as f64 + 1.0) * (k as f64 + 1.0))
}

/// `((√(H_k + 4) + 1)/(k+1))²` at `‖x⁰ − x⋆‖ = 1`.
pub fn pep_upper(k: usize) -> f64 {
    let c = ((harmonic(k) + 4.0).sqrt() + 1.0) / (k as f64 + 1.0);
    c * c
}

#[derive(Debug, Clone, PartialEq)]
pub struct PepBoundReport {
    pub k: usize,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub low_ok: bool,
    pub high_ok: bool,
}

impl PepBoundReport {
    pub fn passed(&self) -> bool {
        self.low_ok && self.high_ok
    }
}

/// Check `lower − slack ≤ value ≤ upper + slack` with slack `5%·bound + tol`.
pub fn verify_pep_bounds(k: usize, value: f64, tol: f64) -> PepBoundReport {
    let lower = pep_lower(k);
    let upper = pep_upper(k);
    let low_ok = value >= lower * 0.95 - tol;
    let high_ok = value <= upper * 1.05 + tol;
    PepBoundReport { k, value, lower, upper, low_ok, high_ok }
}
