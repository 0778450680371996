//! Decentralized SDP feasibility with PG-EXTRA.
//!
//! Agent `i` privately holds `c_i` and one or more LMIs, summarized as
//! `Σ_j A_i^j x_j ⪯ B_i` with `A_i^j, B_i ∈ S^n`. One sweep updates
//!
//! ```text
//! U_i⁺ = Π_{−S^n_+}(U_i + β(B_i − Σ_j (x_i)_j A_i^j))
//! w⁺   = w + ½(I − W) x
//! x_i⁺ = x_i − αβ(2w_i⁺ − w_i) + α(A_i*(2U_i⁺ − U_i) − c_i)
//! ```
//!
//! with `A_i*U = (tr(A_i^j U))_j`. The sweep is a forward-backward step in
//! the metric
//!
//! ```text
//! M = [[I/α, L*], [L, I/β]],   L x = (−A_1 x_1, …, −A_p x_p, U x),
//! ```
//!
//! where `UᵀU = ½(I − W)`, so it is firmly nonexpansive in `‖·‖_M`. The
//! iteration never stores the consensus dual `y`; it keeps `w = Uy/β`
//! instead, and `y` is recovered from the spectral decomposition of `I − W`
//! whenever an `M`-norm is needed.
//!
//! State vectors are flat: `[x (p·m), U (p·n·n, row-major per agent), w (p·m)]`.

use std::io::Write;
use std::sync::Arc;

use crate::linalg::{self, ConeSign, DenseVector, LinalgError, SymEig, SymMatrix};
use crate::operators::{make_composite, FixedPointMap, OperatorSpec};
use crate::rng::SplitMix64;
use crate::schedules::{fmt17, LambdaRule, RunError, Schedule, Stepper};

#[derive(Debug, thiserror::Error)]
pub enum PgExtraError {
    #[error("chain instance needs m >= 3, got {0}")]
    SmallM(usize),
    #[error("epsilon must be positive, got {0}")]
    Epsilon(f64),
    #[error("block order n = {n} holds at most {cap} 2x2 blocks per agent, {needed} requested")]
    BlockCapacity { n: usize, cap: usize, needed: usize },
    #[error("need at least one agent")]
    NoAgents,
    #[error("edge ({0}, {1}) is a self-loop or out of range")]
    BadEdge(usize, usize),
    #[error("graph is disconnected")]
    Disconnected,
    #[error("I - W has {count} eigenvalues below 1e-10; graph is nearly disconnected")]
    NearlyDisconnected { count: usize },
    #[error("metric is not positive definite: alpha*beta*||L||^2 = {product}")]
    Metric { product: f64 },
    #[error("step sizes must be positive")]
    Steps,
    #[error("mixing matrix has order {got}, instance has {expected} agents")]
    Agents { expected: usize, got: usize },
    #[error("state length {got}, expected {expected}")]
    State { expected: usize, got: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    /// Entries of each `c_i` drawn uniformly from `[−0.1, 0.1]`.
    Random,
    Zero,
}

/// Per-agent LMI data.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentData {
    /// `A_i^j` for `j = 0..m`
    pub a: Vec<SymMatrix>,
    pub b: SymMatrix,
    pub c: Vec<f64>,
    /// Number of 2×2 constraint blocks placed on this agent.
    pub blocks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpInstance {
    pub p: usize,
    pub m: usize,
    pub n: usize,
    pub agents: Vec<AgentData>,
    /// Agents that received no constraint; their block is `0 ⪯ 0`.
    pub trivial_agents: Vec<usize>,
}

impl SdpInstance {
    /// Largest eigenvalue of `Σ_j A_i^j x_j − B_i` over agents; `≤ 0` means
    /// `x` satisfies every LMI.
    pub fn max_violation(&self, x: &[f64]) -> Result<f64, PgExtraError> {
        let mut worst = f64::NEG_INFINITY;
        for ag in &self.agents {
            let mut s = ag.b.scaled(-1.0);
            for (j, aj) in ag.a.iter().enumerate() {
                s.add_scaled(x[j], aj);
            }
            worst = worst.max(linalg::sym_eig(&s, 1e-13)?.values[0]);
        }
        Ok(worst)
    }
}

/// One 2×2 LMI `Σ_j a_j x_j ⪯ b` before placement.
struct SmallLmi {
    terms: Vec<(usize, [[f64; 2]; 2])>,
    b: [[f64; 2]; 2],
}

fn chain_lmis(m: usize, eps: f64) -> Vec<SmallLmi> {
    let e11 = [[1.0, 0.0], [0.0, 0.0]];
    let neg_e11 = [[-1.0, 0.0], [0.0, 0.0]];
    let neg_off = [[0.0, -1.0], [-1.0, 0.0]];
    let eps22 = [[0.0, 0.0], [0.0, eps]];
    let mut out = Vec::with_capacity(2 * (m - 2) + 1);
    for i in 0..m - 2 {
        // [[x_i, x_{i+1}], [x_{i+1}, ε]] ⪰ 0
        out.push(SmallLmi { terms: vec![(i, neg_e11), (i + 1, neg_off)], b: eps22 });
        // [[−x_i, x_{i+1}], [x_{i+1}, ε]] ⪰ 0
        out.push(SmallLmi { terms: vec![(i, e11), (i + 1, neg_off)], b: eps22 });
    }
    // diag(x_1, x_m) ⪰ I
    out.push(SmallLmi {
        terms: vec![(0, neg_e11), (m - 1, [[0.0, 0.0], [0.0, -1.0]])],
        b: [[-1.0, 0.0], [0.0, -1.0]],
    });
    out
}

fn place(target: &mut SymMatrix, offset: usize, block: &[[f64; 2]; 2], scale: f64) {
    for r in 0..2 {
        for c in r..2 {
            let v = target.get(offset + r, offset + c) + scale * block[r][c];
            target.set(offset + r, offset + c, v);
        }
    }
}

/// The chained infeasible LMI family.
///
/// For `i = 1..m−2` the blocks `[[x_i, x_{i+1}], [x_{i+1}, ε]] ⪰ 0` and
/// `[[−x_i, x_{i+1}], [x_{i+1}, ε]] ⪰ 0` force `x_1 = … = x_{m−1} = 0`, and
/// the last block `diag(x_1, x_m) ⪰ I` then has no solution. Constraint `q`
/// goes to agent `q mod p`; an agent holding several blocks stacks them
/// block-diagonally at offsets `0, 2, 4, …` of its `n × n` matrix.
pub fn make_infeasible_chain(
    m: usize,
    n: usize,
    p: usize,
    epsilon: f64,
    seed: u64,
    objective: ObjectiveKind,
) -> Result<SdpInstance, PgExtraError> {
    if m < 3 {
        return Err(PgExtraError::SmallM(m));
    }
    if !(epsilon > 0.0) {
        return Err(PgExtraError::Epsilon(epsilon));
    }
    if p == 0 {
        return Err(PgExtraError::NoAgents);
    }
    let lmis = chain_lmis(m, epsilon);
    let needed = lmis.len().div_ceil(p);
    let cap = n / 2;
    if needed > cap {
        return Err(PgExtraError::BlockCapacity { n, cap, needed });
    }
    let mut agents: Vec<AgentData> = (0..p)
        .map(|_| AgentData { a: vec![SymMatrix::zeros(n); m], b: SymMatrix::zeros(n), c: vec![0.0; m], blocks: 0 })
        .collect();
    for (q, lmi) in lmis.iter().enumerate() {
        let ag = &mut agents[q % p];
        let offset = 2 * ag.blocks;
        for (j, blk) in &lmi.terms {
            place(&mut ag.a[*j], offset, blk, 1.0);
        }
        place(&mut ag.b, offset, &lmi.b, 1.0);
        ag.blocks += 1;
    }
    let mut rng = SplitMix64::new(seed);
    for (i, ag) in agents.iter_mut().enumerate() {
        if objective == ObjectiveKind::Random {
            let mut r = rng.fork(i as u64);
            ag.c = (0..m).map(|_| r.uniform(-0.1, 0.1)).collect();
        }
    }
    let trivial_agents = agents.iter().enumerate().filter(|(_, a)| a.blocks == 0).map(|(i, _)| i).collect();
    Ok(SdpInstance { p, m, n, agents, trivial_agents })
}

/// Ring over `p` nodes plus the chords `{i, i + p/2}` when `p ≥ 4` is even.
pub fn ring_with_chords(p: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    match p {
        0 | 1 => {}
        2 => edges.push((0, 1)),
        _ => {
            for i in 0..p {
                edges.push((i, (i + 1) % p));
            }
            if p % 2 == 0 && p >= 4 {
                for i in 0..p / 2 {
                    edges.push((i, i + p / 2));
                }
            }
        }
    }
    edges
}

/// Symmetric doubly stochastic mixing matrix together with the spectral
/// decomposition of `I − W`.
#[derive(Debug, Clone)]
pub struct MixingMatrix {
    pub w: SymMatrix,
    /// Eigen-decomposition of `I − W`, eigenvalues descending.
    pub laplacian: SymEig,
}

impl MixingMatrix {
    pub fn order(&self) -> usize {
        self.w.order()
    }

    fn from_w(w: SymMatrix) -> Result<Self, PgExtraError> {
        let p = w.order();
        let lap = SymMatrix::identity(p).sub(&w);
        let laplacian = linalg::sym_eig(&lap, 1e-14)?;
        let count = laplacian.values.as_slice().iter().filter(|s| s.abs() < 1e-10).count();
        if count > 1 {
            return Err(PgExtraError::NearlyDisconnected { count });
        }
        Ok(MixingMatrix { w, laplacian })
    }
}

/// Metropolis weights `W_ij = 1/(1 + max(deg_i, deg_j))` on edges, with the
/// diagonal completing each row to one. Duplicate edges are merged.
pub fn metropolis_weights(p: usize, edges: &[(usize, usize)]) -> Result<MixingMatrix, PgExtraError> {
    if p == 0 {
        return Err(PgExtraError::NoAgents);
    }
    let mut adj = vec![vec![false; p]; p];
    for &(a, b) in edges {
        if a == b || a >= p || b >= p {
            return Err(PgExtraError::BadEdge(a, b));
        }
        adj[a][b] = true;
        adj[b][a] = true;
    }
    let mut seen = vec![false; p];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..p {
            if adj[i][j] && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(PgExtraError::Disconnected);
    }
    let deg: Vec<usize> = adj.iter().map(|r| r.iter().filter(|&&e| e).count()).collect();
    let mut w = SymMatrix::zeros(p);
    for i in 0..p {
        for j in i + 1..p {
            if adj[i][j] {
                w.set(i, j, 1.0 / (1.0 + deg[i].max(deg[j]) as f64));
            }
        }
    }
    for i in 0..p {
        let off: f64 = (0..p).filter(|&j| j != i).map(|j| w.get(i, j)).sum();
        w.set(i, i, 1.0 - off);
    }
    MixingMatrix::from_w(w)
}

/// Shapes of the flat state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub p: usize,
    pub m: usize,
    pub n: usize,
}

impl StateLayout {
    pub fn len(&self) -> usize {
        2 * self.p * self.m + self.p * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x<'a>(&self, s: &'a [f64]) -> &'a [f64] {
        &s[..self.p * self.m]
    }

    pub fn u<'a>(&self, s: &'a [f64], agent: usize) -> &'a [f64] {
        let nn = self.n * self.n;
        let start = self.p * self.m + agent * nn;
        &s[start..start + nn]
    }

    pub fn w<'a>(&self, s: &'a [f64]) -> &'a [f64] {
        &s[self.p * self.m + self.p * self.n * self.n..]
    }
}

/// One PG-EXTRA sweep as a fixed-point map.
#[derive(Debug, Clone)]
pub struct PgExtraOperator {
    pub instance: SdpInstance,
    pub mixing: MixingMatrix,
    pub alpha: f64,
    pub beta: f64,
    pub layout: StateLayout,
    /// `‖L‖²`, so that `M ≻ 0` iff `αβ‖L‖² < 1`.
    pub l_norm_sq: f64,
}

fn frob(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl PgExtraOperator {
    /// Build the sweep, rejecting `(α, β)` for which `M` is not positive
    /// definite.
    pub fn new(instance: SdpInstance, mixing: MixingMatrix, alpha: f64, beta: f64) -> Result<Self, PgExtraError> {
        if !(alpha > 0.0 && beta > 0.0) {
            return Err(PgExtraError::Steps);
        }
        if mixing.order() != instance.p {
            return Err(PgExtraError::Agents { expected: instance.p, got: mixing.order() });
        }
        let (p, m) = (instance.p, instance.m);
        let lap = SymMatrix::identity(p).sub(&mixing.w);
        let gram = SymMatrix::from_fn(p * m, |r, c| {
            let (i, j) = (r / m, r % m);
            let (k, l) = (c / m, c % m);
            let mut v = if j == l { 0.5 * lap.get(i, k) } else { 0.0 };
            if i == k {
                v += instance.agents[i].a[j].frob_dot(&instance.agents[i].a[l]);
            }
            v
        });
        let l_norm_sq = linalg::sym_eig(&gram, 1e-13)?.values[0].max(0.0);
        let product = alpha * beta * l_norm_sq;
        if product >= 1.0 {
            return Err(PgExtraError::Metric { product });
        }
        let layout = StateLayout { p, m, n: instance.n };
        Ok(PgExtraOperator { instance, mixing, alpha, beta, layout, l_norm_sq })
    }

    /// Smallest eigenvalue of `M` on `(x, U, y)`.
    pub fn metric_min_eigenvalue(&self) -> f64 {
        let (ia, ib) = (1.0 / self.alpha, 1.0 / self.beta);
        0.5 * ((ia + ib) - ((ia - ib).powi(2) + 4.0 * self.l_norm_sq).sqrt())
    }

    pub fn zero_state(&self) -> DenseVector {
        DenseVector::zeros(self.layout.len())
    }

    fn check_state(&self, s: &[f64]) -> Result<(), PgExtraError> {
        if s.len() != self.layout.len() {
            return Err(PgExtraError::State { expected: self.layout.len(), got: s.len() });
        }
        Ok(())
    }

    /// Consensus dual `y ⊥ 1` with `Uy = βw`, stored like `x`.
    pub fn recover_y(&self, w: &[f64]) -> Vec<f64> {
        let StateLayout { p, m, .. } = self.layout;
        let eig = &self.mixing.laplacian;
        let mut y = vec![0.0; p * m];
        for j in 0..m {
            for (t, &sig) in eig.values.as_slice().iter().enumerate() {
                if sig.abs() < 1e-10 {
                    continue;
                }
                let proj: f64 = (0..p).map(|i| self.beta * w[i * m + j] * eig.vectors[(i, t)]).sum();
                let coef = proj / (0.5 * sig).sqrt();
                for i in 0..p {
                    y[i * m + j] += coef * eig.vectors[(i, t)];
                }
            }
        }
        y
    }

    /// `(x, U, y)` coordinates in which `M` is the block matrix above.
    pub fn metric_coordinates(&self, s: &[f64]) -> Result<Vec<f64>, PgExtraError> {
        self.check_state(s)?;
        let l = &self.layout;
        let mut out = s[..s.len() - l.p * l.m].to_vec();
        out.extend(self.recover_y(l.w(s)));
        Ok(out)
    }

    /// `⟨a, b⟩_M`
    pub fn m_inner(&self, a: &[f64], b: &[f64]) -> Result<f64, PgExtraError> {
        self.check_state(a)?;
        self.check_state(b)?;
        let l = self.layout;
        let (xa, xb) = (l.x(a), l.x(b));
        let (wa, wb) = (l.w(a), l.w(b));
        let mut total = frob(xa, xb) / self.alpha;
        for i in 0..l.p {
            let (ua, ub) = (l.u(a, i), l.u(b, i));
            total += frob(ua, ub) / self.beta;
            for (j, aij) in self.instance.agents[i].a.iter().enumerate() {
                let (ta, tb) = (frob(aij.as_slice(), ua), frob(aij.as_slice(), ub));
                total -= xa[i * l.m + j] * tb + xb[i * l.m + j] * ta;
            }
        }
        total += frob(&self.recover_y(wa), &self.recover_y(wb)) / self.beta;
        total += self.beta * (frob(xa, wb) + frob(xb, wa));
        Ok(total)
    }

    /// `‖a − b‖²_M`
    pub fn m_norm_sq(&self, a: &[f64], b: &[f64]) -> Result<f64, PgExtraError> {
        self.check_state(a)?;
        self.check_state(b)?;
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.m_inner(&d, &d)
    }

    /// Random state with `w` columns orthogonal to the all-ones vector.
    pub fn random_state(&self, rng: &mut SplitMix64, scale: f64) -> DenseVector {
        let l = self.layout;
        let mut s: Vec<f64> = (0..l.len()).map(|_| scale * rng.normal()).collect();
        let (p, m, n) = (l.p, l.m, l.n);
        let nn = n * n;
        for i in 0..p {
            let base = p * m + i * nn;
            for r in 0..n {
                for c in r + 1..n {
                    let v = 0.5 * (s[base + r * n + c] + s[base + c * n + r]);
                    s[base + r * n + c] = v;
                    s[base + c * n + r] = v;
                }
            }
        }
        let w0 = p * m + p * nn;
        for j in 0..m {
            let mean = (0..p).map(|i| s[w0 + i * m + j]).sum::<f64>() / p as f64;
            for i in 0..p {
                s[w0 + i * m + j] -= mean;
            }
        }
        DenseVector::new(s).expect("finite random state")
    }

    pub fn into_operator(self) -> OperatorSpec {
        make_composite(Arc::new(self), None)
    }
}

impl FixedPointMap for PgExtraOperator {
    fn dimension(&self) -> usize {
        self.layout.len()
    }

    fn apply(&self, s: &[f64], out: &mut [f64]) {
        let StateLayout { p, m, n } = self.layout;
        let nn = n * n;
        let (alpha, beta) = (self.alpha, self.beta);
        let x = &s[..p * m];
        let w = &s[p * m + p * nn..];
        let w_mat = &self.mixing.w;
        for i in 0..p {
            let ag = &self.instance.agents[i];
            let u = self.layout.u(s, i);
            let mut g = SymMatrix::from_fn(n, |r, c| u[r * n + c]);
            g.add_scaled(beta, &ag.b);
            for j in 0..m {
                if x[i * m + j] != 0.0 {
                    g.add_scaled(-beta * x[i * m + j], &ag.a[j]);
                }
            }
            let up = match linalg::project_psd(&g, ConeSign::Minus) {
                Ok(v) => v,
                Err(_) => {
                    out.iter_mut().for_each(|o| *o = f64::NAN);
                    return;
                }
            };
            out[p * m + i * nn..p * m + (i + 1) * nn].copy_from_slice(up.as_slice());
        }
        let w_out = p * m + p * nn;
        for i in 0..p {
            for j in 0..m {
                let mix: f64 = (0..p).map(|l| w_mat.get(i, l) * x[l * m + j]).sum();
                out[w_out + i * m + j] = w[i * m + j] + 0.5 * (x[i * m + j] - mix);
            }
        }
        for i in 0..p {
            let ag = &self.instance.agents[i];
            let u = self.layout.u(s, i);
            let up = &out[p * m + i * nn..p * m + (i + 1) * nn];
            let extrap: Vec<f64> = up.iter().zip(u).map(|(a, b)| 2.0 * a - b).collect();
            for j in 0..m {
                let idx = i * m + j;
                let wn = out[w_out + idx];
                let adj = frob(ag.a[j].as_slice(), &extrap);
                out[idx] = x[idx] - alpha * beta * (2.0 * wn - w[idx]) + alpha * (adj - ag.c[j]);
            }
        }
    }

    fn name(&self) -> String {
        let l = self.layout;
        format!("pg-extra(p={}, m={}, n={}, alpha={}, beta={})", l.p, l.m, l.n, self.alpha, self.beta)
    }
}

/// Build the sweep on the instance and mixing matrix.
pub fn pg_extra_operator(
    instance: SdpInstance,
    mixing: MixingMatrix,
    alpha: f64,
    beta: f64,
) -> Result<PgExtraOperator, PgExtraError> {
    PgExtraOperator::new(instance, mixing, alpha, beta)
}

/// Result of sampling `‖Ta − Tb‖_M ≤ ‖a − b‖_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricAudit {
    pub samples: usize,
    /// Largest `‖Ta − Tb‖_M − ‖a − b‖_M`.
    pub max_excess: f64,
    pub passed: bool,
}

pub fn audit_m_nonexpansive(op: &PgExtraOperator, samples: usize, seed: u64) -> Result<MetricAudit, PgExtraError> {
    let mut rng = SplitMix64::new(seed);
    let mut max_excess = f64::NEG_INFINITY;
    let dim = op.layout.len();
    for s in 0..samples {
        let scale = [0.1, 1.0, 10.0][s % 3];
        let a = op.random_state(&mut rng, scale);
        let b = op.random_state(&mut rng, scale);
        let mut ta = vec![0.0; dim];
        let mut tb = vec![0.0; dim];
        op.apply(a.as_slice(), &mut ta);
        op.apply(b.as_slice(), &mut tb);
        let before = op.m_norm_sq(a.as_slice(), b.as_slice())?.max(0.0).sqrt();
        let after = op.m_norm_sq(&ta, &tb)?.max(0.0).sqrt();
        max_excess = max_excess.max(after - before);
    }
    Ok(MetricAudit { samples, max_excess, passed: max_excess <= 1e-8 })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Variant {
    Picard,
    Ohm,
    Km(f64),
}

impl Variant {
    pub fn schedule(&self) -> Schedule {
        match self {
            Variant::Picard => Schedule::Picard,
            Variant::Ohm => Schedule::Ohm,
            Variant::Km(l) => Schedule::Km(LambdaRule::Constant(*l)),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Variant::Picard => "picard".into(),
            Variant::Ohm => "ohm".into(),
            Variant::Km(l) => format!("km-{l}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub m: usize,
    pub n: usize,
    pub p: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub objective: ObjectiveKind,
    /// Edge list; `None` selects [`ring_with_chords`].
    pub edges: Option<Vec<(usize, usize)>>,
    pub alpha: f64,
    pub beta: f64,
    pub horizon: usize,
    pub variants: Vec<Variant>,
    /// The reference `v̂` comes from a run this many times longer.
    pub reference_factor: usize,
    pub reference: Reference,
}

/// How the reference `v̂` is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    /// `−(x^K − x⁰)/K` of a Picard run.
    PicardNormalized,
    /// Residual `x^K − Tx^K` of an anchored run.
    OhmResidual,
}

impl ExperimentConfig {
    /// Reduced-scale setting used by the tests.
    pub fn reduced() -> Self {
        ExperimentConfig {
            m: 5,
            n: 4,
            p: 5,
            epsilon: 0.5,
            seed: 0,
            objective: ObjectiveKind::Random,
            edges: None,
            alpha: 0.01,
            beta: 0.01,
            horizon: 5000,
            variants: vec![Variant::Picard, Variant::Ohm],
            reference_factor: 40,
            reference: Reference::PicardNormalized,
        }
    }

    /// Full-scale setting: `n = 10, m = 11, p = 10`, 50,000 sweeps.
    pub fn full() -> Self {
        ExperimentConfig { m: 11, n: 10, p: 10, horizon: 50_000, ..Self::reduced() }
    }
}

/// All squared norms are `M`-norms.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRow {
    pub k: usize,
    pub norm_iter_norm_sq: Option<f64>,
    pub fpr_mnorm_sq: f64,
    pub norm_iter_dist_v_sq: Option<f64>,
    pub fpr_dist_v_sq: f64,
    /// `⟨x^k − Tx^k, v̂⟩_M`
    pub fpr_dot_v: f64,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub variant: Variant,
    pub rows: Vec<SeriesRow>,
}

pub const SERIES_HEADER: [&str; 5] = ["k", "norm_iter_norm_sq", "fpr_mnorm_sq", "norm_iter_dist_v_sq", "fpr_dist_v_sq"];

impl Series {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), PgExtraError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SERIES_HEADER)?;
        let opt = |v: Option<f64>| v.map(fmt17).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.k.to_string(),
                opt(r.norm_iter_norm_sq),
                fmt17(r.fpr_mnorm_sq),
                opt(r.norm_iter_dist_v_sq),
                fmt17(r.fpr_dist_v_sq),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn last(&self) -> &SeriesRow {
        self.rows.last().expect("series has at least one row")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentChecks {
    /// Normalized-iterate norms² of the Picard and anchored runs at the
    /// horizon, relative difference against the Picard value.
    pub norm_iter_relative_diff: Option<f64>,
    pub norm_iter_agree: Option<bool>,
    /// Anchored residual² ≤ Picard residual² at the horizon.
    pub ohm_residual_smaller: Option<bool>,
    /// Smallest `⟨v^k, v̂⟩_M / ‖v̂‖²_M` over the tail half of every series.
    pub min_projection_ratio: f64,
    pub projection_ok: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub instance: SdpInstance,
    pub l_norm_sq: f64,
    pub v_hat: DenseVector,
    pub v_hat_norm_sq: f64,
    pub series: Vec<Series>,
    pub checks: ExperimentChecks,
}

fn run_series(op: &OperatorSpec, pg: &PgExtraOperator, variant: &Variant, horizon: usize, v_hat: &DenseVector) -> Result<Series, PgExtraError> {
    let x0 = pg.zero_state();
    let mut st = Stepper::new(op, variant.schedule(), x0.clone())?;
    let mut rows = Vec::with_capacity(horizon + 1);
    let zero = vec![0.0; v_hat.len()];
    for _ in 0..=horizon {
        let s = st.step()?;
        let r = s.residual();
        let normalized = s.normalized(&x0);
        rows.push(SeriesRow {
            k: s.k,
            norm_iter_norm_sq: normalized.as_ref().map(|z| pg.m_norm_sq(z.as_slice(), &zero)).transpose()?,
            fpr_mnorm_sq: pg.m_norm_sq(r.as_slice(), &zero)?,
            norm_iter_dist_v_sq: normalized.as_ref().map(|z| pg.m_norm_sq(z.as_slice(), v_hat.as_slice())).transpose()?,
            fpr_dist_v_sq: pg.m_norm_sq(r.as_slice(), v_hat.as_slice())?,
            fpr_dot_v: pg.m_inner(r.as_slice(), v_hat.as_slice())?,
        });
    }
    Ok(Series { variant: variant.clone(), rows })
}

/// Build the instance, estimate `v̂` with a long Picard run and record every
/// configured variant for `horizon` sweeps.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, PgExtraError> {
    let instance = make_infeasible_chain(config.m, config.n, config.p, config.epsilon, config.seed, config.objective)?;
    let edges = config.edges.clone().unwrap_or_else(|| ring_with_chords(config.p));
    let mixing = metropolis_weights(config.p, &edges)?;
    let pg = pg_extra_operator(instance.clone(), mixing, config.alpha, config.beta)?;
    let l_norm_sq = pg.l_norm_sq;
    let op = pg.clone().into_operator();
    let x0 = pg.zero_state();
    let long = config.horizon.max(1) * config.reference_factor.max(1);
    let schedule = match config.reference {
        Reference::PicardNormalized => Schedule::Picard,
        Reference::OhmResidual => Schedule::Ohm,
    };
    let mut st = Stepper::new(&op, schedule, x0.clone())?;
    let mut last = st.step()?;
    for _ in 0..long {
        last = st.step()?;
    }
    let v_hat = match config.reference {
        Reference::PicardNormalized => last.normalized(&x0).unwrap_or_else(|| pg.zero_state()),
        Reference::OhmResidual => last.residual(),
    };
    let zero = vec![0.0; v_hat.len()];
    let v_hat_norm_sq = pg.m_norm_sq(v_hat.as_slice(), &zero)?;
    let series: Vec<Series> = config
        .variants
        .iter()
        .map(|v| run_series(&op, &pg, v, config.horizon, &v_hat))
        .collect::<Result<_, _>>()?;
    let find = |v: &Variant| series.iter().find(|s| &s.variant == v);
    let (picard, ohm) = (find(&Variant::Picard), find(&Variant::Ohm));
    let norm_iter_relative_diff = match (picard, ohm) {
        (Some(a), Some(b)) => match (a.last().norm_iter_norm_sq, b.last().norm_iter_norm_sq) {
            (Some(x), Some(y)) if x > 0.0 => Some((x - y).abs() / x),
            _ => None,
        },
        _ => None,
    };
    let ohm_residual_smaller = match (picard, ohm) {
        (Some(a), Some(b)) => Some(b.last().fpr_mnorm_sq <= a.last().fpr_mnorm_sq),
        _ => None,
    };
    let mut min_projection_ratio = f64::INFINITY;
    if v_hat_norm_sq > 0.0 {
        for s in &series {
            for r in &s.rows[config.horizon / 2..] {
                min_projection_ratio = min_projection_ratio.min(r.fpr_dot_v / v_hat_norm_sq);
            }
        }
    }
    let checks = ExperimentChecks {
        norm_iter_relative_diff,
        norm_iter_agree: norm_iter_relative_diff.map(|d| d <= 0.05),
        ohm_residual_smaller,
        min_projection_ratio,
        projection_ok: min_projection_ratio >= 1.0 - 1e-3,
    };
    Ok(ExperimentOutput { instance, l_norm_sq, v_hat, v_hat_norm_sq, series, checks })
}
