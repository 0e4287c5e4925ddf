//! Finite-MDP laboratory: exact standard, kernel-robust and state-ball
//! operators on a line metric, their brute-force and dual evaluations, and a
//! fixed-point solver.
//!
//! States sit on a line with `d(i, j) = |i − j|` and transport cost order 1,
//! so the Wasserstein distance between two kernels is the L1 distance of
//! their CDFs.

mod fixture;
mod verify;

pub use fixture::{fixture_paths, load_fixture, load_fixture_dir, parse_fixture, Fixture};
pub use verify::{verify_fixture, verify_fixtures, FixtureReport, PropertyCheck, VerifyOptions, VerifyReport};

use crate::{Error, Result};

/// Tolerance on kernel row sums.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Iteration cap of [`iterate_to_fixpoint`].
pub const MAX_ITERATIONS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `p[s][a][s']`
    pub p: Vec<Vec<Vec<f64>>>,
    /// `r[s][a]`
    pub r: Vec<Vec<f64>>,
    pub gamma: f64,
}

fn check_simplex(p: &[f64], what: &str) -> Result<()> {
    if let Some(j) = p.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::invalid(format!("{what}: entry {j} = {} is not a probability", p[j])));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::invalid(format!("{what}: sums to {total}, not 1")));
    }
    Ok(())
}

impl TabularMdp {
    pub fn new(p: Vec<Vec<Vec<f64>>>, r: Vec<Vec<f64>>, gamma: f64) -> Result<Self> {
        let n_states = p.len();
        if n_states == 0 {
            return Err(Error::invalid("an MDP needs at least one state"));
        }
        let n_actions = p[0].len();
        if n_actions == 0 {
            return Err(Error::invalid("an MDP needs at least one action"));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::invalid(format!("gamma {gamma} outside (0, 1)")));
        }
        if r.len() != n_states {
            return Err(Error::invalid(format!("{} reward rows for {n_states} states", r.len())));
        }
        for s in 0..n_states {
            if p[s].len() != n_actions || r[s].len() != n_actions {
                return Err(Error::invalid(format!("state {s} does not have {n_actions} actions")));
            }
            for a in 0..n_actions {
                if p[s][a].len() != n_states {
                    return Err(Error::invalid(format!("P[{s}][{a}] has {} entries", p[s][a].len())));
                }
                check_simplex(&p[s][a], &format!("P[{s}][{a}]"))?;
                if !r[s][a].is_finite() {
                    return Err(Error::invalid(format!("R[{s}][{a}] is not finite")));
                }
            }
        }
        Ok(Self { n_states, n_actions, p, r, gamma })
    }

    /// Upper end of the value range `[0, 1/(1−γ)]`.
    pub fn q_max(&self) -> f64 {
        1.0 / (1.0 - self.gamma)
    }

    /// Largest distance between two states.
    pub fn diameter(&self) -> f64 {
        (self.n_states - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    data: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, data: vec![0.0; n_states * n_actions] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(Error::invalid("ragged Q table"));
        }
        Ok(Self { n_states: rows.len(), n_actions, data: rows.concat() })
    }

    /// Uniform random table over `[0, hi)`.
    pub fn random(n_states: usize, n_actions: usize, hi: f64, rng: &mut impl rand::Rng) -> Self {
        Self { n_states, n_actions, data: (0..n_states * n_actions).map(|_| rng.random_range(0.0..hi)).collect() }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.data[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.data[s * self.n_actions + a] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// `V(s) = max_a Q(s, a)`.
    pub fn state_values(&self) -> Vec<f64> {
        self.data.chunks(self.n_actions).map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect()
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn clip(&mut self, lo: f64, hi: f64) {
        for x in &mut self.data {
            *x = x.clamp(lo, hi);
        }
    }

    fn check(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_states != mdp.n_states || self.n_actions != mdp.n_actions {
            return Err(Error::invalid(format!(
                "Q table is {}x{}, MDP is {}x{}",
                self.n_states, self.n_actions, mdp.n_states, mdp.n_actions
            )));
        }
        Ok(())
    }
}

/// Exact W1 between two distributions on the line `0, 1, …, n−1`.
pub fn w1_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid(format!("supports differ: {} vs {}", p.len(), q.len())));
    }
    check_simplex(p, "first distribution")?;
    check_simplex(q, "second distribution")?;
    Ok(w1_unchecked(p, q))
}

fn w1_unchecked(p: &[f64], q: &[f64]) -> f64 {
    let (mut fp, mut fq, mut total) = (0.0, 0.0, 0.0);
    for i in 0..p.len().saturating_sub(1) {
        fp += p[i];
        fq += q[i];
        total += (fp - fq).abs();
    }
    total
}

fn backup(mdp: &TabularMdp, q: &QTable, inner: impl Fn(usize, usize, &[f64]) -> f64) -> Result<QTable> {
    q.check(mdp)?;
    let v = q.state_values();
    let mut out = QTable::zeros(mdp.n_states, mdp.n_actions);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            out.set(s, a, mdp.r[s][a] + mdp.gamma * inner(s, a, &v));
        }
    }
    Ok(out)
}

fn expectation(p: &[f64], v: &[f64]) -> f64 {
    p.iter().zip(v).map(|(p, v)| p * v).sum()
}

/// `R + γ·Σ P(s') max_a' Q(s', a')`.
pub fn bellman_standard(mdp: &TabularMdp, q: &QTable) -> Result<QTable> {
    backup(mdp, q, |s, a, v| expectation(&mdp.p[s][a], v))
}

/// `min_{s̄ : d(s̄, s') ≤ ε} V(s̄)` for every `s'`.
pub fn ball_minima(v: &[f64], eps: f64) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|j| (0..n).filter(|&k| (k as f64 - j as f64).abs() <= eps).map(|k| v[k]).fold(f64::INFINITY, f64::min))
        .collect()
}

/// `R + γ·Σ P(s') min_{s̄ ∈ U_ε(s')} V(s̄)`.
pub fn bellman_state_form(mdp: &TabularMdp, q: &QTable, eps: f64) -> Result<QTable> {
    check_radius(eps)?;
    q.check(mdp)?;
    let minima = ball_minima(&q.state_values(), eps);
    backup(mdp, q, |s, a, _| expectation(&mdp.p[s][a], &minima))
}

/// Standard backup of `mdp_true` where `mask[s][a]` is true, state-form
/// backup of `mdp_est` elsewhere.
pub fn bellman_conservative(
    mdp_true: &TabularMdp,
    mdp_est: &TabularMdp,
    q: &QTable,
    eps: f64,
    mask: &[Vec<bool>],
) -> Result<QTable> {
    if mdp_true.n_states != mdp_est.n_states || mdp_true.n_actions != mdp_est.n_actions {
        return Err(Error::invalid("true and estimated MDPs differ in size"));
    }
    if mask.len() != mdp_true.n_states || mask.iter().any(|m| m.len() != mdp_true.n_actions) {
        return Err(Error::invalid("source mask does not match the MDP"));
    }
    let standard = bellman_standard(mdp_true, q)?;
    let robust = bellman_state_form(mdp_est, q, eps)?;
    let mut out = robust;
    for (s, row) in mask.iter().enumerate() {
        for (a, &accurate) in row.iter().enumerate() {
            if accurate {
                out.set(s, a, standard.get(s, a));
            }
        }
    }
    Ok(out)
}

fn check_radius(eps: f64) -> Result<()> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("radius {eps} must be >= 0")));
    }
    Ok(())
}

/// Every point of the simplex over `n` states whose coordinates are
/// multiples of `1/k`.
pub fn simplex_grid(n: usize, k: usize) -> Vec<Vec<f64>> {
    fn rec(n: usize, left: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == n - 1 {
            cur.push(left);
            out.push(cur.iter().map(|&c| c as f64 / k as f64).collect());
            cur.pop();
            return;
        }
        for c in 0..=left {
            cur.push(c);
            rec(n, left - c, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        rec(n, k, k, &mut Vec::with_capacity(n), &mut out);
    }
    out
}

/// Kernel-ball robust backup by enumeration: for each `(s, a)` the candidate
/// kernels are the mesh points within W1 `ε` of `P[s][a]` plus the center.
#[derive(Debug, Clone)]
pub struct RobustBruteForce {
    pub eps: f64,
    pub delta: f64,
    /// `feasible[s][a]`, each a list of kernels.
    feasible: Vec<Vec<Vec<Vec<f64>>>>,
}

impl RobustBruteForce {
    pub fn new(mdp: &TabularMdp, eps: f64, delta: f64) -> Result<Self> {
        check_radius(eps)?;
        let k = (1.0 / delta).round();
        if !(delta > 0.0 && delta <= 1.0) || ((k * delta) - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("mesh {delta} must divide 1")));
        }
        let grid = simplex_grid(mdp.n_states, k as usize);
        let feasible = mdp
            .p
            .iter()
            .map(|row| {
                row.iter()
                    .map(|center| {
                        let mut set = vec![center.clone()];
                        set.extend(grid.iter().filter(|g| w1_unchecked(g, center) <= eps + 1e-12).cloned());
                        set
                    })
                    .collect()
            })
            .collect();
        Ok(Self { eps, delta, feasible })
    }

    pub fn feasible_count(&self, s: usize, a: usize) -> usize {
        self.feasible[s][a].len()
    }

    pub fn apply(&self, mdp: &TabularMdp, q: &QTable) -> Result<QTable> {
        backup(mdp, q, |s, a, v| {
            let set = &self.feasible[s][a];
            assert!(!set.is_empty(), "the center kernel is always feasible");
            set.iter().map(|k| expectation(k, v)).fold(f64::INFINITY, f64::min)
        })
    }
}

/// Convenience wrapper building the feasible sets on every call.
pub fn bellman_robust_bruteforce(mdp: &TabularMdp, q: &QTable, eps: f64, delta: f64) -> Result<QTable> {
    RobustBruteForce::new(mdp, eps, delta)?.apply(mdp, q)
}

/// `0` followed by `n − 1` log-spaced points from `hi·10⁻⁴` to `hi`.
pub fn lambda_grid(hi: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0];
    if n > 1 {
        let m = n - 1;
        out.extend((0..m).map(|i| {
            let t = if m == 1 { 1.0 } else { i as f64 / (m - 1) as f64 };
            hi * 10f64.powf(-4.0 * (1.0 - t))
        }));
    }
    out
}

/// The grid used by the verification suite: 200 points up to `10/(1−γ)`.
pub fn default_lambda_grid(gamma: f64) -> Vec<f64> {
    lambda_grid(10.0 / (1.0 - gamma), 200)
}

/// Dual evaluation of the kernel-robust backup:
/// `sup_λ E_{s'∼P}[min_s̄ (V(s̄) + λ·d(s', s̄))] − λε` over `lambdas`.
pub fn bellman_robust_dual(mdp: &TabularMdp, q: &QTable, eps: f64, lambdas: &[f64]) -> Result<QTable> {
    check_radius(eps)?;
    if lambdas.is_empty() || lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(Error::invalid("lambda grid must be non-empty and non-negative"));
    }
    q.check(mdp)?;
    let v = q.state_values();
    let n = mdp.n_states;
    // Inner minima per λ do not depend on (s, a).
    let inner: Vec<Vec<f64>> = lambdas
        .iter()
        .map(|&l| {
            (0..n)
                .map(|j| (0..n).map(|k| v[k] + l * (j as f64 - k as f64).abs()).fold(f64::INFINITY, f64::min))
                .collect()
        })
        .collect();
    backup(mdp, q, |s, a, _| {
        lambdas
            .iter()
            .zip(&inner)
            .map(|(l, m)| expectation(&mdp.p[s][a], m) - l * eps)
            .fold(f64::NEG_INFINITY, f64::max)
    })
}

/// Result of [`iterate_to_fixpoint`].
#[derive(Debug, Clone, PartialEq)]
pub struct Fixpoint {
    pub q: QTable,
    pub iterations: usize,
}

/// Applies `op` from `q0`, clipping to `[0, q_max]` after each step, until
/// successive tables differ by less than `tol` in sup norm.
pub fn iterate_to_fixpoint(
    mut op: impl FnMut(&QTable) -> Result<QTable>,
    q0: QTable,
    q_max: f64,
    tol: f64,
) -> Result<Fixpoint> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance {tol} must be positive")));
    }
    let mut q = q0;
    for it in 1..=MAX_ITERATIONS {
        let mut next = op(&q)?;
        next.clip(0.0, q_max);
        let gap = next.sup_distance(&q);
        q = next;
        if gap < tol {
            return Ok(Fixpoint { q, iterations: it });
        }
    }
    Err(Error::NoConvergence(MAX_ITERATIONS))
}
