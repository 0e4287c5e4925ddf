//! The tabular property suite: contraction, pessimism, monotonicity in the
//! radius and dual/primal agreement, reported per fixture.

use std::path::Path;

use serde::Serialize;

use super::{
    bellman_conservative, bellman_robust_dual, bellman_standard, bellman_state_form, iterate_to_fixpoint, lambda_grid,
    load_fixture, Fixture, QTable, RobustBruteForce,
};
use crate::rng::{derive_seed, rng_from_seed};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyOptions {
    /// Random `(Q1, Q2)` pairs per operator variant.
    pub pairs: usize,
    /// Radii of the pessimism and monotonicity checks, ascending.
    pub radii: Vec<f64>,
    /// Radii of the kernel-ball checks.
    pub kernel_radii: Vec<f64>,
    /// Simplex mesh of the brute force.
    pub delta: f64,
    pub lambda_points: usize,
    /// Largest state count for which the brute force runs.
    pub max_bruteforce_states: usize,
    pub contraction_slack: f64,
    pub order_slack: f64,
    pub dual_tolerance: f64,
    /// Random tables scored by the dual/primal and ordering checks.
    pub probe_tables: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            pairs: 1000,
            radii: vec![0.0, 0.25, 0.5, 1.0, 2.0],
            kernel_radii: vec![0.1, 0.3, 0.5],
            delta: 0.02,
            lambda_points: 200,
            max_bruteforce_states: 4,
            contraction_slack: 1e-9,
            order_slack: 1e-12,
            dual_tolerance: 1e-2,
            probe_tables: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyCheck {
    pub property: String,
    pub passed: bool,
    /// The worst measured quantity (excess over the bound, or the gap).
    pub worst: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixtureReport {
    pub fixture: String,
    pub checks: Vec<PropertyCheck>,
    /// Largest |dual − brute force| entry at the fixture's fixed points,
    /// when the brute force ran.
    pub dual_gap: Option<f64>,
    /// The same gap over uniformly random tables; reported, not checked.
    pub dual_gap_random: Option<f64>,
}

impl FixtureReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub fixtures: Vec<FixtureReport>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.fixtures.iter().all(FixtureReport::passed)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.fixtures.iter().filter(|f| !f.passed()).map(|f| f.fixture.as_str()).collect()
    }
}

fn check(property: &str, worst: f64, bound: f64, detail: String) -> PropertyCheck {
    PropertyCheck { property: property.to_string(), passed: worst <= bound, worst, detail }
}

type Operator<'a> = Box<dyn Fn(&QTable) -> Result<QTable> + 'a>;

fn variants<'a>(fx: &'a Fixture, opts: &VerifyOptions, brute: &'a [RobustBruteForce]) -> Vec<(String, Operator<'a>)> {
    let mdp = &fx.mdp;
    let lambdas = lambda_grid(10.0 / (1.0 - mdp.gamma), opts.lambda_points);
    let mut out: Vec<(String, Operator<'a>)> = vec![("standard".into(), Box::new(move |q| bellman_standard(mdp, q)))];
    for &eps in &opts.radii {
        out.push((format!("state-form eps={eps}"), Box::new(move |q| bellman_state_form(mdp, q, eps))));
        out.push((
            format!("conservative eps={eps}"),
            Box::new(move |q| bellman_conservative(mdp, &fx.estimated, q, eps, &fx.accurate)),
        ));
    }
    for &eps in &opts.kernel_radii {
        let l = lambdas.clone();
        out.push((format!("dual eps={eps}"), Box::new(move |q| bellman_robust_dual(mdp, q, eps, &l))));
    }
    for b in brute {
        out.push((format!("brute-force eps={}", b.eps), Box::new(move |q| b.apply(mdp, q))));
    }
    out
}

/// Runs every property on one fixture.
pub fn verify_fixture(fx: &Fixture, opts: &VerifyOptions) -> Result<FixtureReport> {
    let mdp = &fx.mdp;
    let (n, m, hi) = (mdp.n_states, mdp.n_actions, mdp.q_max());
    let brute: Vec<RobustBruteForce> = if n <= opts.max_bruteforce_states {
        opts.kernel_radii.iter().map(|&eps| RobustBruteForce::new(mdp, eps, opts.delta)).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let mut checks = Vec::new();

    // Contraction.
    let mut rng = rng_from_seed(derive_seed(opts.seed, &format!("contraction/{}", fx.name)));
    let mut worst = f64::NEG_INFINITY;
    let mut worst_variant = String::new();
    let ops = variants(fx, opts, &brute);
    for _ in 0..opts.pairs {
        let q1 = QTable::random(n, m, hi, &mut rng);
        let q2 = QTable::random(n, m, hi, &mut rng);
        let bound = mdp.gamma * q1.sup_distance(&q2);
        for (name, op) in &ops {
            let excess = op(&q1)?.sup_distance(&op(&q2)?) - bound;
            if excess > worst {
                worst = excess;
                worst_variant.clone_from(name);
            }
        }
    }
    checks.push(check(
        "contraction",
        worst,
        opts.contraction_slack,
        format!(
            "{} variants x {} pairs, worst ||TQ1-TQ2|| - gamma||Q1-Q2|| = {worst:.3e} ({worst_variant})",
            ops.len(),
            opts.pairs
        ),
    ));

    // Probe tables: random ones and two fixed points.
    let mut rng = rng_from_seed(derive_seed(opts.seed, &format!("probes/{}", fx.name)));
    let random: Vec<QTable> = (0..opts.probe_tables).map(|_| QTable::random(n, m, hi, &mut rng)).collect();
    let fixed = vec![
        iterate_to_fixpoint(|q| bellman_standard(mdp, q), QTable::zeros(n, m), hi, 1e-10)?.q,
        iterate_to_fixpoint(|q| bellman_state_form(mdp, q, 1.0), QTable::zeros(n, m), hi, 1e-10)?.q,
    ];
    let probes: Vec<&QTable> = random.iter().chain(&fixed).collect();

    // Pessimism and monotonicity in the radius.
    let mut pess = f64::NEG_INFINITY;
    let mut mono = f64::NEG_INFINITY;
    for &q in &probes {
        let standard = bellman_standard(mdp, q)?;
        let mut prev: Option<QTable> = None;
        for &eps in &opts.radii {
            let robust = bellman_state_form(mdp, q, eps)?;
            for (r, s) in robust.values().iter().zip(standard.values()) {
                pess = pess.max(r - s);
            }
            if let Some(p) = &prev {
                for (r, s) in robust.values().iter().zip(p.values()) {
                    mono = mono.max(r - s);
                }
            }
            prev = Some(robust);
        }
    }
    checks.push(check(
        "pessimism",
        pess.max(0.0),
        opts.order_slack,
        format!("max(state-form - standard) = {pess:.3e} over radii {:?}", opts.radii),
    ));
    checks.push(check(
        "radius-monotonicity",
        mono.max(0.0),
        opts.order_slack,
        format!("max increase between consecutive radii = {mono:.3e}"),
    ));

    // Dual/primal agreement.
    let (mut dual_gap, mut dual_gap_random) = (None, None);
    if !brute.is_empty() {
        let lambdas = lambda_grid(10.0 / (1.0 - mdp.gamma), opts.lambda_points);
        let gap_over = |tables: &[QTable]| -> Result<f64> {
            let mut gap: f64 = 0.0;
            for b in &brute {
                for q in tables {
                    let d = bellman_robust_dual(mdp, q, b.eps, &lambdas)?;
                    gap = gap.max(d.sup_distance(&b.apply(mdp, q)?));
                }
            }
            Ok(gap)
        };
        let gap = gap_over(&fixed)?;
        let gap_random = gap_over(&random)?;
        dual_gap = Some(gap);
        dual_gap_random = Some(gap_random);
        checks.push(check(
            "dual-primal",
            gap,
            opts.dual_tolerance,
            format!(
                "max |dual - brute force| = {gap:.3e} at the fixed points, {gap_random:.3e} over random tables \
                 (mesh {}, {} lambdas, radii {:?})",
                opts.delta, opts.lambda_points, opts.kernel_radii
            ),
        ));
    }

    Ok(FixtureReport { fixture: fx.name.clone(), checks, dual_gap, dual_gap_random })
}

/// Loads and verifies every fixture file; a file that fails to load is
/// reported as a failed `simplex` check under its file name.
pub fn verify_fixtures(paths: &[impl AsRef<Path>], opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut fixtures = Vec::with_capacity(paths.len());
    for p in paths {
        let p = p.as_ref();
        match load_fixture(p) {
            Ok(fx) => fixtures.push(verify_fixture(&fx, opts)?),
            Err(e) if e.is_validation() => fixtures.push(FixtureReport {
                fixture: p.display().to_string(),
                checks: vec![PropertyCheck {
                    property: "simplex".into(),
                    passed: false,
                    worst: f64::NAN,
                    detail: e.to_string(),
                }],
                dual_gap: None,
                dual_gap_random: None,
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(VerifyReport { fixtures })
}
