mod common;

use micro_core::agent::{Agent, FnCritic, FnPolicy, SquashedGaussianPolicy};
use micro_core::data::NormStats;
use micro_core::envs::PendulumParams;
use micro_core::ndmath::{Activation, Linear, Mlp, Tensor};
use micro_core::penalty::min_q;
use micro_core::rng::rng_from_seed;
use micro_core::robust_eval::{
    ad_scores, attack_ad, attack_curve, attack_mq, attack_ra, candidates, evaluate, evaluate_under_attack, jeffreys,
    mq_scores, normalized_score, sweep_env_params, AttackKind, AttackSpec, ScoreRefs, SweepGrid,
};
use rand::Rng;

fn agent(seed: u64) -> Agent {
    let config = micro_core::agent::AgentConfig { hidden_units: 16, ..common::small_agent_config() };
    let stats = NormStats::from_transitions(&common::random_pendulum_data(400, seed), false).unwrap();
    Agent::new(3, 1, 2.0, stats, &config, seed).unwrap()
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// One-dimensional policy with pre-squash mean `s` and fixed log σ.
fn identity_mean_policy() -> SquashedGaussianPolicy {
    let mut layer = Linear::zeros(1, 2);
    layer.weight.data_mut().copy_from_slice(&[1.0, 0.0]);
    layer.bias.data_mut()[1] = -0.5;
    SquashedGaussianPolicy::from_net(Mlp::from_layers(vec![layer], Activation::Identity).unwrap(), 1, 2.0).unwrap()
}

fn constant_policy() -> SquashedGaussianPolicy {
    let mut layer = Linear::zeros(3, 2);
    layer.bias.data_mut().copy_from_slice(&[0.4, -1.0]);
    SquashedGaussianPolicy::from_net(Mlp::from_layers(vec![layer], Activation::Identity).unwrap(), 1, 2.0).unwrap()
}

#[test]
fn zero_radius_attacks_return_the_state() {
    let s = [0.3, -0.7, 1.1];
    let a = agent(0);
    let mut rng = rng_from_seed(1);
    assert_eq!(attack_ra(&s, 0.0, &mut rng), s);
    assert_eq!(attack_ad(&s, &a.policy, 0.0, 30, &mut rng).unwrap(), s);
    assert_eq!(attack_mq(&s, &a.policy, &a.critics.online, 0.0, 30, &mut rng).unwrap(), s);
    assert_eq!(candidates(&s, 0.0, 30, &mut rng).len(), 1);
}

#[test]
fn attacks_stay_inside_the_ball() {
    let a = agent(1);
    let mut rng = rng_from_seed(2);
    for _ in 0..200 {
        let s: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
        let eps = rng.random_range(0.0..0.5);
        let n = rng.random_range(1..40);
        for out in [
            attack_ra(&s, eps, &mut rng),
            attack_ad(&s, &a.policy, eps, n, &mut rng).unwrap(),
            attack_mq(&s, &a.policy, &a.critics.online, eps, n, &mut rng).unwrap(),
        ] {
            assert!(linf(&out, &s) <= eps);
        }
    }
}

#[test]
fn random_attack_is_seeded() {
    let s = [0.1, 0.2, 0.3];
    let x = attack_ra(&s, 0.2, &mut rng_from_seed(8));
    let y = attack_ra(&s, 0.2, &mut rng_from_seed(8));
    let z = attack_ra(&s, 0.2, &mut rng_from_seed(9));
    assert_eq!(x, y);
    assert_ne!(x, z);
}

#[test]
fn ad_picks_the_largest_mean_shift() {
    let pi = identity_mean_policy();
    let s = [0.25];
    let cands = candidates(&s, 0.3, 20, &mut rng_from_seed(4));
    assert_eq!(cands.len(), 21);
    let best = cands.iter().max_by(|a, b| (a[0] - s[0]).abs().total_cmp(&(b[0] - s[0]).abs())).unwrap();
    let picked = attack_ad(&s, &pi, 0.3, 20, &mut rng_from_seed(4)).unwrap();
    assert_eq!(&picked, best);

    // Re-scoring every candidate independently agrees with the pick.
    let (m0, l0) = pi.distribution(&Tensor::from_rows(&[s])).unwrap();
    let rescored: Vec<f64> = cands
        .iter()
        .map(|c| {
            let (m, l) = pi.distribution(&Tensor::from_rows(&[c.clone()])).unwrap();
            jeffreys(m0.data(), l0.data(), m.data(), l.data())
        })
        .collect();
    let k = (0..rescored.len()).fold(0, |k, i| if rescored[i] > rescored[k] { i } else { k });
    assert_eq!(picked, cands[k]);
    assert_eq!(ad_scores(&s, &cands, &pi).unwrap(), rescored);
}

#[test]
fn jeffreys_closed_form() {
    assert_eq!(jeffreys(&[0.3], &[-0.2], &[0.3], &[-0.2]), 0.0);
    // Equal variances: (Δμ)²/σ².
    let d = jeffreys(&[0.0], &[0.0], &[0.5], &[0.0]);
    assert!((d - 0.25).abs() < 1e-15);
    let d = jeffreys(&[0.0], &[0.0], &[0.0], &[2.0f64.ln()]);
    assert!((d - (4.0 / 2.0 + 1.0 / 8.0 - 1.0)).abs() < 1e-15);
}

#[test]
fn state_independent_policy_leaves_ad_at_the_state() {
    let s = [0.5, -0.5, 0.0];
    let out = attack_ad(&s, &constant_policy(), 0.2, 30, &mut rng_from_seed(0)).unwrap();
    assert_eq!(out, s);
}

#[test]
fn constant_critics_leave_mq_at_the_state() {
    let a = agent(2);
    let c = |_: &[f64], _: &[f64]| 1.5;
    let critics = [FnCritic(c), FnCritic(c)];
    let s = [0.5, -0.5, 0.0];
    assert_eq!(attack_mq(&s, &a.policy, &critics, 0.2, 30, &mut rng_from_seed(0)).unwrap(), s);
}

#[test]
fn mq_matches_exhaustive_rescoring_with_a_quadratic_critic() {
    // Q(s, a) = −(a − s₀)², policy a = 2·tanh(s₁).
    let c = |s: &[f64], a: &[f64]| -(a[0] - s[0]).powi(2);
    let critics = [FnCritic(c), FnCritic(c)];
    let pi = FnPolicy(|s: &[f64]| vec![2.0 * s[1].tanh()]);
    let s = [0.2, 0.1, -0.4];
    let cands = candidates(&s, 0.25, 20, &mut rng_from_seed(6));
    let picked = attack_mq(&s, &pi, &critics, 0.25, 20, &mut rng_from_seed(6)).unwrap();
    let rescored: Vec<f64> = cands.iter().map(|x| -(2.0 * x[1].tanh() - s[0]).powi(2)).collect();
    let k = (0..rescored.len()).fold(0, |k, i| if rescored[i] < rescored[k] { i } else { k });
    assert_eq!(picked, cands[k]);
    assert_eq!(mq_scores(&s, &cands, &pi, &critics).unwrap(), rescored);
}

#[test]
fn more_candidates_never_help_the_agent() {
    let a = agent(3);
    let s = [0.1, 0.9, -0.3];
    let mut prev_ad = f64::NEG_INFINITY;
    let mut prev_mq = f64::INFINITY;
    for n in [1, 2, 5, 10, 30, 100] {
        let ad = attack_ad(&s, &a.policy, 0.3, n, &mut rng_from_seed(11)).unwrap();
        let d = ad_scores(&s, &[ad], &a.policy).unwrap()[0];
        assert!(d >= prev_ad);
        prev_ad = d;

        let mq = attack_mq(&s, &a.policy, &a.critics.online, 0.3, n, &mut rng_from_seed(11)).unwrap();
        let q = mq_scores(&s, &[mq], &a.policy, &a.critics.online).unwrap()[0];
        assert!(q <= prev_mq);
        prev_mq = q;
    }
    let clean = min_q(
        &a.critics.online,
        &Tensor::from_rows(&[s]),
        &micro_core::agent::Policy::deterministic(&a.policy, &Tensor::from_rows(&[s])).unwrap(),
    )
    .unwrap()[0];
    assert!(prev_mq <= clean);
}

#[test]
fn zero_radius_evaluation_is_bit_identical_to_clean() {
    let a = agent(4);
    let env = PendulumParams::default();
    let clean = evaluate(&a.policy, &a.stats, env, 3, 21).unwrap();
    for kind in AttackKind::ALL {
        let spec = AttackSpec::new(kind, 0.0, 30).unwrap();
        let r = evaluate_under_attack(&a, env, &spec, 3, 21).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&r.returns), bits(&clean.returns), "{kind}");
        assert_eq!(r.mean.to_bits(), clean.mean.to_bits());
    }
}

#[test]
fn attacked_evaluation_is_reproducible() {
    let a = agent(5);
    let env = PendulumParams::default();
    for kind in AttackKind::ALL {
        let spec = AttackSpec::new(kind, 0.2, 10).unwrap();
        let x = evaluate_under_attack(&a, env, &spec, 2, 3).unwrap();
        let y = evaluate_under_attack(&a, env, &spec, 2, 3).unwrap();
        assert_eq!(x, y);
    }
}

#[test]
fn attack_specs_are_validated() {
    assert!(AttackSpec::new(AttackKind::Ra, -0.1, 30).is_err());
    assert!(AttackSpec::new(AttackKind::Ad, f64::NAN, 30).is_err());
    assert!(AttackSpec::new(AttackKind::Mq, 0.1, 0).is_err());
    assert_eq!("mq".parse::<AttackKind>().unwrap(), AttackKind::Mq);
    assert!("pgd".parse::<AttackKind>().is_err());
}

#[test]
fn attack_curve_has_one_record_per_kind_and_radius() {
    let a = agent(6);
    let eps = [0.0, 0.05, 0.1, 0.15, 0.2];
    let recs = attack_curve(&a, PendulumParams::default(), &AttackKind::ALL, &eps, 5, 1, 0).unwrap();
    assert_eq!(recs.len(), 15);
    let clean = evaluate(&a.policy, &a.stats, PendulumParams::default(), 1, 0).unwrap();
    for r in recs.iter().filter(|r| r.epsilon == 0.0) {
        assert_eq!(r.mean, clean.mean);
    }
    assert_eq!(recs[5].kind, AttackKind::Ad);
    assert_eq!(recs[7].epsilon, 0.1);
}

#[test]
fn nominal_sweep_cell_is_clean_evaluation() {
    let a = agent(7);
    let env = PendulumParams::default();
    let grid = SweepGrid { gravity: vec![1.0], friction: vec![1.0] };
    let cells = sweep_env_params(&a.policy, &a.stats, env, &grid, 2, 5).unwrap();
    assert_eq!(cells.len(), 1);
    assert_eq!(cells[0].mean, evaluate(&a.policy, &a.stats, env, 2, 5).unwrap().mean);
}

#[test]
fn sweep_cells_follow_the_grid_declaration() {
    let a = agent(8);
    let grid = SweepGrid { gravity: vec![2.0, 1.0, 0.5], friction: vec![1.5, 1.0, 0.5] };
    let cells = sweep_env_params(&a.policy, &a.stats, PendulumParams::default(), &grid, 1, 0).unwrap();
    assert_eq!(cells.len(), 9);
    for (i, c) in cells.iter().enumerate() {
        assert_eq!((c.g_mult, c.f_mult), (grid.gravity[i / 3], grid.friction[i % 3]));
    }
    let bad = SweepGrid { gravity: vec![2.0], friction: vec![1.0] };
    assert!(sweep_env_params(&a.policy, &a.stats, PendulumParams::default(), &bad, 1, 0).is_err());
    assert!(SweepGrid::default().validate().is_ok());
    assert_eq!(SweepGrid::default().gravity.len() * SweepGrid::default().friction.len(), 30);
}

#[test]
fn normalized_score_formula() {
    let refs = ScoreRefs::new(10.0, 110.0).unwrap();
    assert_eq!(normalized_score(10.0, &refs).unwrap(), 0.0);
    assert_eq!(normalized_score(110.0, &refs).unwrap(), 100.0);
    assert_eq!(normalized_score(60.0, &refs).unwrap(), 50.0);
    assert_eq!(normalized_score(210.0, &refs).unwrap(), 200.0);
    assert_eq!(normalized_score(-90.0, &refs).unwrap(), -100.0);
    let degenerate = ScoreRefs { random: 5.0, expert: 5.0 };
    assert!(normalized_score(5.0, &degenerate).is_err());
    assert!(ScoreRefs::new(110.0, 10.0).is_err());
}
