use micro_core::data::write_dataset;
use micro_core::envs::{generate_dataset, DatasetTier, EnvPerturbation, Pendulum, PendulumParams, PendulumState};
use micro_core::rng::rng_from_seed;
use proptest::prelude::*;
use sha2::{Digest, Sha256};

fn unforced_energies(theta: f64, omega: f64, friction: f64, gravity_mult: f64, steps: usize) -> Vec<f64> {
    let params = PendulumParams { friction, ..PendulumParams::default() }
        .perturbed(EnvPerturbation::new(gravity_mult, 1.0).unwrap());
    let mut env = Pendulum::new(params);
    env.reset_to(PendulumState { theta, omega });
    let mut out = vec![params.energy(env.state())];
    for _ in 0..steps {
        env.step(&[0.0]).unwrap();
        out.push(params.energy(env.state()));
    }
    out
}

proptest! {
    // Semi-implicit Euler conserves a shifted energy, so the mechanical
    // energy itself can rise slightly within a swing.
    #[test]
    fn unforced_energy_dissipates_up_to_integrator_ripple(
        theta in -3.1f64..3.1,
        omega in -8.0f64..8.0,
        friction in 0.05f64..1.0,
        gravity_mult in 0.5f64..5.0,
    ) {
        let e = unforced_energies(theta, omega, friction, gravity_mult, 400);
        let ripple = e.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        prop_assert!(ripple <= 2e-2 * e[0].max(1.0), "ripple {ripple}");
        prop_assert!(e[e.len() - 1] <= e[0] + 1e-9, "{} -> {}", e[0], e[e.len() - 1]);
    }
}

proptest! {
    #[test]
    #[ignore = "fails by design of the integrator, see the test above"]
    fn unforced_energy_never_increases(
        theta in -3.1f64..3.1,
        omega in -8.0f64..8.0,
        friction in 0.01f64..1.0,
        gravity_mult in 0.5f64..5.0,
    ) {
        let e = unforced_energies(theta, omega, friction, gravity_mult, 200);
        for w in e.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn nominal_perturbation_gives_the_same_trajectory() {
    let base = PendulumParams::default();
    let (mut a, mut b) = (Pendulum::new(base), Pendulum::new(base.perturbed(EnvPerturbation::NOMINAL)));
    let mut rng = rng_from_seed(3);
    a.reset(&mut rng);
    b.reset(&mut rng_from_seed(3));
    for t in 0..200 {
        let u = [((t as f64) * 0.1).sin() * 2.0];
        let (x, y) = (a.step(&u).unwrap(), b.step(&u).unwrap());
        assert_eq!(
            x.obs.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            y.obs.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

fn digest(tier: DatasetTier, seed: u64) -> String {
    let mut bytes = Vec::new();
    write_dataset(&mut bytes, &generate_dataset(tier, 2000, seed).unwrap()).unwrap();
    format!("{:x}", Sha256::digest(&bytes))
}

#[test]
fn dataset_bytes_are_stable_for_a_seed() {
    let first = digest(DatasetTier::Medium, 5);
    assert_eq!(first, digest(DatasetTier::Medium, 5));
    assert_ne!(first, digest(DatasetTier::Medium, 6));
    assert_eq!(first, "884a75c91d32d51dd4621d05882f497ea9389d431a6f079f2e67a8da03652171");
}
