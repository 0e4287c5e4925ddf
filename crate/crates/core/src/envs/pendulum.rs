use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const OBS_DIM: usize = 3;
pub const ACT_DIM: usize = 1;
pub const ENV_ID: &str = "pendulum";

/// Physical parameters of the damped pendulum.
///
/// The angle is measured from the hanging rest position, so the swing-up
/// target is `θ = π`. Each control step integrates `substeps` semi-implicit
/// Euler updates of size `dt / substeps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    /// m/s²
    pub gravity: f64,
    /// Viscous friction coefficient, 1/s.
    pub friction: f64,
    pub mass: f64,
    pub length: f64,
    pub max_torque: f64,
    /// Control period in seconds.
    pub dt: f64,
    pub substeps: u32,
    pub horizon: usize,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            gravity: 10.0,
            friction: 0.1,
            mass: 1.0,
            length: 1.0,
            max_torque: 2.0,
            dt: 0.05,
            substeps: 10,
            horizon: 200,
        }
    }
}

/// Multiplicative change of gravity and friction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvPerturbation {
    pub gravity_mult: f64,
    pub friction_mult: f64,
}

impl EnvPerturbation {
    pub const NOMINAL: EnvPerturbation = EnvPerturbation { gravity_mult: 1.0, friction_mult: 1.0 };

    pub fn new(gravity_mult: f64, friction_mult: f64) -> Result<Self> {
        if !(0.5..=5.0).contains(&gravity_mult) {
            return Err(Error::invalid(format!("gravity multiplier {gravity_mult} outside [0.5, 5]")));
        }
        if !(0.5..=1.5).contains(&friction_mult) {
            return Err(Error::invalid(format!("friction multiplier {friction_mult} outside [0.5, 1.5]")));
        }
        Ok(Self { gravity_mult, friction_mult })
    }

    pub fn is_nominal(&self) -> bool {
        self.gravity_mult == 1.0 && self.friction_mult == 1.0
    }
}

impl PendulumParams {
    pub fn perturbed(&self, p: EnvPerturbation) -> Self {
        Self { gravity: self.gravity * p.gravity_mult, friction: self.friction * p.friction_mult, ..*self }
    }

    /// Angular acceleration for angle `theta`, rate `omega` and torque `u`.
    pub fn acceleration(&self, theta: f64, omega: f64, u: f64) -> f64 {
        -(self.gravity / self.length) * theta.sin() - self.friction * omega
            + u / (self.mass * self.length * self.length)
    }

    /// Advances one control step with torque `u` (already clipped).
    pub fn integrate(&self, state: PendulumState, u: f64) -> PendulumState {
        let h = self.dt / f64::from(self.substeps);
        let (mut theta, mut omega) = (state.theta, state.omega);
        for _ in 0..self.substeps {
            omega += h * self.acceleration(theta, omega, u);
            theta += h * omega;
        }
        PendulumState { theta, omega }
    }

    /// Kinetic plus potential energy, zero at the hanging rest position.
    pub fn energy(&self, state: PendulumState) -> f64 {
        let ml2 = self.mass * self.length * self.length;
        0.5 * ml2 * state.omega * state.omega + self.mass * self.gravity * self.length * (1.0 - state.theta.cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumState {
    pub theta: f64,
    pub omega: f64,
}

impl PendulumState {
    pub fn observe(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.omega]
    }
}

/// Signed distance from the upright position, in `(-π, π]`.
pub fn angle_error(theta: f64) -> f64 {
    wrap_angle(theta - PI)
}

pub fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}

/// The known reward `r(s, a)` evaluated on an observation `(cos θ, sin θ, ω)`.
pub fn reward(obs: &[f64], action: &[f64]) -> f64 {
    let theta = obs[1].atan2(obs[0]);
    let err = angle_error(theta);
    let u = action[0];
    -(err * err + 0.1 * obs[2] * obs[2] + 0.001 * u * u)
}

/// Pendulum episodes never terminate; they are truncated at the horizon.
pub fn is_terminal(_obs: &[f64]) -> bool {
    false
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

#[derive(Debug, Clone)]
pub struct Pendulum {
    pub params: PendulumParams,
    state: PendulumState,
    t: usize,
}

impl Pendulum {
    pub fn new(params: PendulumParams) -> Self {
        Self { params, state: PendulumState { theta: 0.0, omega: 0.0 }, t: 0 }
    }

    /// Random start: `θ ~ U(-π, π)`, `ω ~ U(-1, 1)`.
    pub fn reset(&mut self, rng: &mut impl Rng) -> Vec<f64> {
        let theta = rng.random_range(-PI..PI);
        let omega = rng.random_range(-1.0..1.0);
        self.reset_to(PendulumState { theta, omega })
    }

    pub fn reset_to(&mut self, state: PendulumState) -> Vec<f64> {
        self.state = state;
        self.t = 0;
        self.state.observe()
    }

    pub fn state(&self) -> PendulumState {
        self.state
    }

    pub fn observe(&self) -> Vec<f64> {
        self.state.observe()
    }

    pub fn elapsed(&self) -> usize {
        self.t
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let raw = *action.first().ok_or_else(|| Error::invalid("empty action"))?;
        if !raw.is_finite() {
            return Err(Error::NonFinite("pendulum action".into()));
        }
        let u = raw.clamp(-self.params.max_torque, self.params.max_torque);
        let r = reward(&self.state.observe(), &[u]);
        self.state = self.params.integrate(self.state, u);
        self.t += 1;
        Ok(StepOutcome {
            obs: self.state.observe(),
            reward: r,
            terminal: false,
            truncated: self.t >= self.params.horizon,
        })
    }
}
