use std::f64::consts::PI;

use nalgebra::DVector;
use rand::Rng;

use super::{Environment, MdpSpec};
use crate::rng::StreamRng;

/// Torque-limited pendulum swing-up observed as `(cos θ, sin θ, θ̇)`.
///
/// `θ = 0` is upright. Episodes start hanging down (`θ ∈ π ± 0.1`,
/// `θ̇ ∈ ±0.1`). Because noise is added to the observation coordinates the
/// state may leave the unit circle; the angle is always read back as
/// `atan2(sin, cos)`. Mean reward is `−(θ² + 0.1 θ̇² + 0.001 u²)` with `θ`
/// wrapped to `[−π, π]` and `θ̇` clipped to the speed limit.
#[derive(Debug, Clone)]
pub struct PendulumSwingUp {
    spec: MdpSpec,
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub dt: f64,
    pub max_speed: f64,
    pub start_angle_range: f64,
    pub start_speed_range: f64,
}

impl Default for PendulumSwingUp {
    fn default() -> Self {
        Self::with_noise(0.1)
    }
}

impl PendulumSwingUp {
    pub fn with_noise(noise_std: f64) -> Self {
        let max_speed = 8.0;
        let max_torque: f64 = 2.0;
        Self {
            spec: MdpSpec {
                state_dim: 3,
                action_dim: 1,
                horizon: 200,
                sigma_r: noise_std,
                sigma_f: noise_std,
                r_max: PI * PI + 0.1 * max_speed * max_speed + 0.001 * max_torque * max_torque,
                action_low: vec![-max_torque],
                action_high: vec![max_torque],
            },
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            dt: 0.05,
            max_speed,
            start_angle_range: 0.1,
            start_speed_range: 0.1,
        }
    }

    pub fn set_horizon(&mut self, horizon: usize) {
        self.spec.horizon = horizon;
    }

    pub fn angle(state: &DVector<f64>) -> f64 {
        state[1].atan2(state[0])
    }
}

impl Environment for PendulumSwingUp {
    fn spec(&self) -> &MdpSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut StreamRng) -> DVector<f64> {
        let theta = PI + rng.random_range(-self.start_angle_range..self.start_angle_range);
        let theta_dot = rng.random_range(-self.start_speed_range..self.start_speed_range);
        DVector::from_vec(vec![theta.cos(), theta.sin(), theta_dot])
    }

    fn oracle_mean_dynamics(&self, state: &DVector<f64>, action: &DVector<f64>) -> (DVector<f64>, f64) {
        let theta = Self::angle(state);
        let theta_dot = state[2];
        let u = action[0];
        let speed = theta_dot.clamp(-self.max_speed, self.max_speed);
        let reward = -(theta * theta + 0.1 * speed * speed + 0.001 * u * u);

        let acc = 3.0 * self.gravity / (2.0 * self.length) * theta.sin()
            + 3.0 / (self.mass * self.length * self.length) * u;
        let new_speed = (theta_dot + acc * self.dt).clamp(-self.max_speed, self.max_speed);
        let new_theta = theta + new_speed * self.dt;
        (
            DVector::from_vec(vec![new_theta.cos(), new_theta.sin(), new_speed]),
            reward,
        )
    }
}
