use std::f64::consts::PI;

use nalgebra::DVector;
use rand::Rng;

use super::{Environment, MdpSpec};
use crate::rng::StreamRng;

/// Cart-pole with a continuous force and additive Gaussian state noise.
///
/// State `(x, ẋ, θ, θ̇)` with `θ = 0` upright and the mean next angle wrapped
/// into `(−π, π]`. The dynamics are the classic Barto–Sutton–Anderson
/// equations integrated with explicit Euler. The pole
/// is never declared fallen; instead the mean reward is the smooth bonus
/// `½(1 + cos θ) · exp(−x² / (2 x_s²))`, which equals 1 at the upright,
/// centred state and is bounded in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct StochasticCartpole {
    spec: MdpSpec,
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half the pole length.
    pub half_length: f64,
    pub dt: f64,
    pub position_scale: f64,
    pub init_range: f64,
}

impl Default for StochasticCartpole {
    fn default() -> Self {
        Self::with_noise(0.1)
    }
}

impl StochasticCartpole {
    pub fn with_noise(noise_std: f64) -> Self {
        Self {
            spec: MdpSpec {
                state_dim: 4,
                action_dim: 1,
                horizon: 200,
                sigma_r: noise_std,
                sigma_f: noise_std,
                r_max: 1.0,
                action_low: vec![-10.0],
                action_high: vec![10.0],
            },
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            dt: 0.05,
            position_scale: 3.0,
            init_range: 0.05,
        }
    }

    pub fn set_horizon(&mut self, horizon: usize) {
        self.spec.horizon = horizon;
    }

    pub fn mean_reward(&self, state: &DVector<f64>) -> f64 {
        let x = state[0];
        let theta = state[2];
        0.5 * (1.0 + theta.cos()) * (-x * x / (2.0 * self.position_scale * self.position_scale)).exp()
    }
}

/// Maps an angle into `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

impl Environment for StochasticCartpole {
    fn spec(&self) -> &MdpSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut StreamRng) -> DVector<f64> {
        DVector::from_fn(4, |_, _| rng.random_range(-self.init_range..self.init_range))
    }

    fn oracle_mean_dynamics(&self, state: &DVector<f64>, action: &DVector<f64>) -> (DVector<f64>, f64) {
        let (x, x_dot, theta, theta_dot) = (state[0], state[1], state[2], state[3]);
        let force = action[0];
        let total_mass = self.cart_mass + self.pole_mass;
        let pole_moment = self.pole_mass * self.half_length;
        let (sin, cos) = theta.sin_cos();

        let temp = (force + pole_moment * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (self.gravity * sin - cos * temp)
            / (self.half_length * (4.0 / 3.0 - self.pole_mass * cos * cos / total_mass));
        let x_acc = temp - pole_moment * theta_acc * cos / total_mass;

        let next = DVector::from_vec(vec![
            x + self.dt * x_dot,
            x_dot + self.dt * x_acc,
            wrap_angle(theta + self.dt * theta_dot),
            theta_dot + self.dt * theta_acc,
        ]);
        (next, self.mean_reward(state))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let env = StochasticCartpole::default();
        let (next, r) = env.oracle_mean_dynamics(&DVector::zeros(4), &DVector::zeros(1));
        assert_eq!(next, DVector::zeros(4));
        assert_eq!(r, 1.0);
    }

    #[test]
    fn upright_pole_with_moving_cart_only_translates() {
        let env = StochasticCartpole::default();
        let s = DVector::from_vec(vec![0.3, 1.2, 0.0, 0.0]);
        let (next, _) = env.oracle_mean_dynamics(&s, &DVector::zeros(1));
        assert_eq!(next, DVector::from_vec(vec![0.3 + 0.05 * 1.2, 1.2, 0.0, 0.0]));
    }

    #[test]
    fn angle_wraps_through_the_bottom() {
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI - 0.1) - (PI - 0.1)).abs() < 1e-12);
        let env = StochasticCartpole::default();
        let s = DVector::from_vec(vec![0.0, 0.0, PI - 0.01, 1.0]);
        let (next, _) = env.oracle_mean_dynamics(&s, &DVector::zeros(1));
        assert!(next[2] < 0.0 && next[2] > -PI);
    }

    #[test]
    fn pushing_right_tips_pole_left() {
        let env = StochasticCartpole::default();
        let (next, _) = env.oracle_mean_dynamics(&DVector::zeros(4), &DVector::from_element(1, 10.0));
        assert!(next[1] > 0.0);
        assert!(next[3] < 0.0);
    }
}
