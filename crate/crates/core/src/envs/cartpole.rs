use rand::Rng;

use super::Dynamics;
use crate::rng::SimRng;

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const TOTAL_MASS: f64 = MASS_CART + MASS_POLE;
const HALF_LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = MASS_POLE * HALF_LENGTH;
const FORCE_MAG: f64 = 10.0;
const TAU: f64 = 0.02;

pub const X_THRESHOLD: f64 = 2.4;
pub const THETA_THRESHOLD: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;

/// Cart-pole balancing, Euler-integrated. State `(x, ẋ, θ, θ̇)`; action 0
/// pushes left, 1 pushes right; +1 reward per step including the last.
#[derive(Debug, Default, Clone)]
pub struct CartPole {
    state: [f64; 4],
}

impl CartPole {
    pub fn with_state(state: [f64; 4]) -> Self {
        Self { state }
    }

    pub fn is_failed(state: &[f64]) -> bool {
        state[0] < -X_THRESHOLD
            || state[0] > X_THRESHOLD
            || state[2] < -THETA_THRESHOLD
            || state[2] > THETA_THRESHOLD
    }
}

impl Dynamics for CartPole {
    fn reset(&mut self, rng: &mut SimRng) -> Vec<f64> {
        for v in self.state.iter_mut() {
            *v = rng.random_range(-0.05..0.05);
        }
        self.state.to_vec()
    }

    fn step(&mut self, action: usize) -> (Vec<f64>, f64, bool) {
        let [x, x_dot, theta, theta_dot] = self.state;
        let force = if action == 1 { FORCE_MAG } else { -FORCE_MAG };
        let (sin_t, cos_t) = theta.sin_cos();
        let temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin_t) / TOTAL_MASS;
        let theta_acc = (GRAVITY * sin_t - cos_t * temp)
            / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos_t * cos_t / TOTAL_MASS));
        let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos_t / TOTAL_MASS;
        self.state = [
            x + TAU * x_dot,
            x_dot + TAU * x_acc,
            theta + TAU * theta_dot,
            theta_dot + TAU * theta_acc,
        ];
        let terminated = Self::is_failed(&self.state);
        (self.state.to_vec(), 1.0, terminated)
    }
}
