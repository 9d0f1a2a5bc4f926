use rand::Rng;

use super::Dynamics;
use crate::rng::SimRng;

const MIN_POSITION: f64 = -1.2;
const MAX_POSITION: f64 = 0.6;
const MAX_SPEED: f64 = 0.07;
const GOAL_POSITION: f64 = 0.5;
const GOAL_VELOCITY: f64 = 0.0;
const FORCE: f64 = 0.001;
const GRAVITY: f64 = 0.0025;

/// Under-powered car on a sinusoidal hill. State `(position, velocity)`;
/// actions 0/1/2 = push left / none / right; −1 reward per step.
#[derive(Debug, Default, Clone)]
pub struct MountainCar {
    state: [f64; 2],
}

impl MountainCar {
    pub fn with_state(state: [f64; 2]) -> Self {
        Self { state }
    }
}

impl Dynamics for MountainCar {
    fn reset(&mut self, rng: &mut SimRng) -> Vec<f64> {
        self.state = [rng.random_range(-0.6..-0.4), 0.0];
        self.state.to_vec()
    }

    fn step(&mut self, action: usize) -> (Vec<f64>, f64, bool) {
        let [mut position, mut velocity] = self.state;
        velocity += (action as f64 - 1.0) * FORCE + (3.0 * position).cos() * (-GRAVITY);
        velocity = velocity.clamp(-MAX_SPEED, MAX_SPEED);
        position += velocity;
        position = position.clamp(MIN_POSITION, MAX_POSITION);
        if position == MIN_POSITION && velocity < 0.0 {
            velocity = 0.0;
        }
        self.state = [position, velocity];
        let terminated = position >= GOAL_POSITION && velocity >= GOAL_VELOCITY;
        (self.state.to_vec(), -1.0, terminated)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn reset_range() {
        let mut rng = rng_from_seed(8);
        let mut mc = MountainCar::default();
        for _ in 0..1000 {
            let s = mc.reset(&mut rng);
            assert!((-0.6..=-0.4).contains(&s[0]));
            assert_eq!(s[1], 0.0);
        }
    }

    #[test]
    fn one_step_closed_form() {
        let mut mc = MountainCar::with_state([-0.5, 0.0]);
        let (s, r, done) = mc.step(1);
        let v = 0.0025 * (3.0f64 * -0.5).cos() * -1.0;
        assert_eq!(s[1], v);
        assert_eq!(s[0], -0.5 + v);
        assert_eq!(r, -1.0);
        assert!(!done);
    }

    #[test]
    fn left_wall_stops_car() {
        let mut mc = MountainCar::with_state([-1.19, -0.05]);
        let (s, _, _) = mc.step(0);
        assert_eq!(s, vec![-1.2, 0.0]);
    }

    #[test]
    fn reaching_goal_terminates() {
        let mut mc = MountainCar::with_state([0.49, 0.03]);
        let (_, _, done) = mc.step(2);
        assert!(done);
    }
}
