use std::f64::consts::PI;

use rand::Rng;

use super::Dynamics;
use crate::rng::SimRng;

const DT: f64 = 0.2;
const LINK_LENGTH_1: f64 = 1.0;
const LINK_MASS_1: f64 = 1.0;
const LINK_MASS_2: f64 = 1.0;
const LINK_COM_POS_1: f64 = 0.5;
const LINK_COM_POS_2: f64 = 0.5;
const LINK_MOI: f64 = 1.0;
const MAX_VEL_1: f64 = 4.0 * PI;
const MAX_VEL_2: f64 = 9.0 * PI;
const AVAIL_TORQUE: [f64; 3] = [-1.0, 0.0, 1.0];
const G: f64 = 9.8;

/// Two-link underactuated swing-up ("book" dynamics, RK4 over one 0.2 s
/// step). Observation `(cos θ₁, sin θ₁, cos θ₂, sin θ₂, θ̇₁, θ̇₂)`; actions
/// apply torque −1/0/+1; reward −1 per step and 0 on reaching the goal.
#[derive(Debug, Default, Clone)]
pub struct Acrobot {
    state: [f64; 4],
}

impl Acrobot {
    pub fn with_state(state: [f64; 4]) -> Self {
        Self { state }
    }

    pub fn raw_state(&self) -> [f64; 4] {
        self.state
    }

    fn observe(&self) -> Vec<f64> {
        let [t1, t2, d1, d2] = self.state;
        vec![t1.cos(), t1.sin(), t2.cos(), t2.sin(), d1, d2]
    }

    fn is_terminal(&self) -> bool {
        let [t1, t2, _, _] = self.state;
        -t1.cos() - (t2 + t1).cos() > 1.0
    }
}

fn derivatives(s: &[f64; 5]) -> [f64; 5] {
    let (m1, m2, l1) = (LINK_MASS_1, LINK_MASS_2, LINK_LENGTH_1);
    let (lc1, lc2) = (LINK_COM_POS_1, LINK_COM_POS_2);
    let (i1, i2) = (LINK_MOI, LINK_MOI);
    let [theta1, theta2, dtheta1, dtheta2, a] = *s;
    let d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * theta2.cos()) + i1 + i2;
    let d2 = m2 * (lc2 * lc2 + l1 * lc2 * theta2.cos()) + i2;
    let phi2 = m2 * lc2 * G * (theta1 + theta2 - PI / 2.0).cos();
    let phi1 = -m2 * l1 * lc2 * dtheta2 * dtheta2 * theta2.sin()
        - 2.0 * m2 * l1 * lc2 * dtheta2 * dtheta1 * theta2.sin()
        + (m1 * lc1 + m2 * l1) * G * (theta1 - PI / 2.0).cos()
        + phi2;
    let ddtheta2 = (a + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1 * dtheta1 * theta2.sin() - phi2)
        / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
    let ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
    [dtheta1, dtheta2, ddtheta1, ddtheta2, 0.0]
}

fn rk4_step(y0: [f64; 5], dt: f64) -> [f64; 5] {
    let shift = |y: &[f64; 5], k: &[f64; 5], h: f64| {
        let mut out = *y;
        for (o, ki) in out.iter_mut().zip(k) {
            *o += h * ki;
        }
        out
    };
    let k1 = derivatives(&y0);
    let k2 = derivatives(&shift(&y0, &k1, dt / 2.0));
    let k3 = derivatives(&shift(&y0, &k2, dt / 2.0));
    let k4 = derivatives(&shift(&y0, &k3, dt));
    let mut y = y0;
    for i in 0..5 {
        y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    y
}

fn wrap(x: f64, lo: f64, hi: f64) -> f64 {
    let diff = hi - lo;
    let mut x = x;
    while x > hi {
        x -= diff;
    }
    while x < lo {
        x += diff;
    }
    x
}

impl Dynamics for Acrobot {
    fn reset(&mut self, rng: &mut SimRng) -> Vec<f64> {
        for v in self.state.iter_mut() {
            *v = rng.random_range(-0.1..0.1);
        }
        self.observe()
    }

    fn step(&mut self, action: usize) -> (Vec<f64>, f64, bool) {
        let torque = AVAIL_TORQUE[action];
        let [t1, t2, d1, d2] = self.state;
        let ns = rk4_step([t1, t2, d1, d2, torque], DT);
        self.state = [
            wrap(ns[0], -PI, PI),
            wrap(ns[1], -PI, PI),
            ns[2].clamp(-MAX_VEL_1, MAX_VEL_1),
            ns[3].clamp(-MAX_VEL_2, MAX_VEL_2),
        ];
        let terminal = self.is_terminal();
        let reward = if terminal { 0.0 } else { -1.0 };
        (self.observe(), reward, terminal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn reset_range_and_observation_shape() {
        let mut rng = rng_from_seed(2);
        let mut ac = Acrobot::default();
        for _ in 0..200 {
            let obs = ac.reset(&mut rng);
            assert_eq!(obs.len(), 6);
            assert!(ac.raw_state().iter().all(|v| v.abs() <= 0.1));
            assert!((obs[0] * obs[0] + obs[1] * obs[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hanging_at_rest_is_equilibrium() {
        let mut ac = Acrobot::with_state([0.0; 4]);
        let (obs, r, done) = ac.step(1);
        assert!(ac.raw_state().iter().all(|v| v.abs() < 1e-12));
        assert_eq!(obs[0], 1.0);
        assert_eq!(r, -1.0);
        assert!(!done);
    }

    #[test]
    fn upright_is_terminal() {
        let mut ac = Acrobot::with_state([PI - 0.05, 0.0, 0.0, 0.0]);
        let (_, r, done) = ac.step(1);
        assert!(done);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn wrap_into_range() {
        assert!((wrap(3.0 * PI, -PI, PI) - PI).abs() < 1e-12);
        assert!((wrap(-1.5 * PI, -PI, PI) - 0.5 * PI).abs() < 1e-12);
        assert_eq!(wrap(0.3, -PI, PI), 0.3);
    }

    #[test]
    fn rk4_conserves_energy_without_torque() {
        // total mechanical energy should drift only slightly over 50 free steps
        let energy = |s: [f64; 4]| {
            let [t1, t2, d1, d2] = s;
            let (m1, m2, l1, lc1, lc2, i1, i2) = (1.0, 1.0, 1.0, 0.5, 0.5, 1.0, 1.0);
            let kinetic = 0.5 * (m1 * lc1 * lc1 + m2 * l1 * l1 + i1 + i2 + m2 * lc2 * lc2 + 2.0 * m2 * l1 * lc2 * t2.cos()) * d1 * d1
                + (m2 * lc2 * lc2 + i2 + m2 * l1 * lc2 * t2.cos()) * d1 * d2
                + 0.5 * (m2 * lc2 * lc2 + i2) * d2 * d2;
            let potential = -(m1 * lc1 + m2 * l1) * G * t1.cos() - m2 * lc2 * G * (t1 + t2).cos();
            kinetic + potential
        };
        let mut ac = Acrobot::with_state([0.4, -0.2, 0.0, 0.0]);
        let e0 = energy(ac.raw_state());
        for _ in 0..50 {
            ac.step(1);
        }
        let e1 = energy(ac.raw_state());
        assert!((e1 - e0).abs() < 0.05 * e0.abs(), "{e0} -> {e1}");
    }
}
