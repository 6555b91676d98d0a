use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_action, ActionId, EnvError, EnvSpec, Environment, Observation, StepResult};

const DT: f64 = 0.2;
const LINK_LENGTH_1: f64 = 1.0;
const LINK_MASS_1: f64 = 1.0;
const LINK_MASS_2: f64 = 1.0;
const LINK_COM_1: f64 = 0.5;
const LINK_COM_2: f64 = 0.5;
const LINK_MOI: f64 = 1.0;
const GRAVITY: f64 = 9.8;
const MAX_VEL_1: f64 = 4.0 * PI;
const MAX_VEL_2: f64 = 9.0 * PI;
const TORQUES: [f64; 3] = [-1.0, 0.0, 1.0];

/// Two-link underactuated pendulum; torque is applied at the elbow only.
/// State is `[theta1, theta2, dtheta1, dtheta2]`, integrated with one RK4
/// step of 0.2 s per action.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Acrobot {
    state: [f64; 4],
    steps: usize,
    max_steps: usize,
    finished: bool,
    started: bool,
}

impl Default for Acrobot {
    fn default() -> Self {
        Self::new()
    }
}

impl Acrobot {
    pub fn new() -> Self {
        Self::with_max_steps(500)
    }

    pub fn with_max_steps(max_steps: usize) -> Self {
        Self {
            state: [0.0; 4],
            steps: 0,
            max_steps: max_steps.max(1),
            finished: false,
            started: false,
        }
    }

    pub fn set_state(&mut self, state: [f64; 4]) {
        self.state = state;
        self.steps = 0;
        self.finished = false;
        self.started = true;
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    /// Total mechanical energy (kinetic plus gravitational potential).
    pub fn energy(&self) -> f64 {
        let [t1, t2, w1, w2] = self.state;
        let (m1, m2, l1, lc1, lc2) = (LINK_MASS_1, LINK_MASS_2, LINK_LENGTH_1, LINK_COM_1, LINK_COM_2);
        let d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * t2.cos()) + 2.0 * LINK_MOI;
        let d2 = m2 * (lc2 * lc2 + l1 * lc2 * t2.cos()) + LINK_MOI;
        let d3 = m2 * lc2 * lc2 + LINK_MOI;
        let kinetic = 0.5 * (d1 * w1 * w1 + 2.0 * d2 * w1 * w2 + d3 * w2 * w2);
        let potential = -(m1 * lc1 + m2 * l1) * GRAVITY * t1.cos() - m2 * lc2 * GRAVITY * (t1 + t2).cos();
        kinetic + potential
    }

    fn obs(&self) -> Observation {
        let [t1, t2, w1, w2] = self.state;
        Observation::new(vec![t1.cos(), t1.sin(), t2.cos(), t2.sin(), w1, w2])
    }

    fn terminal(&self) -> bool {
        let [t1, t2, ..] = self.state;
        -t1.cos() - (t2 + t1).cos() > 1.0
    }
}

fn derivatives(s: [f64; 4], torque: f64) -> [f64; 4] {
    let (m1, m2, l1, lc1, lc2) = (LINK_MASS_1, LINK_MASS_2, LINK_LENGTH_1, LINK_COM_1, LINK_COM_2);
    let (i1, i2, g) = (LINK_MOI, LINK_MOI, GRAVITY);
    let [theta1, theta2, dtheta1, dtheta2] = s;
    let d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * theta2.cos()) + i1 + i2;
    let d2 = m2 * (lc2 * lc2 + l1 * lc2 * theta2.cos()) + i2;
    let phi2 = m2 * lc2 * g * (theta1 + theta2 - PI / 2.0).cos();
    let phi1 = -m2 * l1 * lc2 * dtheta2 * dtheta2 * theta2.sin()
        - 2.0 * m2 * l1 * lc2 * dtheta2 * dtheta1 * theta2.sin()
        + (m1 * lc1 + m2 * l1) * g * (theta1 - PI / 2.0).cos()
        + phi2;
    let ddtheta2 = (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1 * dtheta1 * theta2.sin() - phi2)
        / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
    let ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
    [dtheta1, dtheta2, ddtheta1, ddtheta2]
}

fn rk4(s: [f64; 4], torque: f64, dt: f64) -> [f64; 4] {
    let add = |a: [f64; 4], b: [f64; 4], h: f64| std::array::from_fn(|i| a[i] + h * b[i]);
    let k1 = derivatives(s, torque);
    let k2 = derivatives(add(s, k1, dt / 2.0), torque);
    let k3 = derivatives(add(s, k2, dt / 2.0), torque);
    let k4 = derivatives(add(s, k3, dt), torque);
    std::array::from_fn(|i| s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

fn wrap(x: f64) -> f64 {
    let span = 2.0 * PI;
    let mut y = x;
    while y > PI {
        y -= span;
    }
    while y < -PI {
        y += span;
    }
    y
}

impl Environment for Acrobot {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            obs_dim: 6,
            action_count: 3,
            max_steps: self.max_steps,
            reward_range: (-1.0, 0.0),
        }
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = std::array::from_fn(|_| rng.random_range(-0.1..0.1));
        self.set_state(state);
        self.obs()
    }

    fn step(&mut self, action: ActionId) -> Result<StepResult, EnvError> {
        check_action(action, 3)?;
        if self.finished || !self.started {
            return Err(EnvError::StepAfterDone);
        }
        let ns = rk4(self.state, TORQUES[action.0], DT);
        self.state = [
            wrap(ns[0]),
            wrap(ns[1]),
            ns[2].clamp(-MAX_VEL_1, MAX_VEL_1),
            ns[3].clamp(-MAX_VEL_2, MAX_VEL_2),
        ];
        self.steps += 1;
        let done = self.terminal();
        let truncated = !done && self.steps >= self.max_steps;
        self.finished = done || truncated;
        Ok(StepResult {
            next_obs: self.obs(),
            reward: if done { 0.0 } else { -1.0 },
            done,
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_bounds_and_determinism() {
        let mut env = Acrobot::new();
        let a = env.reset(3);
        assert_eq!(a.dim(), 6);
        assert!(env.state().iter().all(|v| v.abs() <= 0.1));
        assert_eq!(a, env.reset(3));
    }

    #[test]
    fn zero_torque_conserves_energy() {
        for start in [[0.05, -0.03, 0.02, 0.01], [0.1, 0.1, 0.1, 0.1], [0.5, 0.5, 0.5, -0.5]] {
            let mut env = Acrobot::new();
            env.set_state(start);
            let e0 = env.energy();
            for _ in 0..100 {
                let r = env.step(ActionId(1)).unwrap();
                assert!(!r.done);
            }
            let drift = (env.energy() - e0).abs() / e0.abs();
            assert!(drift < 0.01, "energy drift {drift} from {start:?}");
        }
    }

    #[test]
    fn rewards_are_minus_one_until_terminal() {
        let mut env = Acrobot::new();
        env.reset(0);
        let mut steps = 0;
        loop {
            let r = env.step(ActionId(steps % 3)).unwrap();
            steps += 1;
            assert!(r.next_obs.is_finite());
            assert!(r.next_obs[4].abs() <= MAX_VEL_1 && r.next_obs[5].abs() <= MAX_VEL_2);
            if r.done {
                assert_eq!(r.reward, 0.0);
                break;
            }
            assert_eq!(r.reward, -1.0);
            if r.truncated {
                assert_eq!(steps, 500);
                break;
            }
        }
    }

    #[test]
    fn upright_configuration_is_terminal() {
        let mut env = Acrobot::new();
        env.set_state([PI - 0.01, 0.0, 0.0, 0.0]);
        assert!(env.step(ActionId(1)).unwrap().done);
    }
}
