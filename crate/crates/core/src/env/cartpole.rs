use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_action, ActionId, EnvError, EnvSpec, Environment, Observation, StepResult};

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const TOTAL_MASS: f64 = MASS_CART + MASS_POLE;
/// Half the pole length.
const LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = MASS_POLE * LENGTH;
const FORCE_MAG: f64 = 10.0;
const TAU: f64 = 0.02;
pub(crate) const X_THRESHOLD: f64 = 2.4;
pub(crate) const THETA_THRESHOLD: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;

/// Classic cart-pole balancing task with explicit Euler integration and the
/// 200-step horizon of the V0 variant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CartPole {
    state: [f64; 4],
    steps: usize,
    max_steps: usize,
    finished: bool,
    started: bool,
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new()
    }
}

impl CartPole {
    pub fn new() -> Self {
        Self::with_max_steps(200)
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

    /// Places the system in an arbitrary state, as if an episode had just
    /// been reset there.
    pub fn set_state(&mut self, state: [f64; 4]) {
        self.state = state;
        self.steps = 0;
        self.finished = false;
        self.started = true;
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    fn obs(&self) -> Observation {
        Observation::new(self.state.to_vec())
    }
}

impl Environment for CartPole {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            obs_dim: 4,
            action_count: 2,
            max_steps: self.max_steps,
            reward_range: (0.0, 1.0),
        }
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = std::array::from_fn(|_| rng.random_range(-0.05..0.05));
        self.set_state(state);
        self.obs()
    }

    fn step(&mut self, action: ActionId) -> Result<StepResult, EnvError> {
        check_action(action, 2)?;
        if self.finished || !self.started {
            return Err(EnvError::StepAfterDone);
        }
        let [x, x_dot, theta, theta_dot] = self.state;
        let force = if action.0 == 1 { FORCE_MAG } else { -FORCE_MAG };
        let (sin, cos) = theta.sin_cos();
        let temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin) / TOTAL_MASS;
        let theta_acc = (GRAVITY * sin - cos * temp)
            / (LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / TOTAL_MASS));
        let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;

        self.state = [
            x + TAU * x_dot,
            x_dot + TAU * x_acc,
            theta + TAU * theta_dot,
            theta_dot + TAU * theta_acc,
        ];
        self.steps += 1;

        let done = self.state[0].abs() > X_THRESHOLD || self.state[2].abs() > THETA_THRESHOLD;
        let truncated = !done && self.steps >= self.max_steps;
        self.finished = done || truncated;
        Ok(StepResult {
            next_obs: self.obs(),
            reward: 1.0,
            done,
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_is_within_init_band_and_repeatable() {
        let mut env = CartPole::new();
        for seed in 0..50 {
            let a = env.reset(seed);
            assert!(a.iter().all(|v| v.abs() <= 0.05));
            let b = env.reset(seed);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn one_euler_step_from_rest_pushing_right() {
        let mut env = CartPole::new();
        env.set_state([0.0; 4]);
        let r = env.step(ActionId(1)).unwrap();
        let expected = [0.0, 0.19512, 0.0, -0.29268];
        for (got, want) in r.next_obs.iter().zip(expected) {
            assert!((got - want).abs() < 5e-6, "{got} vs {want}");
        }
        assert_eq!(r.reward, 1.0);
        assert!(!r.done && !r.truncated);
    }

    #[test]
    fn terminates_past_angle_threshold_and_rejects_further_steps() {
        let mut env = CartPole::new();
        env.set_state([0.0, 0.0, THETA_THRESHOLD - 1e-4, 2.0]);
        let r = env.step(ActionId(0)).unwrap();
        assert!(r.done);
        assert_eq!(env.step(ActionId(0)), Err(EnvError::StepAfterDone));
    }

    #[test]
    fn truncates_at_horizon() {
        let mut env = CartPole::with_max_steps(3);
        env.reset(1);
        let mut last = None;
        for i in 0..3 {
            let r = env.step(ActionId(i % 2)).unwrap();
            last = Some(r);
        }
        let r = last.unwrap();
        assert!(r.truncated && !r.done);
    }

    #[test]
    fn invalid_action_is_rejected() {
        let mut env = CartPole::new();
        env.reset(0);
        assert_eq!(
            env.step(ActionId(2)),
            Err(EnvError::InvalidAction { index: 2, count: 2 })
        );
    }
}
