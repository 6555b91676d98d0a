use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_action, ActionId, EnvError, EnvSpec, Environment, Observation, StepResult};

/// Goal-conditioned bit flipping. The observation is the current bits
/// followed by the goal bits; action `i` flips bit `i`. Each step costs -1
/// until the bits match the goal, which yields 0 and ends the episode. The
/// horizon equals the number of bits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BitFlip {
    bits: Vec<bool>,
    goal: Vec<bool>,
    steps: usize,
    finished: bool,
    started: bool,
    solved: bool,
}

impl BitFlip {
    pub fn new(n_bits: usize) -> Result<Self, EnvError> {
        if n_bits < 2 {
            return Err(EnvError::InvalidParam(format!(
                "bitflip needs at least 2 bits, got {n_bits}"
            )));
        }
        Ok(Self {
            bits: vec![false; n_bits],
            goal: vec![false; n_bits],
            steps: 0,
            finished: false,
            started: false,
            solved: false,
        })
    }

    pub fn n_bits(&self) -> usize {
        self.bits.len()
    }

    /// Starts an episode from explicit bits. `bits` may equal `goal`.
    pub fn set_state(&mut self, bits: Vec<bool>, goal: Vec<bool>) {
        assert_eq!(bits.len(), self.bits.len());
        assert_eq!(goal.len(), self.bits.len());
        self.bits = bits;
        self.goal = goal;
        self.steps = 0;
        self.finished = false;
        self.started = true;
        self.solved = false;
    }

    pub fn hamming_distance(&self) -> usize {
        self.bits.iter().zip(&self.goal).filter(|(a, b)| a != b).count()
    }

    /// True when the last episode ended on the goal.
    pub fn solved(&self) -> bool {
        self.solved
    }

    fn obs(&self) -> Observation {
        let as_f = |b: &bool| if *b { 1.0 } else { 0.0 };
        Observation::new(self.bits.iter().chain(&self.goal).map(as_f).collect())
    }
}

impl Environment for BitFlip {
    fn spec(&self) -> EnvSpec {
        let n = self.bits.len();
        EnvSpec {
            obs_dim: 2 * n,
            action_count: n,
            max_steps: n,
            reward_range: (-1.0, 0.0),
        }
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.bits.len();
        let bits: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let mut goal: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        while goal == bits {
            goal = (0..n).map(|_| rng.random()).collect();
        }
        self.set_state(bits, goal);
        self.obs()
    }

    fn step(&mut self, action: ActionId) -> Result<StepResult, EnvError> {
        check_action(action, self.bits.len())?;
        if self.finished || !self.started {
            return Err(EnvError::StepAfterDone);
        }
        self.steps += 1;
        if self.bits != self.goal {
            self.bits[action.0] = !self.bits[action.0];
        }
        let done = self.bits == self.goal;
        let truncated = !done && self.steps >= self.bits.len();
        self.finished = done || truncated;
        self.solved = done;
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
    fn reset_gives_binary_obs_with_state_not_goal() {
        let mut env = BitFlip::new(8).unwrap();
        for seed in 0..100 {
            let obs = env.reset(seed);
            assert_eq!(obs.dim(), 16);
            assert!(obs.iter().all(|&v| v == 0.0 || v == 1.0));
            assert_ne!(obs[..8], obs[8..]);
        }
    }

    #[test]
    fn already_solved_state_terminates_on_any_action() {
        for a in 0..8 {
            let mut env = BitFlip::new(8).unwrap();
            let bits = vec![true, false, true, false, true, false, true, false];
            env.set_state(bits.clone(), bits);
            let r = env.step(ActionId(a)).unwrap();
            assert!(r.done);
            assert_eq!(r.reward, 0.0);
        }
    }

    #[test]
    fn each_action_matches_bit_toggle_oracle() {
        let bits = vec![true, true, false, false, true, false, false, true];
        let goal = vec![true, false, false, true, true, false, true, true];
        for a in 0..8 {
            let mut env = BitFlip::new(8).unwrap();
            env.set_state(bits.clone(), goal.clone());
            let r = env.step(ActionId(a)).unwrap();
            let mut expected = bits.clone();
            expected[a] = !expected[a];
            let want: Vec<f64> = expected
                .iter()
                .chain(&goal)
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect();
            assert_eq!(&r.next_obs[..], &want[..]);
            let solved = expected == goal;
            assert_eq!(r.done, solved);
            assert_eq!(r.reward, if solved { 0.0 } else { -1.0 });
        }
    }

    #[test]
    fn hamming_distance_moves_by_one_and_horizon_truncates() {
        let mut env = BitFlip::new(8).unwrap();
        env.reset(5);
        let mut d = env.hamming_distance();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for step in 1..=8 {
            let r = env.step(ActionId(rng.random_range(0..8))).unwrap();
            let nd = env.hamming_distance();
            assert_eq!((nd as i64 - d as i64).abs(), 1);
            d = nd;
            if r.done {
                break;
            }
            assert_eq!(r.truncated, step == 8);
        }
    }
}
