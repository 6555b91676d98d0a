#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sadq::agent::{qr_dqn_target, sadq_dist_target, sadq_target, TargetMix};
use sadq::dynamics::standard_normal;
use sadq::dynamics::{LOGVAR_MAX, LOGVAR_MIN};
use sadq::nn::{DenseStack, ParamSet, Tape};
use sadq::ocloud::{ocloud_power, ocloud_reward, trace_synthesize, OCloud, OCloudConfig, TaskRequest};
use sadq::trainer::{Learner, QNet, TrainConfig, Trainer, Variant};
use sadq::{ActionId, DynModel, Environment, ModelLoss};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn config(preset: &str, overrides: &[&str]) -> TrainConfig {
    let owned: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    TrainConfig::with_overrides(&TrainConfig::preset(preset).unwrap().to_toml(), &owned).unwrap()
}

// ---------------------------------------------------------------------------
// finite differences

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Denominator floor so that entries whose true gradient is zero (dead
/// ReLU units, untouched heads) compare by absolute error.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Largest relative error between the analytic gradient of every entry of
/// `params(obj)` and its central difference.
pub fn max_rel_error<T>(
    obj: &mut T,
    params: fn(&mut T) -> &mut ParamSet<f64>,
    analytic: &[Array2<f64>],
    loss: impl Fn(&T) -> f64,
) -> f64 {
    let mut worst = 0.0f64;
    for (slot, grad) in analytic.iter().enumerate() {
        for (idx, &g) in grad.indexed_iter() {
            let orig = params(obj).get(slot)[idx];
            params(obj).get_mut(slot)[idx] = orig + FD_STEP;
            let up = loss(obj);
            params(obj).get_mut(slot)[idx] = orig - FD_STEP;
            let down = loss(obj);
            params(obj).get_mut(slot)[idx] = orig;
            worst = worst.max(rel_err(g, (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

/// Smallest distance of any ReLU pre-activation to zero. A central
/// difference that straddles a kink measures a one-sided mix of slopes, so
/// draws closer than this are skipped.
pub const KINK_MARGIN: f64 = 1e-3;

/// Runs `x` through `stack`, returning the smallest |pre-activation| over
/// the rectified layers and the stack output.
pub fn relu_margin(stack: &DenseStack, params: &ParamSet<f64>, x: &Array2<f64>, activate_last: bool) -> (f64, Array2<f64>) {
    let mut h = x.clone();
    let mut margin = f64::INFINITY;
    for layer in 0..stack.layer_count() {
        let mut z = h.dot(params.get(stack.weight_slot(layer)));
        z += &params.get(stack.bias_slot(layer)).row(0);
        if layer + 1 < stack.layer_count() || activate_last {
            margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
            z.mapv_inplace(|v| v.max(0.0));
        }
        h = z;
    }
    (margin, h)
}

/// Worst gradient error over the first `count` kink-free draws from seeds
/// `base, base + 1, ...`, with the number of draws skipped.
pub fn grad_errors(base: u64, count: usize, draw: impl Fn(u64) -> Option<f64>) -> (Vec<f64>, usize) {
    let (mut errors, mut skipped) = (Vec::new(), 0);
    let mut seed = base;
    while errors.len() < count {
        match draw(seed) {
            Some(e) => errors.push(e),
            None => skipped += 1,
        }
        seed += 1;
    }
    (errors, skipped)
}

/// A small random Q learner and batch; returns the worst relative gradient
/// error of its loss, or `None` when the draw sits near a ReLU kink.
pub fn q_loss_grad_error(seed: u64, variant: &str, loss: &str) -> Option<f64> {
    let mut r = rng(seed);
    let obs_dim = r.random_range(2..5);
    let actions = r.random_range(2..4);
    let hidden = format!("q.hidden=[{}, {}]", r.random_range(3..7), r.random_range(3..6));
    let cfg = config(
        "cartpole",
        &[
            &format!("agent.variant=\"{variant}\""),
            &format!("q.loss=\"{loss}\""),
            &hidden,
            "q.atoms=5",
        ],
    );
    let mut learner = Learner::<f64>::new(&cfg, obs_dim, actions, &mut r, &mut rng(seed + 1000)).unwrap();
    let n = 6;
    let obs = Array2::from_shape_fn((n, obs_dim), |_| r.random_range(-2.0..2.0));
    let acts: Vec<usize> = (0..n).map(|_| r.random_range(0..actions)).collect();
    let width = if learner.variant.distributional() { cfg.q.atoms } else { 1 };
    let targets = Array2::from_shape_fn((n, width), |_| r.random_range(-3.0..3.0));
    let margin = match &learner.online {
        QNet::Plain(m) => relu_margin(&m.stack, &m.params, &obs, false).0,
        QNet::Dueling(d) => {
            let (m, h) = relu_margin(&d.trunk, &d.params, &obs, true);
            m.min(relu_margin(&d.value, &d.params, &h, false).0)
                .min(relu_margin(&d.advantage, &d.params, &h, false).0)
        }
        QNet::Quantile(q) => relu_margin(&q.body, &q.params, &obs, false).0,
    };
    if margin < KINK_MARGIN {
        return None;
    }
    let loss_of = |l: &Learner<f64>| {
        let mut tape = Tape::new();
        let v = l.q_loss_tape(&mut tape, obs.clone(), &acts, targets.clone()).unwrap();
        tape.scalar(v)
    };
    let mut tape = Tape::new();
    let v = learner.q_loss_tape(&mut tape, obs.clone(), &acts, targets.clone()).unwrap();
    let grads = tape.backward(v, learner.online.params()).unwrap();
    Some(max_rel_error(&mut learner, |l| l.online.params_mut(), &grads.values, loss_of))
}

/// Model loss through the reparameterised sample with a fixed noise draw.
pub fn model_loss_grad_error(seed: u64, kind: ModelLoss) -> Option<f64> {
    let mut r = rng(seed);
    let obs_dim = r.random_range(2..5);
    let actions = r.random_range(2..4);
    let hidden = [r.random_range(3..7), r.random_range(3..6)];
    let mut model = DynModel::<f64>::new(obs_dim, actions, &hidden, 1.0, &mut r);
    model.loss = kind;
    let n = 6;
    let x = Array2::from_shape_fn((n, obs_dim), |_| r.random_range(-2.0..2.0));
    let acts: Vec<usize> = (0..n).map(|_| r.random_range(0..actions)).collect();
    let input = model.encode(x.view(), &acts).unwrap();
    let target = Array2::from_shape_fn((n, obs_dim), |_| r.random_range(-2.0..2.0));
    let eps: Array2<f64> = standard_normal(n, obs_dim, &mut r);
    let (mu_margin, _) = relu_margin(&model.mu_net, &model.params, &input, false);
    let (sigma_margin, raw) = relu_margin(&model.sigma_net, &model.params, &input, false);
    let clamp_margin = raw
        .iter()
        .map(|&v| (v - LOGVAR_MIN).abs().min((v - LOGVAR_MAX).abs()))
        .fold(f64::INFINITY, f64::min);
    if mu_margin.min(sigma_margin).min(clamp_margin) < KINK_MARGIN {
        return None;
    }
    let loss_of = |m: &DynModel<f64>| {
        let mut tape = Tape::new();
        let v = m.loss_tape(&mut tape, input.clone(), target.clone(), eps.clone()).unwrap();
        tape.scalar(v)
    };
    let mut tape = Tape::new();
    let v = model.loss_tape(&mut tape, input.clone(), target.clone(), eps.clone()).unwrap();
    let grads = tape.backward(v, &model.params).unwrap();
    Some(max_rel_error(&mut model, |m| &mut m.params, &grads.values, loss_of))
}

// ---------------------------------------------------------------------------
// distributional consistency

/// Error budget for comparing a mean of `n` atomwise targets against the
/// target of the means: a few ulps per accumulated term.
pub fn accumulation_bound(n: usize, scale: f64) -> f64 {
    4.0 * (n as f64 + 2.0) * f64::EPSILON * scale
}

/// Checks `trials` random inputs; returns the number of failures of each
/// property: (expectation mismatch, alpha = 1 mismatch).
pub fn distributional_consistency(trials: usize, seed: u64) -> (usize, usize) {
    let mut r = rng(seed);
    let (mut exp_fail, mut qr_fail) = (0, 0);
    for _ in 0..trials {
        let n = r.random_range(1..64);
        let mix = TargetMix::new(r.random_range(0.0..=1.0), 0.5, r.random_range(0.0..1.0)).unwrap();
        let z_hat: Vec<f64> = (0..n).map(|_| r.random_range(-50.0..50.0)).collect();
        let z_next: Vec<f64> = (0..n).map(|_| r.random_range(-50.0..50.0)).collect();
        let reward = r.random_range(-5.0..5.0);
        let done = r.random_bool(0.1);
        let y = sadq_dist_target(reward, &mix, &z_hat, &z_next, done).unwrap();
        let mean = |z: &[f64]| z.iter().sum::<f64>() / z.len() as f64;
        let expected = sadq_target(reward, &mix, mean(&z_hat), mean(&z_next), done);
        let scale = reward.abs() + z_hat.iter().chain(&z_next).fold(0.0f64, |m, v| m.max(v.abs()));
        if (mean(&y) - expected).abs() > accumulation_bound(n, scale) {
            exp_fail += 1;
        }
        let one = TargetMix { alpha: 1.0, ..mix };
        let y1 = sadq_dist_target(reward, &one, &z_hat, &z_next, done).unwrap();
        if y1 != qr_dqn_target(reward, mix.gamma, &z_next, done) {
            qr_fail += 1;
        }
    }
    (exp_fail, qr_fail)
}

// ---------------------------------------------------------------------------
// O-Cloud replay oracle

/// Straightforward re-simulation of a finished assignment log. Keeps task
/// lists per server and recomputes every aggregate from them.
pub struct ReplayOracle {
    tasks: Vec<TaskRequest>,
    running: Vec<Vec<(usize, u32)>>,
    queues: Vec<Vec<usize>>,
    start: Vec<Option<u64>>,
    placed: Vec<bool>,
    pub clock: u64,
}

const UNITS: f64 = 1_000_000.0;

fn units(x: f64) -> u64 {
    (x * UNITS).round() as u64
}

impl ReplayOracle {
    pub fn new(tasks: Vec<TaskRequest>, servers: usize) -> Self {
        let n = tasks.len();
        Self {
            clock: tasks[0].t_arr,
            tasks,
            running: vec![Vec::new(); servers],
            queues: vec![Vec::new(); servers],
            start: vec![None; n],
            placed: vec![false; n],
        }
    }

    fn used(&self, m: usize) -> (u64, u64) {
        self.running[m].iter().fold((0, 0), |(c, r), &(t, _)| {
            (c + units(self.tasks[t].c_req), r + units(self.tasks[t].r_req))
        })
    }

    fn fits(&self, m: usize, t: usize) -> bool {
        let (c, r) = self.used(m);
        c + units(self.tasks[t].c_req) <= UNITS as u64 && r + units(self.tasks[t].r_req) <= UNITS as u64
    }

    pub fn place(&mut self, task: usize, m: usize) {
        self.placed[task] = true;
        if self.queues[m].is_empty() && self.fits(m, task) {
            self.running[m].push((task, self.tasks[task].t_occ));
            self.start[task] = Some(self.clock);
        } else {
            self.queues[m].push(task);
        }
    }

    pub fn advance_to(&mut self, t: u64) {
        while self.clock < t {
            self.clock += 1;
            for m in 0..self.running.len() {
                self.running[m] = self.running[m]
                    .iter()
                    .map(|&(task, left)| (task, left - 1))
                    .filter(|&(_, left)| left > 0)
                    .collect();
                while let Some(&head) = self.queues[m].first() {
                    if !self.fits(m, head) {
                        break;
                    }
                    self.queues[m].remove(0);
                    self.running[m].push((head, self.tasks[head].t_occ));
                    self.start[head] = Some(self.clock);
                }
            }
        }
    }

    pub fn u_cpu(&self, m: usize) -> f64 {
        self.running[m].iter().map(|&(t, _)| self.tasks[t].c_req).sum()
    }

    pub fn u_ram(&self, m: usize) -> f64 {
        self.running[m].iter().map(|&(t, _)| self.tasks[t].r_req).sum()
    }

    pub fn queue_len(&self, m: usize) -> usize {
        self.queues[m].len()
    }

    pub fn p_queue(&self, m: usize) -> f64 {
        self.queues[m]
            .iter()
            .map(|&t| (self.tasks[t].c_req + self.tasks[t].r_req) * self.tasks[t].t_occ as f64)
            .sum()
    }

    pub fn running_ids(&self, m: usize) -> Vec<(usize, u32)> {
        let mut v = self.running[m].clone();
        v.sort_unstable();
        v
    }

    pub fn cumulative_latency(&self) -> u64 {
        (0..self.tasks.len())
            .filter(|&t| self.placed[t])
            .map(|t| match self.start[t] {
                Some(s) => s - self.tasks[t].t_arr,
                None => self.clock - self.tasks[t].t_arr,
            })
            .sum()
    }
}

fn near(what: &str, got: f64, want: f64) -> Result<(), String> {
    if (got - want).abs() < 1e-9 {
        Ok(())
    } else {
        Err(format!("{what}: {got} vs {want}"))
    }
}

fn task(c_req: f64, r_req: f64, t_occ: u32, t_arr: u64) -> TaskRequest {
    TaskRequest { c_req, r_req, t_occ, t_arr }
}

fn two_servers(tasks: Vec<TaskRequest>, episode_tasks: usize) -> OCloud {
    let mut sim = OCloud::new(OCloudConfig {
        server_count: 2,
        warmup_tasks: 0,
        episode_tasks,
        ..OCloudConfig::default()
    })
    .unwrap();
    sim.reset_with_tasks(tasks, 0);
    sim
}

/// Power, reward, placement, queue-penalty and latency cases worked out by
/// hand on one or two servers.
pub fn ocloud_hand_checks() -> Result<(), String> {
    near("power, idle", ocloud_power(vec![0.0; 10], 100.0, 200.0), 1000.0)?;
    near("power, full", ocloud_power([1.0], 100.0, 200.0), 100.5)?;
    // 0.5^1.4 = 0.378929141627...
    near("power, half", ocloud_power([0.5], 100.0, 200.0), 100.310_535_429_186)?;
    near("reward, power only", ocloud_reward(1000.0, 0.0, 0.1, 0.005), -100.0)?;
    near("reward, latency only", ocloud_reward(0.0, 200.0, 0.1, 0.005), -1.0)?;

    let mut sim = two_servers(vec![task(0.5, 0.2, 5, 0), task(0.1, 0.1, 1, 0)], 1);
    sim.step(ActionId(0)).map_err(|e| e.to_string())?;
    let s = &sim.server_states()[0];
    near("fitting task, u_cpu", s.u_cpu, 0.5)?;
    near("fitting task, l_queue", s.l_queue as f64, 0.0)?;
    near("fitting task, latency", sim.cumulative_latency() as f64, 0.0)?;

    let mut sim = two_servers(
        vec![task(0.9, 0.1, 10, 0), task(0.5, 0.25, 4, 0), task(0.05, 0.05, 1, 1), task(0.05, 0.05, 1, 2)],
        3,
    );
    sim.step(ActionId(0)).map_err(|e| e.to_string())?;
    let before = sim.server_states()[0].p_queue;
    sim.step(ActionId(0)).map_err(|e| e.to_string())?;
    let s = &sim.server_states()[0];
    near("queued task, l_queue", s.l_queue as f64, 1.0)?;
    near("queued task, penalty", s.p_queue - before, (0.5 + 0.25) * 4.0)?;
    if sim.recomputed_penalty_units() != sim.penalty_units() {
        return Err("incremental penalty drifted from the recomputed one".into());
    }
    let before = sim.cumulative_latency();
    sim.step(ActionId(1)).map_err(|e| e.to_string())?;
    near("waiting task, latency delta", (sim.cumulative_latency() - before) as f64, 1.0)
}

/// Plays `steps` random placements on a synthetic workload and compares the
/// simulator to the oracle after every step. Returns the first mismatch.
pub fn ocloud_replay_check(seed: u64, steps: usize, warmup: usize) -> Result<(), String> {
    let cfg = OCloudConfig {
        episode_tasks: steps,
        warmup_tasks: warmup,
        ..OCloudConfig::default()
    };
    let servers = cfg.server_count;
    let mut sim = OCloud::new(cfg).unwrap();
    sim.reset_with_tasks(trace_synthesize(seed, warmup + steps + 1), warmup);
    let mut oracle = ReplayOracle::new(sim.tasks().to_vec(), servers);
    for a in sim.assignments().to_vec() {
        oracle.advance_to(sim.tasks()[a.task].t_arr);
        oracle.place(a.task, a.server);
    }
    oracle.advance_to(sim.clock());
    let mut r = rng(seed ^ 0x5eed);
    let tol = 1e-9;
    for step in 0..=steps {
        if step > 0 {
            let task = warmup + step - 1;
            let m = r.random_range(0..servers);
            let before = sim.cumulative_latency();
            let out = sim.step(ActionId(m)).map_err(|e| e.to_string())?;
            oracle.place(task, m);
            oracle.advance_to(sim.clock());
            let delta = (oracle.cumulative_latency() - before) as f64;
            let expected = sadq::ocloud::ocloud_reward(sim.power(), delta, 0.1, 0.005);
            if (out.reward - expected).abs() > tol {
                return Err(format!("step {step}: reward {} vs {expected}", out.reward));
            }
        }
        if sim.cumulative_latency() != oracle.cumulative_latency() {
            return Err(format!(
                "step {step}: latency {} vs {}",
                sim.cumulative_latency(),
                oracle.cumulative_latency()
            ));
        }
        for (m, s) in sim.server_states().iter().enumerate() {
            let own_cpu: f64 = s.running.iter().map(|(t, _)| t.c_req).sum();
            let own_ram: f64 = s.running.iter().map(|(t, _)| t.r_req).sum();
            let checks = [
                ("u_cpu", s.u_cpu, oracle.u_cpu(m)),
                ("u_ram", s.u_ram, oracle.u_ram(m)),
                ("u_cpu vs own running", s.u_cpu, own_cpu),
                ("u_ram vs own running", s.u_ram, own_ram),
                ("p_queue", s.p_queue, oracle.p_queue(m)),
                ("l_queue", s.l_queue as f64, oracle.queue_len(m) as f64),
            ];
            for (what, got, want) in checks {
                if (got - want).abs() > tol {
                    return Err(format!("step {step}, server {m}: {what} {got} vs {want}"));
                }
            }
            if !(0.0..=1.0 + tol).contains(&s.u_cpu) || !(0.0..=1.0 + tol).contains(&s.u_ram) {
                return Err(format!("step {step}, server {m}: utilisation out of range"));
            }
            let remaining: Vec<u32> = {
                let mut v: Vec<u32> = s.running.iter().map(|(_, left)| *left).collect();
                v.sort_unstable();
                v
            };
            let mut oracle_remaining: Vec<u32> = oracle.running_ids(m).iter().map(|&(_, left)| left).collect();
            oracle_remaining.sort_unstable();
            if remaining != oracle_remaining {
                return Err(format!("step {step}, server {m}: running sets differ"));
            }
        }
        if sim.recomputed_penalty_units() != sim.penalty_units() {
            return Err(format!("step {step}: incremental queue penalty drifted"));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// training helpers

/// Trains until `reached` holds after an evaluation or the budget runs out.
/// Returns the env step of the first evaluation that satisfied it.
pub fn train_until(cfg: TrainConfig, seed: u64, reached: impl Fn(&Trainer) -> bool) -> (Option<u64>, Trainer) {
    let mut t = Trainer::new(cfg, seed).unwrap();
    while !t.finished() {
        if t.run_cycle().unwrap() && reached(&t) {
            return (Some(t.counters.env_steps), t);
        }
    }
    (None, t)
}

pub fn eval_mean(t: &Trainer) -> f64 {
    t.last_eval.as_ref().map_or(f64::NAN, |e| e.mean())
}

pub fn eval_success(t: &Trainer) -> f64 {
    t.last_eval.as_ref().map_or(f64::NAN, |e| e.success_rate())
}

/// Trailing moving average with a window of `w` (shorter at the start).
pub fn smooth(xs: &[f64], w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let mut acc = 0.0;
    for i in 0..xs.len() {
        acc += xs[i];
        if i >= w {
            acc -= xs[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

/// Mean smoothed loss over the first and the last tenth of the updates.
pub fn loss_ends(losses: &[f64]) -> (f64, f64) {
    let s = smooth(losses, 100);
    let tenth = (s.len() / 10).max(1);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (mean(&s[..tenth]), mean(&s[s.len() - tenth..]))
}

/// Runs SADQ (alpha = 1, beta = 0) next to dueling DQN on the same seed and
/// returns the first cycle where online or target parameters differ.
pub fn reduction_trajectories(seed: u64, grad_steps: u64) -> Result<u64, String> {
    let common = [
        "schedule.replay_frequency=8",
        "model.update_per_collect=1",
        "q.target_update_interval=400",
    ];
    let mut sadq_cfg = config("cartpole", &common);
    sadq_cfg.agent.alpha = 1.0;
    sadq_cfg.agent.beta = 0.0;
    let mut duel_cfg = sadq_cfg.clone();
    duel_cfg.agent.variant = Variant::Dueling;
    let mut a = Trainer::new(sadq_cfg, seed).unwrap();
    let mut b = Trainer::new(duel_cfg, seed).unwrap();
    let mut cycles = 0;
    while a.counters.grad_steps < grad_steps {
        a.run_cycle().map_err(|e| e.to_string())?;
        b.run_cycle().map_err(|e| e.to_string())?;
        cycles += 1;
        if a.learner.online.params() != b.learner.online.params()
            || a.learner.target.params() != b.learner.target.params()
        {
            return Err(format!("parameters diverged at cycle {cycles}"));
        }
        if a.counters.grad_steps != b.counters.grad_steps || a.counters.env_steps != b.counters.env_steps {
            return Err(format!("counters diverged at cycle {cycles}"));
        }
    }
    if a.learner.model.is_none() || a.counters.model_steps == 0 {
        return Err("the SADQ side never trained its model".into());
    }
    Ok(a.counters.grad_steps)
}
