//! O-Cloud task placement simulator.
//!
//! Requests arrive one per environment step and the agent picks the server
//! that receives each. A server runs a task immediately when its CPU and RAM
//! headroom fit the demand and nothing is waiting ahead of it; otherwise the
//! task joins that server's FIFO queue. Demands are tracked internally in
//! integer micro-units so utilisation and queue penalties never drift.

mod trace;

pub use trace::{
    trace_load, trace_read, trace_synthesize, trace_synthesize_with_rate, TaskRequest, TraceError,
    DEFAULT_ARRIVAL_RATE,
};

use std::collections::VecDeque;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{check_action, ActionId, EnvError, EnvSpec, Environment, Observation, StepResult};

/// Capacity of one server in demand units.
pub const CAPACITY_UNITS: u64 = 1_000_000;

/// Converts a demand fraction into integer units, never below one unit.
pub fn demand_units(fraction: f64) -> u64 {
    ((fraction * CAPACITY_UNITS as f64).round() as u64).clamp(1, CAPACITY_UNITS)
}

fn units_to_fraction(units: u64) -> f64 {
    units as f64 / CAPACITY_UNITS as f64
}

#[derive(Debug, Error)]
pub enum OCloudError {
    #[error("invalid o-cloud config: {0}")]
    Config(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OCloudConfig {
    pub server_count: usize,
    pub w1: f64,
    pub w2: f64,
    /// Idle power per server in watts.
    pub p0: f64,
    /// Peak power per server in watts.
    pub p1: f64,
    pub warmup_tasks: usize,
    pub episode_tasks: usize,
    /// Divisor applied to the emitted observation. Network-side scaling is
    /// configured separately on the agent.
    pub state_norm: f64,
    pub arrival_rate: f64,
    /// Optional workload trace; synthetic arrivals are used when absent.
    pub trace_path: Option<PathBuf>,
}

impl Default for OCloudConfig {
    fn default() -> Self {
        Self {
            server_count: 10,
            w1: 0.1,
            w2: 0.005,
            p0: 100.0,
            p1: 200.0,
            warmup_tasks: 1000,
            episode_tasks: 200,
            state_norm: 1.0,
            arrival_rate: DEFAULT_ARRIVAL_RATE,
            trace_path: None,
        }
    }
}

impl OCloudConfig {
    pub fn validate(&self) -> Result<(), OCloudError> {
        let bad = |m: &str| Err(OCloudError::Config(m.to_string()));
        if self.server_count < 2 {
            return bad("server_count must be at least 2");
        }
        if !(self.p1 > self.p0 && self.p0 > 0.0) {
            return bad("power levels must satisfy p1 > p0 > 0");
        }
        if self.w1 < 0.0 || self.w2 < 0.0 {
            return bad("reward weights must be non-negative");
        }
        if self.episode_tasks == 0 {
            return bad("episode_tasks must be positive");
        }
        if !(self.state_norm > 0.0) {
            return bad("state_norm must be positive");
        }
        if !(self.arrival_rate > 0.0) {
            return bad("arrival_rate must be positive");
        }
        Ok(())
    }
}

/// Instantaneous cluster power for the given CPU utilisations.
pub fn ocloud_power(u_cpu: impl IntoIterator<Item = f64>, p0: f64, p1: f64) -> f64 {
    u_cpu
        .into_iter()
        .map(|u| p0 + (p1 - p0) * (2.0 * u - u.powf(1.4)) / p1)
        .sum()
}

/// Weighted negative cost of power draw and latency growth.
pub fn ocloud_reward(power: f64, latency_delta: f64, w1: f64, w2: f64) -> f64 {
    -(w1 * power + w2 * latency_delta)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Running {
    task: usize,
    cpu: u64,
    ram: u64,
    remaining: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Queued {
    task: usize,
    cpu: u64,
    ram: u64,
    t_occ: u32,
    t_arr: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Server {
    running: Vec<Running>,
    queue: VecDeque<Queued>,
    cpu_used: u64,
    ram_used: u64,
    /// Sum over queued tasks of (cpu + ram) * t_occ, in units.
    penalty_units: u64,
}

impl Server {
    fn fits(&self, cpu: u64, ram: u64) -> bool {
        self.cpu_used + cpu <= CAPACITY_UNITS && self.ram_used + ram <= CAPACITY_UNITS
    }
}

/// Read-only view of one server.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub u_cpu: f64,
    pub u_ram: f64,
    pub l_queue: usize,
    pub p_queue: f64,
    /// Running tasks with their remaining steps.
    pub running: Vec<(TaskRequest, u32)>,
    pub queued: Vec<TaskRequest>,
}

/// Where and when a task was placed; useful for replaying an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub task: usize,
    pub server: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OCloud {
    cfg: OCloudConfig,
    #[serde(skip)]
    trace: Option<Vec<TaskRequest>>,
    tasks: Vec<TaskRequest>,
    servers: Vec<Server>,
    assignments: Vec<Assignment>,
    clock: u64,
    next_task: usize,
    steps: usize,
    /// Sum of final latencies of started tasks.
    started_latency: u64,
    waiting_count: u64,
    waiting_arrival_sum: u64,
    finished: bool,
    started: bool,
}

impl OCloud {
    pub fn new(cfg: OCloudConfig) -> Result<Self, OCloudError> {
        cfg.validate()?;
        let trace = match &cfg.trace_path {
            Some(path) => Some(trace_load(path)?),
            None => None,
        };
        Ok(Self {
            servers: vec![Server::default(); cfg.server_count],
            cfg,
            trace,
            tasks: Vec::new(),
            assignments: Vec::new(),
            clock: 0,
            next_task: 0,
            steps: 0,
            started_latency: 0,
            waiting_count: 0,
            waiting_arrival_sum: 0,
            finished: false,
            started: false,
        })
    }

    pub fn config(&self) -> &OCloudConfig {
        &self.cfg
    }

    /// Reloads the configured trace file. Traces are not part of serialized
    /// state, so a deserialized simulator needs this before its next reset.
    pub fn reload_trace(&mut self) -> Result<(), OCloudError> {
        self.trace = match &self.cfg.trace_path {
            Some(path) => Some(trace_load(path)?),
            None => None,
        };
        Ok(())
    }

    /// Tasks of the current episode (warm-up first), with demands as seen by
    /// the simulator.
    pub fn tasks(&self) -> &[TaskRequest] {
        &self.tasks
    }

    pub fn assignments(&self) -> &[Assignment] {
        &self.assignments
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn current_task(&self) -> Option<&TaskRequest> {
        self.tasks.get(self.next_task)
    }

    /// Starts an episode on an explicit workload. The first `warmup` tasks
    /// are placed by the least-loaded rule; the workload needs at least
    /// `warmup + episode_tasks + 1` entries, the last one only supplying the
    /// final arrival time.
    pub fn reset_with_tasks(&mut self, tasks: Vec<TaskRequest>, warmup: usize) -> Observation {
        assert!(
            tasks.len() > warmup + self.cfg.episode_tasks,
            "workload too short for warm-up plus episode"
        );
        self.tasks = tasks
            .into_iter()
            .map(|t| TaskRequest {
                c_req: units_to_fraction(demand_units(t.c_req)),
                r_req: units_to_fraction(demand_units(t.r_req)),
                t_occ: t.t_occ.max(1),
                t_arr: t.t_arr,
            })
            .collect();
        self.servers = vec![Server::default(); self.cfg.server_count];
        self.assignments.clear();
        self.clock = self.tasks[0].t_arr;
        self.next_task = 0;
        self.steps = 0;
        self.started_latency = 0;
        self.waiting_count = 0;
        self.waiting_arrival_sum = 0;
        self.finished = false;
        self.started = true;
        for _ in 0..warmup {
            let t_arr = self.tasks[self.next_task].t_arr;
            self.advance_to(t_arr);
            let server = self.least_loaded();
            self.place(server);
        }
        let t_arr = self.tasks[self.next_task].t_arr;
        self.advance_to(t_arr);
        self.observation()
    }

    fn least_loaded(&self) -> usize {
        (0..self.servers.len())
            .min_by_key(|&m| (self.servers[m].cpu_used, self.servers[m].queue.len(), m))
            .unwrap_or(0)
    }

    fn place(&mut self, server: usize) {
        let idx = self.next_task;
        let task = self.tasks[idx];
        let (cpu, ram) = (demand_units(task.c_req), demand_units(task.r_req));
        let s = &mut self.servers[server];
        if s.queue.is_empty() && s.fits(cpu, ram) {
            s.cpu_used += cpu;
            s.ram_used += ram;
            s.running.push(Running {
                task: idx,
                cpu,
                ram,
                remaining: task.t_occ,
            });
            self.started_latency += self.clock - task.t_arr;
        } else {
            s.penalty_units += (cpu + ram) * task.t_occ as u64;
            s.queue.push_back(Queued {
                task: idx,
                cpu,
                ram,
                t_occ: task.t_occ,
                t_arr: task.t_arr,
            });
            self.waiting_count += 1;
            self.waiting_arrival_sum += task.t_arr;
        }
        self.assignments.push(Assignment { task: idx, server });
        self.next_task += 1;
    }

    /// Moves the clock forward one step at a time: running tasks count down,
    /// finished ones release resources, then each queue admits from its head
    /// while the head fits.
    fn advance_to(&mut self, t: u64) {
        while self.clock < t {
            self.clock += 1;
            let clock = self.clock;
            for s in &mut self.servers {
                for r in &mut s.running {
                    r.remaining -= 1;
                }
                let mut i = 0;
                while i < s.running.len() {
                    if s.running[i].remaining == 0 {
                        let r = s.running.remove(i);
                        s.cpu_used -= r.cpu;
                        s.ram_used -= r.ram;
                    } else {
                        i += 1;
                    }
                }
                while let Some(head) = s.queue.front() {
                    if !s.fits(head.cpu, head.ram) {
                        break;
                    }
                    let q = s.queue.pop_front().expect("head exists");
                    s.penalty_units -= (q.cpu + q.ram) * q.t_occ as u64;
                    s.cpu_used += q.cpu;
                    s.ram_used += q.ram;
                    s.running.push(Running {
                        task: q.task,
                        cpu: q.cpu,
                        ram: q.ram,
                        remaining: q.t_occ,
                    });
                    self.waiting_count -= 1;
                    self.waiting_arrival_sum -= q.t_arr;
                    self.started_latency += clock - q.t_arr;
                }
            }
        }
    }

    /// Cumulative latency at the current clock: final latency for started
    /// tasks, time waited so far for queued ones.
    pub fn cumulative_latency(&self) -> u64 {
        self.started_latency + self.waiting_count * self.clock - self.waiting_arrival_sum
    }

    pub fn power(&self) -> f64 {
        ocloud_power(
            self.servers.iter().map(|s| units_to_fraction(s.cpu_used)),
            self.cfg.p0,
            self.cfg.p1,
        )
    }

    pub fn server_states(&self) -> Vec<ServerState> {
        self.servers
            .iter()
            .map(|s| ServerState {
                u_cpu: units_to_fraction(s.cpu_used),
                u_ram: units_to_fraction(s.ram_used),
                l_queue: s.queue.len(),
                p_queue: units_to_fraction(s.penalty_units),
                running: s
                    .running
                    .iter()
                    .map(|r| (self.tasks[r.task], r.remaining))
                    .collect(),
                queued: s.queue.iter().map(|q| self.tasks[q.task]).collect(),
            })
            .collect()
    }

    /// Queue penalties recomputed from queue contents, in units.
    pub fn recomputed_penalty_units(&self) -> Vec<u64> {
        self.servers
            .iter()
            .map(|s| {
                s.queue
                    .iter()
                    .map(|q| (q.cpu + q.ram) * q.t_occ as u64)
                    .sum()
            })
            .collect()
    }

    pub fn penalty_units(&self) -> Vec<u64> {
        self.servers.iter().map(|s| s.penalty_units).collect()
    }

    pub fn utilisation_units(&self) -> Vec<(u64, u64)> {
        self.servers.iter().map(|s| (s.cpu_used, s.ram_used)).collect()
    }

    fn observation(&self) -> Observation {
        let m = self.servers.len();
        let mut v = Vec::with_capacity(3 + 4 * m);
        match self.current_task() {
            Some(t) => v.extend([t.c_req, t.r_req, t.t_occ as f64]),
            None => v.extend([0.0; 3]),
        }
        v.extend(self.servers.iter().map(|s| units_to_fraction(s.cpu_used)));
        v.extend(self.servers.iter().map(|s| units_to_fraction(s.ram_used)));
        v.extend(self.servers.iter().map(|s| s.queue.len() as f64));
        v.extend(self.servers.iter().map(|s| units_to_fraction(s.penalty_units)));
        let norm = self.cfg.state_norm;
        Observation::new(v.into_iter().map(|x| x / norm).collect())
    }
}

impl Environment for OCloud {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            obs_dim: 3 + 4 * self.cfg.server_count,
            action_count: self.cfg.server_count,
            max_steps: self.cfg.episode_tasks,
            reward_range: (f64::NEG_INFINITY, 0.0),
        }
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let needed = self.cfg.warmup_tasks + self.cfg.episode_tasks + 1;
        let tasks = match &self.trace {
            Some(trace) if trace.len() >= needed => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let start = rng.random_range(0..=trace.len() - needed);
                let base = trace[start].t_arr;
                trace[start..start + needed]
                    .iter()
                    .map(|t| TaskRequest {
                        t_arr: t.t_arr - base,
                        ..*t
                    })
                    .collect()
            }
            _ => trace_synthesize_with_rate(seed, needed, self.cfg.arrival_rate),
        };
        self.reset_with_tasks(tasks, self.cfg.warmup_tasks)
    }

    fn step(&mut self, action: ActionId) -> Result<StepResult, EnvError> {
        check_action(action, self.servers.len())?;
        if self.finished || !self.started {
            return Err(EnvError::StepAfterDone);
        }
        let before = self.cumulative_latency();
        self.place(action.0);
        let next_arrival = self.tasks[self.next_task].t_arr;
        self.advance_to(next_arrival);
        let latency_delta = (self.cumulative_latency() - before) as f64;
        let reward = ocloud_reward(self.power(), latency_delta, self.cfg.w1, self.cfg.w2);
        self.steps += 1;
        let truncated = self.steps >= self.cfg.episode_tasks;
        self.finished = truncated;
        Ok(StepResult {
            next_obs: self.observation(),
            reward,
            done: false,
            truncated,
        })
    }
}
