use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One incoming request. Demands are fractions of a single server's
/// capacity; times are in simulator steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskRequest {
    pub c_req: f64,
    pub r_req: f64,
    pub t_occ: u32,
    pub t_arr: u64,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("trace contains no tasks")]
    EmptyTrace,
    #[error("trace io: {0}")]
    Io(#[from] std::io::Error),
}

/// Default mean arrivals per step for synthetic workloads.
pub const DEFAULT_ARRIVAL_RATE: f64 = 2.5;

/// Reads a comma-separated trace with a header row and the columns
/// `arrival_time, duration, cpu_demand, ram_demand`.
///
/// Demands above 1 are clamped to 1; non-positive demands are rejected.
/// Durations are rounded up to whole steps. The result is sorted by arrival
/// time, keeping file order among ties.
pub fn trace_load(path: impl AsRef<Path>) -> Result<Vec<TaskRequest>, TraceError> {
    let file = std::fs::File::open(path)?;
    trace_read(file)
}

pub fn trace_read(reader: impl std::io::Read) -> Result<Vec<TaskRequest>, TraceError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut tasks = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        // line 1 is the header
        let line = i + 2;
        let record = record.map_err(|e| TraceError::Parse {
            line,
            reason: e.to_string(),
        })?;
        if record.len() != 4 {
            return Err(TraceError::Parse {
                line,
                reason: format!("expected 4 columns, found {}", record.len()),
            });
        }
        let field = |idx: usize, name: &str| -> Result<f64, TraceError> {
            let v: f64 = record[idx].parse().map_err(|_| TraceError::Parse {
                line,
                reason: format!("{name} `{}` is not a number", &record[idx]),
            })?;
            if !v.is_finite() {
                return Err(TraceError::Parse {
                    line,
                    reason: format!("{name} is not finite"),
                });
            }
            Ok(v)
        };
        let arrival = field(0, "arrival_time")?;
        let duration = field(1, "duration")?;
        let cpu = field(2, "cpu_demand")?;
        let ram = field(3, "ram_demand")?;
        if arrival < 0.0 {
            return Err(TraceError::Parse {
                line,
                reason: "arrival_time is negative".into(),
            });
        }
        if duration <= 0.0 {
            return Err(TraceError::Parse {
                line,
                reason: "duration must be positive".into(),
            });
        }
        for (name, v) in [("cpu_demand", cpu), ("ram_demand", ram)] {
            if v <= 0.0 {
                return Err(TraceError::Parse {
                    line,
                    reason: format!("{name} must be positive, got {v}"),
                });
            }
        }
        tasks.push(TaskRequest {
            c_req: cpu.min(1.0),
            r_req: ram.min(1.0),
            t_occ: duration.ceil().min(u32::MAX as f64) as u32,
            t_arr: arrival.floor() as u64,
        });
    }
    if tasks.is_empty() {
        return Err(TraceError::EmptyTrace);
    }
    tasks.sort_by_key(|t| t.t_arr);
    Ok(tasks)
}

/// Synthetic workload: exponential inter-arrival gaps, demands uniform in
/// (0.05, 0.5], occupation uniform in 1..=20 steps.
pub fn trace_synthesize(seed: u64, count: usize) -> Vec<TaskRequest> {
    trace_synthesize_with_rate(seed, count, DEFAULT_ARRIVAL_RATE)
}

pub fn trace_synthesize_with_rate(seed: u64, count: usize, arrival_rate: f64) -> Vec<TaskRequest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaps = Exp::new(arrival_rate).expect("arrival rate must be positive");
    let mut clock = 0.0f64;
    (0..count)
        .map(|_| {
            clock += gaps.sample(&mut rng);
            let c_req = 0.5 - 0.45 * rng.random::<f64>();
            let r_req = 0.5 - 0.45 * rng.random::<f64>();
            TaskRequest {
                c_req,
                r_req,
                t_occ: rng.random_range(1..=20),
                t_arr: clock.floor() as u64,
            }
        })
        .collect()
}
