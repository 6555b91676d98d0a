//! Binary run snapshots.
//!
//! Layout (little-endian): 8-byte magic, u32 format version, u64-length
//! prefixed config TOML, u64-length prefixed JSON run state, u32 array
//! count, then per array a u16-length name, a dtype byte (0 = f32,
//! 1 = f64, 2 = u64), a rank byte, u64 dims and the raw values. A CRC32 of
//! everything before it closes the file.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{MetricsRow, MetricsWriter, METRIC_COLUMNS};
use crate::env::{AnyEnv, Observation};
use crate::nn::{AdamState, ParamSet};

use super::config::TrainConfig;
use super::run::{Accum, Counters, RunRngs, TrainError, Trainer};

pub const MAGIC: &[u8; 8] = b"SADQCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint is truncated or corrupted")]
    CorruptChecksum,
    #[error("checkpoint content invalid: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U64(Vec<u64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub shape: Vec<u64>,
    pub data: ArrayData,
}

/// Parsed checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub config: String,
    pub state: String,
    pub arrays: BTreeMap<String, NamedArray>,
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for text in [&self.config, &self.state] {
            out.extend_from_slice(&(text.len() as u64).to_le_bytes());
            out.extend_from_slice(text.as_bytes());
        }
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, arr) in &self.arrays {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let tag: u8 = match arr.data {
                ArrayData::F32(_) => 0,
                ArrayData::F64(_) => 1,
                ArrayData::U64(_) => 2,
            };
            out.push(tag);
            out.push(arr.shape.len() as u8);
            for d in &arr.shape {
                out.extend_from_slice(&d.to_le_bytes());
            }
            match &arr.data {
                ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::CorruptChecksum);
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(CheckpointError::CorruptChecksum);
        }
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let mut r = Reader { buf: body, pos: 12 };
        let config = r.text()?;
        let state = r.text()?;
        let count = r.u32()?;
        let mut arrays = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|e| CheckpointError::Invalid(e.to_string()))?;
            let tag = r.u8()?;
            let rank = r.u8()? as usize;
            let shape: Vec<u64> = (0..rank).map(|_| r.u64()).collect::<Result<_, _>>()?;
            let len = shape.iter().product::<u64>() as usize;
            let data = match tag {
                0 => ArrayData::F32(r.take(len * 4)?.chunks(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect()),
                1 => ArrayData::F64(r.take(len * 8)?.chunks(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect()),
                2 => ArrayData::U64(r.take(len * 8)?.chunks(8).map(|c| u64::from_le_bytes(c.try_into().expect("8"))).collect()),
                t => return Err(CheckpointError::Invalid(format!("unknown dtype tag {t}"))),
            };
            arrays.insert(name, NamedArray { shape, data });
        }
        if r.pos != body.len() {
            return Err(CheckpointError::Invalid("trailing bytes".into()));
        }
        Ok(Self { config, state, arrays })
    }

    fn put(&mut self, name: String, shape: Vec<u64>, data: ArrayData) {
        self.arrays.insert(name, NamedArray { shape, data });
    }

    fn array(&self, name: &str) -> Result<&NamedArray, CheckpointError> {
        self.arrays
            .get(name)
            .ok_or_else(|| CheckpointError::Invalid(format!("missing array `{name}`")))
    }

    fn f32s(&self, name: &str) -> Result<(&[u64], &[f32]), CheckpointError> {
        match self.array(name)? {
            NamedArray { shape, data: ArrayData::F32(v) } => Ok((shape, v)),
            _ => Err(CheckpointError::Invalid(format!("`{name}` is not f32"))),
        }
    }

    fn f64s(&self, name: &str) -> Result<&[f64], CheckpointError> {
        match self.array(name)? {
            NamedArray { data: ArrayData::F64(v), .. } => Ok(v),
            _ => Err(CheckpointError::Invalid(format!("`{name}` is not f64"))),
        }
    }

    fn u64s(&self, name: &str) -> Result<&[u64], CheckpointError> {
        match self.array(name)? {
            NamedArray { data: ArrayData::U64(v), .. } => Ok(v),
            _ => Err(CheckpointError::Invalid(format!("`{name}` is not u64"))),
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(CheckpointError::CorruptChecksum)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2")))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }

    fn text(&mut self) -> Result<String, CheckpointError> {
        let n = self.u64()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| CheckpointError::Invalid(e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
struct RunState {
    seed: u64,
    counters: Counters,
    accum: Accum,
    rngs: RunRngs,
    env: AnyEnv,
    obs: Option<Vec<f64>>,
    wall_clock: Option<f64>,
    gate_open: bool,
    q_adam_step: u64,
    model_adam_step: Option<u64>,
    buffer_cursor: usize,
}

fn put_params(c: &mut Container, prefix: &str, params: &ParamSet<f32>) {
    for (name, v) in params.iter() {
        let shape = v.shape().iter().map(|&d| d as u64).collect();
        c.put(format!("{prefix}/{name}"), shape, ArrayData::F32(v.iter().copied().collect()));
    }
}

fn put_moments(c: &mut Container, prefix: &str, params: &ParamSet<f32>, adam: &AdamState<f32>) {
    for (i, (name, _)) in params.iter().enumerate() {
        for (which, arr) in [("m", &adam.m[i]), ("v", &adam.v[i])] {
            let shape = arr.shape().iter().map(|&d| d as u64).collect();
            c.put(format!("{prefix}.{which}/{name}"), shape, ArrayData::F32(arr.iter().copied().collect()));
        }
    }
}

fn load_array(c: &Container, name: &str, like: &Array2<f32>) -> Result<Array2<f32>, CheckpointError> {
    let (shape, data) = c.f32s(name)?;
    let want: Vec<u64> = like.shape().iter().map(|&d| d as u64).collect();
    if shape != want.as_slice() {
        return Err(CheckpointError::Invalid(format!("`{name}` has shape {shape:?}, expected {want:?}")));
    }
    Ok(Array2::from_shape_vec(like.raw_dim(), data.to_vec()).expect("shape checked"))
}

fn load_params(c: &Container, prefix: &str, params: &mut ParamSet<f32>) -> Result<(), CheckpointError> {
    for i in 0..params.len() {
        let name = format!("{prefix}/{}", params.name(i));
        let arr = load_array(c, &name, params.get(i))?;
        params.set(i, arr).map_err(|e| CheckpointError::Invalid(e.to_string()))?;
    }
    Ok(())
}

fn load_moments(c: &Container, prefix: &str, params: &ParamSet<f32>, adam: &mut AdamState<f32>) -> Result<(), CheckpointError> {
    for i in 0..params.len() {
        adam.m[i] = load_array(c, &format!("{prefix}.m/{}", params.name(i)), params.get(i))?;
        adam.v[i] = load_array(c, &format!("{prefix}.v/{}", params.name(i)), params.get(i))?;
    }
    Ok(())
}

fn invalid(e: impl std::fmt::Display) -> CheckpointError {
    CheckpointError::Invalid(e.to_string())
}

impl Trainer {
    pub fn to_container(&self) -> Result<Container, CheckpointError> {
        let l = &self.learner;
        let state = RunState {
            seed: self.seed,
            counters: self.counters.clone(),
            accum: self.accum.clone(),
            rngs: self.rngs.clone(),
            env: self.env.clone(),
            obs: self.obs.as_ref().map(|o| o.to_vec()),
            wall_clock: Some(self.elapsed_total()).filter(|w| w.is_finite()),
            gate_open: l.gate_open,
            q_adam_step: l.q_adam.step,
            model_adam_step: l.model_adam.as_ref().map(|a| a.step),
            buffer_cursor: self.buffer.cursor,
        };
        let mut c = Container {
            config: self.config.to_toml(),
            state: serde_json::to_string(&state).map_err(invalid)?,
            arrays: BTreeMap::new(),
        };
        put_params(&mut c, "q.online", l.online.params());
        put_params(&mut c, "q.target", l.target.params());
        put_moments(&mut c, "q.adam", l.online.params(), &l.q_adam);
        if let (Some(m), Some(a)) = (&l.model, &l.model_adam) {
            put_params(&mut c, "model", &m.params);
            put_moments(&mut c, "model.adam", &m.params, a);
        }
        let b = &self.buffer;
        let (n, d) = (b.len() as u64, b.obs_dim as u64);
        c.put("buffer.obs".into(), vec![n, d], ArrayData::F64(b.obs.clone()));
        c.put("buffer.next_obs".into(), vec![n, d], ArrayData::F64(b.next_obs.clone()));
        c.put("buffer.rewards".into(), vec![n], ArrayData::F64(b.rewards.clone()));
        c.put("buffer.actions".into(), vec![n], ArrayData::U64(b.actions.iter().map(|&a| a as u64).collect()));
        let flags = b.done.iter().zip(&b.truncated).map(|(&d, &t)| d as u64 | (t as u64) << 1).collect();
        c.put("buffer.flags".into(), vec![n], ArrayData::U64(flags));
        c.put("log.q_losses".into(), vec![self.q_losses.len() as u64], ArrayData::F64(self.q_losses.clone()));
        c.put("log.model_losses".into(), vec![self.model_losses.len() as u64], ArrayData::F64(self.model_losses.clone()));
        let cols = METRIC_COLUMNS.len();
        let flat = self
            .metrics
            .iter()
            .flat_map(|r| METRIC_COLUMNS.iter().map(|k| r.get(k).expect("column")).collect::<Vec<_>>())
            .collect();
        c.put("metrics".into(), vec![self.metrics.len() as u64, cols as u64], ArrayData::F64(flat));
        Ok(c)
    }

    /// Writes a snapshot atomically (temporary file, then rename).
    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let bytes = self.to_container()?.to_bytes();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(CheckpointError::from)?;
        std::fs::rename(&tmp, path).map_err(CheckpointError::from)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let bytes = std::fs::read(path).map_err(CheckpointError::from)?;
        Self::from_container(&Container::from_bytes(&bytes)?)
    }

    pub fn from_container(c: &Container) -> Result<Self, TrainError> {
        let config = TrainConfig::from_toml_str(&c.config)?;
        let state: RunState = serde_json::from_str(&c.state).map_err(invalid)?;
        let mut t = Trainer::new(config, state.seed)?;
        {
            let l = &mut t.learner;
            load_params(c, "q.online", l.online.params_mut())?;
            load_params(c, "q.target", l.target.params_mut())?;
            load_moments(c, "q.adam", l.online.params(), &mut l.q_adam)?;
            l.q_adam.step = state.q_adam_step;
            l.gate_open = state.gate_open;
            if let (Some(m), Some(a)) = (l.model.as_mut(), l.model_adam.as_mut()) {
                load_params(c, "model", &mut m.params)?;
                load_moments(c, "model.adam", &m.params, a)?;
                a.step = state.model_adam_step.ok_or_else(|| invalid("missing model optimiser step"))?;
            }
        }
        let b = &mut t.buffer;
        b.obs = c.f64s("buffer.obs")?.to_vec();
        b.next_obs = c.f64s("buffer.next_obs")?.to_vec();
        b.rewards = c.f64s("buffer.rewards")?.to_vec();
        b.actions = c.u64s("buffer.actions")?.iter().map(|&a| a as usize).collect();
        let flags = c.u64s("buffer.flags")?;
        b.done = flags.iter().map(|f| f & 1 == 1).collect();
        b.truncated = flags.iter().map(|f| f & 2 == 2).collect();
        b.cursor = state.buffer_cursor;
        let n = b.actions.len();
        if b.obs.len() != n * b.obs_dim || b.next_obs.len() != n * b.obs_dim || b.rewards.len() != n || n > b.capacity {
            return Err(invalid("inconsistent buffer arrays").into());
        }
        t.q_losses = c.f64s("log.q_losses")?.to_vec();
        t.model_losses = c.f64s("log.model_losses")?.to_vec();
        let flat = c.f64s("metrics")?;
        t.metrics = flat
            .chunks(METRIC_COLUMNS.len())
            .map(|v| MetricsRow {
                wall_clock: v[0],
                env_steps: v[1] as u64,
                grad_steps: v[2] as u64,
                model_steps: v[3] as u64,
                eval_return_mean: v[4],
                eval_return_std: v[5],
                q_loss: v[6],
                model_loss: v[7],
                epsilon: v[8],
                q_discrepancy: v[9],
                target_variance_estimate: v[10],
            })
            .collect();
        t.counters = state.counters;
        t.accum = state.accum;
        t.rngs = state.rngs;
        t.env = state.env;
        if let AnyEnv::OCloud(o) = &mut t.env {
            o.reload_trace().map_err(invalid)?;
        }
        t.obs = state.obs.map(Observation::new);
        t.restart_clock(state.wall_clock.unwrap_or(0.0));
        Ok(t)
    }

    /// Rewrites `path` to hold exactly the rows recorded so far.
    pub fn truncate_metrics_file(&self, path: &Path) -> Result<(), TrainError> {
        let mut w = MetricsWriter::create(path)?;
        for r in &self.metrics {
            w.write_row(r)?;
        }
        Ok(())
    }
}
