//! Training checkpoints.
//!
//! One JSON header line, then every parameter and optimizer moment as
//! little-endian `f64`, in this order: generator networks, critics, generator
//! Adam `m` and `v` per network, critic Adam `m` and `v`, then the networks of
//! each kept generator. Reading a checkpoint and writing it back gives the same
//! bytes, and training resumed from it continues exactly as if never stopped.

use std::io::{self, BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::train::{TraceRow, TrainState};
use super::{GeneratorKind, GeneratorSet};
use crate::nn::{AdamConfig, AdamState, MlpParams, MlpSpec, NnError};

pub const CHECKPOINT_FORMAT: &str = "pigan-checkpoint";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("not a checkpoint (format `{0}`)")]
    Format(String),
    #[error("checkpoint payload has {found} values, header declares {expected}")]
    Truncated { expected: usize, found: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct GeneratorHeader {
    kind: GeneratorKind,
    noise_dim: usize,
    nets: Vec<MlpSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct AdamHeader {
    config: AdamConfig,
    t: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub step: u64,
    generator: GeneratorHeader,
    critics: Vec<MlpSpec>,
    gen_adam: Vec<AdamHeader>,
    critic_adam: Vec<AdamHeader>,
    trace: Vec<TraceRow>,
    kept_steps: Vec<u64>,
    values: usize,
    /// Caller-supplied run description (config, seed, hash).
    #[serde(default)]
    pub meta: serde_json::Value,
}

fn gen_header(g: &GeneratorSet) -> GeneratorHeader {
    GeneratorHeader {
        kind: g.kind,
        noise_dim: g.noise_dim,
        nets: g.nets.iter().map(|n| *n.spec()).collect(),
    }
}

pub fn write_state<W: Write>(mut out: W, state: &TrainState, meta: serde_json::Value) -> Result<(), CheckpointError> {
    let mut blob: Vec<f64> = Vec::new();
    for n in &state.generator.nets {
        blob.extend_from_slice(n.as_slice());
    }
    for c in &state.critics {
        blob.extend_from_slice(c.as_slice());
    }
    for a in state.gen_adam.iter().chain(&state.critic_adam) {
        blob.extend_from_slice(&a.m);
        blob.extend_from_slice(&a.v);
    }
    for (_, g) in &state.kept {
        for n in &g.nets {
            blob.extend_from_slice(n.as_slice());
        }
    }
    let adam = |a: &AdamState| AdamHeader { config: a.config, t: a.t };
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        step: state.step,
        generator: gen_header(&state.generator),
        critics: state.critics.iter().map(|c| *c.spec()).collect(),
        gen_adam: state.gen_adam.iter().map(adam).collect(),
        critic_adam: state.critic_adam.iter().map(adam).collect(),
        trace: state.trace.clone(),
        kept_steps: state.kept.iter().map(|k| k.0).collect(),
        values: blob.len(),
        meta,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let mut bytes = Vec::with_capacity(blob.len() * 8);
    for v in blob {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}

struct Cursor {
    values: Vec<f64>,
    pos: usize,
}

impl Cursor {
    fn take(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        if self.pos + n > self.values.len() {
            return Err(CheckpointError::Truncated {
                expected: self.pos + n,
                found: self.values.len(),
            });
        }
        let out = self.values[self.pos..self.pos + n].to_vec();
        self.pos += n;
        Ok(out)
    }

    fn net(&mut self, spec: MlpSpec) -> Result<MlpParams, CheckpointError> {
        let data = self.take(spec.param_count())?;
        Ok(MlpParams::from_flat(spec, data)?)
    }

    fn generator(&mut self, h: &GeneratorHeader) -> Result<GeneratorSet, CheckpointError> {
        Ok(GeneratorSet {
            kind: h.kind,
            noise_dim: h.noise_dim,
            nets: h.nets.iter().map(|s| self.net(*s)).collect::<Result<_, _>>()?,
        })
    }
}

pub fn read_state<R: Read>(input: R) -> Result<(CheckpointHeader, TrainState), CheckpointError> {
    let mut reader = BufReader::new(input);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end_matches('\n'))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(CheckpointError::Format(header.format));
    }
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != header.values * 8 {
        return Err(CheckpointError::Truncated {
            expected: header.values,
            found: bytes.len() / 8,
        });
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut cur = Cursor { values, pos: 0 };
    let generator = cur.generator(&header.generator)?;
    let critics = header.critics.iter().map(|s| cur.net(*s)).collect::<Result<Vec<_>, _>>()?;
    let mut adam = |h: &AdamHeader, len: usize| -> Result<AdamState, CheckpointError> {
        Ok(AdamState {
            config: h.config,
            t: h.t,
            m: cur.take(len)?,
            v: cur.take(len)?,
        })
    };
    let gen_adam = header
        .gen_adam
        .iter()
        .zip(&generator.nets)
        .map(|(h, n)| adam(h, n.as_slice().len()))
        .collect::<Result<Vec<_>, _>>()?;
    let critic_adam = header
        .critic_adam
        .iter()
        .zip(&critics)
        .map(|(h, n)| adam(h, n.as_slice().len()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut kept = Vec::with_capacity(header.kept_steps.len());
    for &s in &header.kept_steps {
        kept.push((s, cur.generator(&header.generator)?));
    }
    if cur.pos != cur.values.len() {
        return Err(CheckpointError::Truncated {
            expected: cur.pos,
            found: cur.values.len(),
        });
    }
    let state = TrainState {
        step: header.step,
        generator,
        critics,
        gen_adam,
        critic_adam,
        trace: header.trace.clone(),
        kept,
    };
    Ok((header, state))
}
