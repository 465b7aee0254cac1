//! Experiment configuration: schema, validation, scaling and hashing.

use std::collections::BTreeMap;
use std::fmt;

use pigan::gan::{CheckpointSchedule, GeneratorKind, LossKind, TrainConfig};
use pigan::nn::AdamConfig;
use pigan::processes::{equidistant, ProcessSpec, SensorLayout, PRIMES};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::presets;
use crate::CliError;

/// What the snapshots are drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Target {
    /// A single process read directly at the sensors.
    Process { process: ProcessSpec },
    /// `-(1/10) d/dx(k du/dx) = f` on `[-1, 1]` with `u(+-1) = 0`.
    Elliptic { k: ProcessSpec, f: ProcessSpec },
}

/// Either a sensor count (equispaced on `[-1, 1]`) or explicit positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sensors {
    Count(usize),
    Positions(Vec<f64>),
}

impl Default for Sensors {
    fn default() -> Self {
        Sensors::Count(0)
    }
}

impl Sensors {
    fn positions(&self) -> Vec<f64> {
        match self {
            Sensors::Count(n) => equidistant(*n, -1.0, 1.0),
            Sensors::Positions(p) => p.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorsConfig {
    pub k: Sensors,
    pub u: Sensors,
    pub f: Sensors,
    /// Boundary trace of `u`; a count must be 0 or 2.
    pub b: Sensors,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub sensors: SensorsConfig,
    pub snapshots: usize,
    #[serde(default)]
    pub validation: usize,
    pub critic_width: usize,
    /// Overrides every read with this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub generator_width: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { generator_width: 128 }
    }
}

/// Trainer settings; the seed comes from the experiment's seed list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: u64,
    pub n_critic: usize,
    pub lambda: f64,
    pub batch: usize,
    pub adam: AdamConfig,
    pub group_weights: Vec<f64>,
    pub shuffle_kf: bool,
    pub loss: LossKind,
    pub trace_every: u64,
    pub checkpoints: CheckpointSchedule,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            steps: t.steps,
            n_critic: t.n_critic,
            lambda: t.lambda,
            batch: t.batch,
            adam: t.adam,
            group_weights: t.group_weights,
            shuffle_kf: t.shuffle_kf,
            loss: t.loss,
            trace_every: 1000,
            checkpoints: t.checkpoints,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            n_critic: self.n_critic,
            lambda: self.lambda,
            batch: self.batch,
            adam: self.adam,
            group_weights: self.group_weights.clone(),
            shuffle_kf: self.shuffle_kf,
            loss: self.loss,
            seed,
            trace_every: self.trace_every,
            checkpoints: self.checkpoints,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Points of the oracle and evaluation grid on `[-1, 1]`.
    pub grid_points: usize,
    /// Halton noise points per evaluated generator.
    pub paths: usize,
    pub reference_paths: usize,
    /// Snapshots per empirical distribution in W1 monitoring.
    pub w1_snapshots: usize,
    pub w1_batches: usize,
    /// W1 is recorded at step 0 and every `w1_every` steps (0 = never).
    pub w1_every: u64,
    pub baseline_pairs: usize,
    /// Monte-Carlo sets used for the sampling-error baseline of relative errors.
    pub baseline_sets: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            grid_points: 201,
            paths: 10_000,
            reference_paths: 100_000,
            w1_snapshots: 1000,
            w1_batches: 10,
            w1_every: 1000,
            baseline_pairs: 50,
            baseline_sets: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub generator: GeneratorKind,
    pub noise_dims: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_data_seed")]
    pub data_seed: u64,
    pub target: Target,
    pub groups: Vec<GroupConfig>,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Output file stem per artifact (e.g. `w1_trace = "fig4_w1_trace"`).
    #[serde(default)]
    pub figures: BTreeMap<String, String>,
}

fn default_data_seed() -> u64 {
    2019
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Paper,
    Desk,
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Paper => "paper",
            Scale::Desk => "desk",
        })
    }
}

pub const DESK_WIDTH: usize = 32;
pub const DESK_BATCH: usize = 256;
pub const DESK_STEP_FACTOR: u64 = 10;

fn config_err(path: &str, msg: impl fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {msg}"))
}

impl ExperimentConfig {
    /// Reduced-cost variant: widths capped at 32, steps and every step-based
    /// interval divided by 10, batch capped at 256, data sizes unchanged.
    pub fn apply_scale(&mut self, scale: Scale) {
        if scale == Scale::Paper {
            return;
        }
        self.network.generator_width = self.network.generator_width.min(DESK_WIDTH);
        for g in &mut self.groups {
            g.critic_width = g.critic_width.min(DESK_WIDTH);
        }
        let t = &mut self.train;
        t.steps /= DESK_STEP_FACTOR;
        t.batch = t.batch.min(DESK_BATCH);
        t.trace_every /= DESK_STEP_FACTOR;
        t.checkpoints.every /= DESK_STEP_FACTOR;
        t.checkpoints.window = (t.checkpoints.window.saturating_sub(1)) / DESK_STEP_FACTOR + 1;
        self.eval.w1_every /= DESK_STEP_FACTOR;
    }

    pub fn layout(&self, group: usize) -> Result<SensorLayout, CliError> {
        let s = &self.groups[group].sensors;
        let b = match &s.b {
            Sensors::Count(0) => Vec::new(),
            Sensors::Count(2) => vec![-1.0, 1.0],
            Sensors::Count(n) => {
                return Err(config_err(
                    &format!("groups[{group}].sensors.b"),
                    format!("boundary sensors sit at x = -1 and x = 1, cannot place {n}"),
                ))
            }
            Sensors::Positions(p) => p.clone(),
        };
        let layout = SensorLayout {
            k: s.k.positions(),
            u: s.u.positions(),
            f: s.f.positions(),
            b,
        };
        layout.validate().map_err(|e| config_err(&format!("groups[{group}].sensors"), e))?;
        Ok(layout)
    }

    pub fn layouts(&self) -> Result<Vec<SensorLayout>, CliError> {
        (0..self.groups.len()).map(|g| self.layout(g)).collect()
    }

    /// Output stem for an artifact, defaulting to the artifact name.
    pub fn figure(&self, artifact: &str) -> String {
        self.figures.get(artifact).cloned().unwrap_or_else(|| artifact.to_string())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.name.is_empty() {
            return Err(config_err("name", "must not be empty"));
        }
        if self.noise_dims.is_empty() {
            return Err(config_err("noise_dims", "at least one noise dimension is required"));
        }
        for (i, &d) in self.noise_dims.iter().enumerate() {
            if d == 0 || d > PRIMES.len() {
                return Err(config_err(
                    &format!("noise_dims[{i}]"),
                    format!("must be in 1..={}, got {d}", PRIMES.len()),
                ));
            }
        }
        if self.seeds.is_empty() {
            return Err(config_err("seeds", "at least one seed is required"));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(config_err("seeds", "seeds must be distinct"));
        }
        match &self.target {
            Target::Process { process } => {
                process.kernel.validate().map_err(|e| config_err("target.process.kernel", e))?;
                if self.generator != GeneratorKind::Process {
                    return Err(config_err("generator", "a process target needs generator = \"process\""));
                }
            }
            Target::Elliptic { k, f } => {
                k.kernel.validate().map_err(|e| config_err("target.k.kernel", e))?;
                f.kernel.validate().map_err(|e| config_err("target.f.kernel", e))?;
                if self.generator != GeneratorKind::Physics {
                    return Err(config_err("generator", "an elliptic target needs generator = \"physics\""));
                }
            }
        }
        if self.groups.is_empty() {
            return Err(config_err("groups", "at least one group is required"));
        }
        for (g, group) in self.groups.iter().enumerate() {
            let layout = self.layout(g)?;
            if self.generator == GeneratorKind::Process && !(layout.b.is_empty() && layout.k.is_empty() && layout.u.is_empty()) {
                return Err(config_err(
                    &format!("groups[{g}].sensors"),
                    "process targets are read through `f` sensors only",
                ));
            }
            if group.snapshots < 2 {
                return Err(config_err(&format!("groups[{g}].snapshots"), "need at least 2 snapshots"));
            }
            if group.critic_width == 0 {
                return Err(config_err(&format!("groups[{g}].critic_width"), "must be positive"));
            }
            if let Some(c) = group.constant {
                if !c.is_finite() {
                    return Err(config_err(&format!("groups[{g}].constant"), "must be finite"));
                }
            }
        }
        if self.network.generator_width == 0 {
            return Err(config_err("network.generator_width", "must be positive"));
        }
        self.train
            .to_train_config(0)
            .validate(self.groups.len())
            .map_err(|e| config_err("train", e))?;
        let e = &self.eval;
        if e.grid_points < 3 {
            return Err(config_err("eval.grid_points", "need at least 3 points"));
        }
        if e.paths < 2 || e.reference_paths < 2 {
            return Err(config_err("eval", "paths and reference_paths must be at least 2"));
        }
        if e.w1_snapshots == 0 || e.w1_batches == 0 {
            return Err(config_err("eval", "w1_snapshots and w1_batches must be positive"));
        }
        if e.baseline_pairs == 0 || e.baseline_sets < 2 {
            return Err(config_err("eval", "baseline_pairs must be positive and baseline_sets at least 2"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical (key-sorted, compact) JSON form.
    pub fn hash(&self) -> String {
        canonical_hash(&serde_json::to_value(self).expect("config serializes"))
    }

    /// Hash that ignores the step budget, so a run may be resumed with more steps.
    pub fn resume_key(&self) -> String {
        let mut c = self.clone();
        c.train.steps = 0;
        c.hash()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}

/// SHA-256 (hex) of the key-sorted compact JSON form of `value`.
pub fn canonical_hash(value: &serde_json::Value) -> String {
    let mut bytes = Vec::new();
    write_canonical(value, &mut bytes);
    hex::encode(Sha256::digest(&bytes))
}

fn write_canonical(v: &serde_json::Value, out: &mut Vec<u8>) {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            let sorted: BTreeMap<&String, &Value> = map.iter().collect();
            out.push(b'{');
            for (i, (k, v)) in sorted.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                out.extend(serde_json::to_vec(k).expect("string"));
                out.push(b':');
                write_canonical(v, out);
            }
            out.push(b'}');
        }
        Value::Array(items) => {
            out.push(b'[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_canonical(v, out);
            }
            out.push(b']');
        }
        other => out.extend(serde_json::to_vec(other).expect("scalar")),
    }
}

/// Recursively overlays `patch` on `base`; tables merge, everything else is replaced.
fn merge(base: &mut toml::Value, patch: toml::Value) {
    match (base, patch) {
        (toml::Value::Table(b), toml::Value::Table(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses a TOML config. A top-level `preset = "<name>"` key starts from that
/// preset and overlays the remaining keys.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let mut value: toml::Table = text.parse().map_err(|e| CliError::Config(format!("invalid TOML: {e}")))?;
    let doc = match value.remove("preset") {
        Some(toml::Value::String(name)) => {
            let base = presets::preset(&name)?;
            let mut merged = toml::Value::try_from(&base).expect("preset serializes");
            merge(&mut merged, toml::Value::Table(value));
            merged
        }
        Some(_) => return Err(config_err("preset", "must be a string")),
        None => toml::Value::Table(value),
    };
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("{path}: {}", e.into_inner()))
    })?;
    cfg.validate()?;
    Ok(cfg)
}
