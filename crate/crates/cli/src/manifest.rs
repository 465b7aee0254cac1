//! Record of what an experiment directory contains and how long it took.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::workspace::{write_atomic, Workspace};
use crate::{CliError, ExperimentConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps_per_second: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub config_hash: String,
    pub scale: String,
    pub seeds: Vec<u64>,
    pub noise_dims: Vec<usize>,
    /// Relative path -> role (`dataset`, `checkpoint`, `metrics`, ...).
    pub files: BTreeMap<String, String>,
    pub timings: BTreeMap<String, Timing>,
}

impl RunManifest {
    /// The manifest on disk if it belongs to the same config, else a fresh one.
    pub fn load_or_new(ws: &Workspace, cfg: &ExperimentConfig, scale: &str) -> Result<Self, CliError> {
        let hash = cfg.hash();
        if let Ok(text) = fs::read_to_string(ws.manifest()) {
            if let Ok(m) = serde_json::from_str::<RunManifest>(&text) {
                if m.config_hash == hash {
                    return Ok(m);
                }
            }
        }
        Ok(Self {
            experiment: cfg.name.clone(),
            config_hash: hash,
            scale: scale.into(),
            seeds: cfg.seeds.clone(),
            noise_dims: cfg.noise_dims.clone(),
            ..Self::default()
        })
    }

    pub fn add(&mut self, ws: &Workspace, path: &Path, role: &str) {
        self.files.insert(ws.relative(path), role.into());
    }

    pub fn time(&mut self, key: &str, seconds: f64, steps: Option<u64>) {
        self.timings.insert(
            key.into(),
            Timing {
                seconds,
                steps,
                steps_per_second: steps.filter(|_| seconds > 0.0).map(|s| s as f64 / seconds),
            },
        );
    }

    /// Listed files that do not exist under the root.
    pub fn missing(&self, ws: &Workspace) -> Vec<String> {
        self.files.keys().filter(|f| !ws.root().join(f).exists()).cloned().collect()
    }

    pub fn save(&self, ws: &Workspace) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self)?;
        write_atomic(&ws.manifest(), |w| {
            w.write_all(text.as_bytes())?;
            w.write_all(b"\n")
        })?;
        Ok(())
    }
}
