//! Episode datasets and their on-disk layout.
//!
//! A dataset directory holds `manifest.json` plus flat little-endian arrays:
//! `observations.u8` `[K, 64, 64]`, `actions.f32` `[K]`, `states.f32`
//! `[K, 2]` (θ, θ̇) and `references.f32` `[K]`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{JepaError, Result};
use crate::pendulum::{GeneratorConfig, PendulumState, FRAME_PIXELS, FRAME_SIZE};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub file: String,
    pub dtype: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub steps: usize,
    pub dt: f64,
    pub seed: u64,
    pub frame_height: usize,
    pub frame_width: usize,
    /// Actions enter the model as `(a - action_mean) / action_std`.
    pub action_mean: f64,
    pub action_std: f64,
    pub generator: GeneratorConfig,
    pub arrays: BTreeMap<String, ArraySpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeDataset {
    pub manifest: Manifest,
    pub observations: Vec<u8>,
    pub actions: Vec<f32>,
    pub states: Vec<f32>,
    pub references: Vec<f32>,
}

impl EpisodeDataset {
    pub(crate) fn from_rollout(
        cfg: &GeneratorConfig,
        observations: Vec<u8>,
        actions: &[f64],
        states: &[PendulumState],
        references: &[f64],
    ) -> Self {
        let actions: Vec<f32> = actions.iter().map(|&a| a as f32).collect();
        let (mean, std) = standardization(&actions);
        let k = actions.len();
        let spec = |file: &str, dtype: &str, shape: Vec<usize>| ArraySpec {
            file: file.to_string(),
            dtype: dtype.to_string(),
            shape,
        };
        let arrays = BTreeMap::from([
            ("observations".to_string(), spec("observations.u8", "u8", vec![k, FRAME_SIZE, FRAME_SIZE])),
            ("actions".to_string(), spec("actions.f32", "f32le", vec![k])),
            ("states".to_string(), spec("states.f32", "f32le", vec![k, 2])),
            ("references".to_string(), spec("references.f32", "f32le", vec![k])),
        ]);
        Self {
            manifest: Manifest {
                format_version: DATASET_FORMAT_VERSION,
                steps: k,
                dt: cfg.dt,
                seed: cfg.seed,
                frame_height: FRAME_SIZE,
                frame_width: FRAME_SIZE,
                action_mean: mean,
                action_std: std,
                generator: cfg.clone(),
                arrays,
            },
            observations,
            actions,
            states: states.iter().flat_map(|s| [s.theta as f32, s.theta_dot as f32]).collect(),
            references: references.iter().map(|&r| r as f32).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.manifest.steps
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.steps == 0
    }

    pub fn dt(&self) -> f64 {
        self.manifest.dt
    }

    pub fn frame(&self, k: usize) -> &[u8] {
        &self.observations[k * FRAME_PIXELS..(k + 1) * FRAME_PIXELS]
    }

    pub fn state(&self, k: usize) -> PendulumState {
        PendulumState { theta: f64::from(self.states[2 * k]), theta_dot: f64::from(self.states[2 * k + 1]) }
    }

    pub fn standardized_action(&self, k: usize) -> f64 {
        (f64::from(self.actions[k]) - self.manifest.action_mean) / self.manifest.action_std
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest)?)?;
        fs::write(dir.join("observations.u8"), &self.observations)?;
        fs::write(dir.join("actions.f32"), f32_bytes(&self.actions))?;
        fs::write(dir.join("states.f32"), f32_bytes(&self.states))?;
        fs::write(dir.join("references.f32"), f32_bytes(&self.references))?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        if manifest.format_version != DATASET_FORMAT_VERSION {
            return Err(JepaError::Format(format!(
                "dataset format version {} unsupported (expected {DATASET_FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        if manifest.frame_height != FRAME_SIZE || manifest.frame_width != FRAME_SIZE {
            return Err(JepaError::Format(format!(
                "frames are {}x{}, expected {FRAME_SIZE}x{FRAME_SIZE}",
                manifest.frame_height, manifest.frame_width
            )));
        }
        let k = manifest.steps;
        let observations = fs::read(dir.join("observations.u8"))?;
        let actions = read_f32(&dir.join("actions.f32"))?;
        let states = read_f32(&dir.join("states.f32"))?;
        let references = read_f32(&dir.join("references.f32"))?;
        let lengths = [
            ("observations", observations.len(), k * FRAME_PIXELS),
            ("actions", actions.len(), k),
            ("states", states.len(), 2 * k),
            ("references", references.len(), k),
        ];
        for (name, got, want) in lengths {
            if got != want {
                return Err(JepaError::Format(format!("{name} holds {got} values, manifest implies {want}")));
            }
        }
        if !(manifest.dt > 0.0) {
            return Err(JepaError::Format(format!("non-positive dt {}", manifest.dt)));
        }
        Ok(Self { manifest, observations, actions, states, references })
    }
}

fn standardization(actions: &[f32]) -> (f64, f64) {
    let n = actions.len() as f64;
    let mean = actions.iter().map(|&a| f64::from(a)).sum::<f64>() / n;
    let var = actions.iter().map(|&a| (f64::from(a) - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn read_f32(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(JepaError::Format(format!("{} is not a whole number of f32 values", path.display())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}
