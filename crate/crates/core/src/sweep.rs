//! Phase-1 runs over a grid of loss weights and seeds.

use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::config::{LossWeights, TrainingConfig};
use crate::dataset::EpisodeDataset;
use crate::error::{JepaError, Result};
use crate::evaluation::{collapse_metrics, heldout_linear_probe, latent_error_by_step, CollapseMetrics, ProbeReport};
use crate::training::{encode_frames, train_phase1};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub name: String,
    pub weights: LossWeights,
}

/// Grid file contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub data: PathBuf,
    pub out: PathBuf,
    /// Optional independent episode for scoring probes.
    #[serde(default)]
    pub probe_data: Option<PathBuf>,
    #[serde(default)]
    pub base: TrainingConfig,
    pub seeds: Vec<u64>,
    pub points: Vec<SweepPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: String,
    pub seed: u64,
    pub best_epoch: usize,
    pub val_invariance: f64,
    pub val_latent_error_by_step: Vec<f64>,
    pub collapse: CollapseMetrics,
    pub linear_probe: Option<ProbeReport>,
    pub config_file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepGrid {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let grid: Self = serde_json::from_slice(&fs::read(path)?)?;
        if grid.points.is_empty() || grid.seeds.is_empty() {
            return Err(JepaError::Config("sweep grid needs at least one point and one seed".into()));
        }
        Ok(grid)
    }

    /// Runs every `(point, seed)` pair in order and writes
    /// `out/<point>/seed-<s>/{config.json, model.ckpt}` plus `out/report.json`.
    pub fn run(&self) -> Result<SweepReport> {
        let ds = EpisodeDataset::read_dir(&self.data)?;
        let probe_ds = self.probe_data.as_ref().map(|p| EpisodeDataset::read_dir(p)).transpose()?;
        let mut rows = Vec::new();
        for point in &self.points {
            for &seed in &self.seeds {
                let cfg = TrainingConfig { weights: point.weights.clone(), seed, ..self.base.clone() };
                let dir = self.out.join(&point.name).join(format!("seed-{seed}"));
                fs::create_dir_all(&dir)?;
                cfg.save(&dir.join("config.json"))?;
                let mut log = fs::File::create(dir.join("train_log.jsonl"))?;
                let outcome = train_phase1(&cfg, &ds, Some(&mut log))?;
                outcome.bundle.save(&dir)?;
                let best = &outcome.history[outcome.best_epoch - 1];
                let val_latents = encode_frames(&outcome.bundle, &ds, &outcome.split.val)?;
                rows.push(SweepRow {
                    point: point.name.clone(),
                    seed,
                    best_epoch: outcome.best_epoch,
                    val_invariance: best.val.invariance,
                    val_latent_error_by_step: latent_error_by_step(&outcome.bundle, &ds, &outcome.split.val)?,
                    collapse: collapse_metrics(&val_latents)?,
                    linear_probe: heldout_linear_probe(&outcome.bundle, &ds, &outcome.split, probe_ds.as_ref())?,
                    config_file: dir.join("config.json").display().to_string(),
                });
            }
        }
        let report = SweepReport { rows };
        fs::create_dir_all(&self.out)?;
        fs::write(self.out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
        Ok(report)
    }
}
