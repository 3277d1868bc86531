//! Model, loss and training configuration, loaded from JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{JepaError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    #[default]
    Rk4,
    Euler,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub latent_dim: usize,
    /// Frames stacked into one observation window (T_p).
    pub past_frames: usize,
    /// Encoded future windows per training sample (T_f).
    pub future_steps: usize,
    /// Square input side; each conv block halves it.
    pub image_size: usize,
    pub encoder_channels: Vec<usize>,
    pub action_hidden: usize,
    pub action_blocks: usize,
    pub predictor_hidden: usize,
    pub dropout: f64,
    pub integrator: Integrator,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 6,
            past_frames: 4,
            future_steps: 4,
            image_size: 64,
            encoder_channels: vec![16, 32, 64],
            action_hidden: 128,
            action_blocks: 3,
            predictor_hidden: 128,
            dropout: 0.1,
            integrator: Integrator::Rk4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(JepaError::Config(msg));
        if self.latent_dim == 0 || self.past_frames == 0 {
            return fail("latent_dim and past_frames must be positive".into());
        }
        if self.future_steps < 3 {
            return fail(format!("future_steps must be at least 3, got {}", self.future_steps));
        }
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return fail("encoder_channels must be a non-empty list of positive widths".into());
        }
        let shrink = 1usize << self.encoder_channels.len();
        if self.image_size == 0 || self.image_size % shrink != 0 {
            return fail(format!(
                "image_size {} must be divisible by 2^{} (one halving per conv block)",
                self.image_size,
                self.encoder_channels.len()
            ));
        }
        if self.action_hidden == 0 || self.action_blocks == 0 || self.predictor_hidden == 0 {
            return fail("hidden widths and block counts must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout rate {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Spatial side of the last conv feature map.
    pub fn feature_size(&self) -> usize {
        self.image_size >> self.encoder_channels.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Variance.
    pub lambda1: f64,
    /// Covariance.
    pub lambda2: f64,
    /// Invariance.
    pub lambda3: f64,
    /// Contractive.
    pub lambda4: f64,
    /// Lipschitz.
    pub lambda5: f64,
    /// Reconstruction MSE.
    pub lambda6: f64,
    /// Reconstruction cosine.
    pub lambda7: f64,
    pub eps: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub lipschitz_l: f64,
    /// Windows per batch used for the contractive term.
    pub contractive_subsample: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.1,
            lambda3: 1.0,
            lambda4: 0.1,
            lambda5: 1.0,
            lambda6: 1.0,
            lambda7: 0.5,
            eps: 1e-8,
            eps1: 1e-4,
            eps2: 1e-4,
            lipschitz_l: 1.0,
            contractive_subsample: 8,
        }
    }
}

impl LossWeights {
    pub fn latent(&self) -> [f64; 5] {
        [self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.lambda5]
    }

    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            self.lambda1,
            self.lambda2,
            self.lambda3,
            self.lambda4,
            self.lambda5,
            self.lambda6,
            self.lambda7,
        ];
        if let Some((i, l)) = lambdas.iter().enumerate().find(|(_, l)| !(**l >= 0.0) || !l.is_finite()) {
            return Err(JepaError::Config(format!("lambda{} must be a finite non-negative number, got {l}", i + 1)));
        }
        for (name, v) in [("eps", self.eps), ("eps1", self.eps1), ("eps2", self.eps2), ("lipschitz_l", self.lipschitz_l)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(JepaError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.contractive_subsample == 0 {
            return Err(JepaError::Config("contractive_subsample must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub batch_size: usize,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub train_fraction: f64,
    /// Must equal the dataset sampling interval when given.
    pub dt: Option<f64>,
    /// Stop an epoch after this many batches (smoke runs).
    pub max_batches_per_epoch: Option<usize>,
    /// Validation windows scored per epoch; `None` scores all of them.
    pub max_val_windows: Option<usize>,
    /// Training batches used to recompute batch-norm statistics before each
    /// validation pass; 0 keeps the momentum-averaged running stats.
    pub bn_calibration_batches: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            batch_size: 64,
            phase1_epochs: 50,
            phase2_epochs: 30,
            learning_rate: 1e-3,
            grad_clip: 10.0,
            seed: 0,
            train_fraction: 0.9,
            dt: None,
            max_batches_per_epoch: None,
            max_val_windows: None,
            bn_calibration_batches: 4,
        }
    }
}

impl TrainingConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        if self.batch_size < 2 {
            return Err(JepaError::Config(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(JepaError::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.grad_clip > 0.0) {
            return Err(JepaError::Config(format!("grad_clip must be positive, got {}", self.grad_clip)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(JepaError::Config(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction)));
        }
        Ok(())
    }

    /// Checks the configured step size against a dataset's sampling interval.
    pub fn resolve_dt(&self, dataset_dt: f64) -> Result<f64> {
        match self.dt {
            Some(dt) if (dt - dataset_dt).abs() > 1e-12 => Err(JepaError::Config(format!(
                "config dt {dt} does not match dataset dt {dataset_dt}"
            ))),
            _ => Ok(dataset_dt),
        }
    }
}
