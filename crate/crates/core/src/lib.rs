//! Joint-embedding world model with a continuous-time latent predictor,
//! trained on rendered frames of a PID-controlled pendulum.
//!
//! The pipeline:
//!
//! 1. [`pendulum::generate_dataset`] simulates and renders an episode.
//! 2. [`training::train_phase1`] fits the observation encoder, action encoder
//!    and latent vector field on the self-supervised latent objective.
//! 3. [`training::train_phase2`] freezes them and fits a decoder for
//!    visualization.
//! 4. [`evaluation::evaluate`] scores rollouts, probes and collapse metrics.
//!
//! ```no_run
//! use ode_jepa::config::TrainingConfig;
//! use ode_jepa::pendulum::{generate_dataset, GeneratorConfig};
//! use ode_jepa::training::train_phase1;
//!
//! let ds = generate_dataset(&GeneratorConfig { steps: 2000, ..Default::default() })?;
//! let outcome = train_phase1(&TrainingConfig::default(), &ds, None)?;
//! println!("best epoch {}", outcome.best_epoch);
//! # Ok::<(), ode_jepa::JepaError>(())
//! ```

pub mod config;
pub mod dataset;
pub mod decoder;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod model;
pub mod pendulum;
pub mod predictor;
pub mod sweep;
pub mod training;
pub mod windows;

pub use config::{Integrator, LossWeights, ModelConfig, TrainingConfig};
pub use dataset::EpisodeDataset;
pub use error::{JepaError, Result};
pub use model::ModelBundle;
