use std::path::PathBuf;

use jepa_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JepaError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("simulation diverged at step {step}: |theta_dot| = {theta_dot}")]
    SimulationDiverged { step: usize, theta_dot: f64 },
    #[error("dataset too short: {len} steps, need at least {need}")]
    DatasetTooShort { len: usize, need: usize },
    #[error("index {index} out of range ({len} available)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("non-finite {term} loss at step {step}")]
    NonFiniteLoss { term: &'static str, step: usize },
    #[error("missing checkpoint at {}", .0.display())]
    MissingCheckpoint(PathBuf),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, JepaError>;
