//! Stateless layer primitives on graph variables.

use rand::Rng;

use crate::error::{dim_err, NnError, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;
use crate::var::Var;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// `y[n] = W·x[n] + b` for `x[N, in]`, `W[out, in]`, `b[out]`.
pub fn affine_map(x: &Var, w: &Var, b: &Var) -> Result<Var> {
    match (x.shape(), w.shape(), b.shape()) {
        (&[n, i], &[o, wi], &[bo]) if i == wi && o == bo => {
            debug_assert_eq!(n, x.shape()[0]);
            x.matmul_t(w, false, true)?.add_mid(b)
        }
        (xs, ws, bs) => dim_err(format!("affine_map: incompatible shapes x{xs:?} W{ws:?} b{bs:?}")),
    }
}

/// Adds a per-channel bias `b[C]` to `x[N, C, ...]`.
pub fn add_channel_bias(x: &Var, b: &Var) -> Result<Var> {
    x.add_mid(b)
}

pub fn conv2d(x: &Var, kernels: &Var, stride: usize, padding: usize) -> Result<Var> {
    x.conv2d(kernels, stride, padding)
}

pub fn conv_transpose2d(
    x: &Var,
    kernels: &Var,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<Var> {
    x.conv_transpose2d(kernels, stride, padding, output_padding)
}

pub fn elu(x: &Var) -> Var {
    x.elu()
}

pub fn sigmoid(x: &Var) -> Var {
    x.sigmoid()
}

/// Per-channel running statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Tensor,
    pub var: Tensor,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self { mean: Tensor::zeros(&[channels]), var: Tensor::ones(&[channels]) }
    }
}

/// Normalizes `x[N, C, ...]` per channel (no affine part).
///
/// Train mode uses biased batch statistics and folds the unbiased variance
/// into `stats` with weight `momentum`. Eval mode uses `stats` as constants.
pub fn batch_norm(
    x: &Var,
    mode: Mode,
    stats: Option<&mut RunningStats>,
    running: &RunningStats,
    momentum: f64,
    eps: f64,
) -> Result<Var> {
    let shape = x.shape().to_vec();
    if shape.len() < 2 || shape[1] != running.mean.numel() {
        return dim_err(format!(
            "batch_norm: input {shape:?} does not match {} channels",
            running.mean.numel()
        ));
    }
    match mode {
        Mode::Train => {
            if shape[0] < 2 {
                return Err(NnError::BatchTooSmall { op: "batch_norm", min: 2, got: shape[0] });
            }
            let count = (x.value().numel() / shape[1]) as f64;
            let mean = x.sum_mid()?.scale(1.0 / count);
            let centered = x.add_mid(&mean.neg())?;
            let var = centered.square().sum_mid()?.scale(1.0 / count);
            let inv_std = var.add_scalar(eps).sqrt().recip();
            if let Some(stats) = stats {
                let unbias = count / (count - 1.0);
                stats.mean = stats.mean.zip_map(mean.value(), |r, m| (1.0 - momentum) * r + momentum * m)?;
                stats.var =
                    stats.var.zip_map(var.value(), |r, v| (1.0 - momentum) * r + momentum * v * unbias)?;
            }
            centered.mul_mid(&inv_std)
        }
        Mode::Eval => {
            let shift = Var::constant(running.mean.map(|m| -m));
            let scale = Var::constant(running.var.map(|v| 1.0 / (v + eps).sqrt()));
            x.add_mid(&shift)?.mul_mid(&scale)
        }
    }
}

/// Inverted dropout: zeroes each element with probability `rate` and scales
/// survivors by `1 / (1 - rate)`. Identity in eval mode.
pub fn dropout(x: &Var, rate: f64, mode: Mode, rng: &mut RngState) -> Result<Var> {
    check_dropout_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x.clone());
    }
    let mut stream = rng.next_stream();
    let keep = 1.0 / (1.0 - rate);
    let mask = Tensor::from_fn(x.shape(), |_| if stream.random::<f64>() < rate { 0.0 } else { keep });
    x.mul_const(&mask)
}

pub fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}
