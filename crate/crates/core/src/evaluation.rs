//! Rollout visualization, latent prediction error, collapse diagnostics and
//! probes of the latent space against the true pendulum state.

use std::path::Path;

use image::GrayImage;
use jepa_nn::{Adam, Ctx, ParameterSet, RngState, Tensor, Var};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::EpisodeDataset;
use crate::error::{JepaError, Result};
use crate::model::ModelBundle;
use crate::training::{constant_image_mse, decode, encode_frames, frames_in, mean_image};
use crate::windows::{anchor_range, sample_batch, Split};

/// Minimum held-out rows for a probe score.
pub const MIN_PROBE_WINDOWS: usize = 1000;

/// Encoder latents of the future windows and their predicted counterparts.
#[derive(Clone, Debug)]
pub struct LatentRollout {
    /// `[T_f + 1, N, D]`: anchor latent then the encoded future windows.
    pub encoded: Tensor,
    /// `[T_f - 1, N, D]`: predictions for steps `1 .. T_f - 1`.
    pub predicted: Tensor,
}

/// Eval-mode encoding and rollout for samples at `anchors`.
pub fn latent_rollout(bundle: &ModelBundle, ds: &EpisodeDataset, anchors: &[usize]) -> Result<LatentRollout> {
    let cfg = &bundle.config;
    let (past, future, d) = (cfg.past_frames, cfg.future_steps, cfg.latent_dim);
    let n = anchors.len();
    let batch = sample_batch(ds, anchors, past, future, (bundle.meta.action_mean, bundle.meta.action_std))?;
    let arch = bundle.architecture()?;
    let (ev, av, pv) = (bundle.encoder.bind(false), bundle.action_encoder.bind(false), bundle.predictor.bind(false));
    let encoded =
        arch.encoder.forward(&mut Ctx::eval(&ev, bundle.encoder.buffers()), &Var::constant(batch.windows))?;
    let z = arch
        .action_encoder
        .forward(&mut Ctx::eval(&av, bundle.action_encoder.buffers()), &Var::constant(batch.actions))?;
    let actions: Vec<Var> = (0..future - 1).map(|j| z.slice_outer(j * n, n)).collect::<jepa_nn::Result<_>>()?;
    let pctx = Ctx::eval(&pv, bundle.predictor.buffers());
    let predicted = arch.dynamics.rollout(&pctx, &encoded.slice_outer(0, n)?, &actions, bundle.meta.dt)?;
    let predicted = Var::concat_outer(&predicted)?;
    Ok(LatentRollout {
        encoded: encoded.value().reshape(&[future + 1, n, d])?,
        predicted: predicted.value().reshape(&[future - 1, n, d])?,
    })
}

/// Mean over anchors of `‖s_{k+j} - s̃_{k+j}‖₂` for `j = 1 .. T_f - 1`.
pub fn latent_error_by_step(bundle: &ModelBundle, ds: &EpisodeDataset, anchors: &[usize]) -> Result<Vec<f64>> {
    let steps = bundle.config.future_steps - 1;
    let d = bundle.config.latent_dim;
    let mut sums = vec![0.0; steps];
    let mut count = 0usize;
    for chunk in anchors.chunks(64) {
        let r = latent_rollout(bundle, ds, chunk)?;
        let n = chunk.len();
        for (j, sum) in sums.iter_mut().enumerate() {
            let target = &r.encoded.data()[(j + 1) * n * d..(j + 2) * n * d];
            let pred = &r.predicted.data()[j * n * d..(j + 1) * n * d];
            for (t, p) in target.chunks(d).zip(pred.chunks(d)) {
                *sum += t.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            }
        }
        count += n;
    }
    if count == 0 {
        return Err(JepaError::DatasetTooShort { len: ds.len(), need: bundle.config.past_frames + bundle.config.future_steps + 1 });
    }
    Ok(sums.into_iter().map(|s| s / count as f64).collect())
}

/// One anchor's rollout: ground-truth frames, decodings of encoder latents and
/// of predicted latents, and the per-step latent error.
#[derive(Clone, Debug)]
pub struct RolloutEval {
    pub anchor: usize,
    pub latent_error: Vec<f64>,
    /// `[T_f - 1, H, W]` for steps `k + 1 .. k + T_f - 1`.
    pub truth: Tensor,
    pub from_encoder: Tensor,
    pub from_predictor: Tensor,
}

pub fn rollout_eval(bundle: &ModelBundle, ds: &EpisodeDataset, anchor: usize) -> Result<RolloutEval> {
    let cfg = &bundle.config;
    let range = anchor_range(ds.len(), cfg.past_frames, cfg.future_steps)?;
    if !range.contains(&anchor) {
        return Err(JepaError::IndexOutOfRange { index: anchor, len: range.end });
    }
    let (future, d) = (cfg.future_steps, cfg.latent_dim);
    let r = latent_rollout(bundle, ds, &[anchor])?;
    let encoded = r.encoded.slice_outer(1, future - 1)?.reshape(&[future - 1, d])?;
    let predicted = r.predicted.reshape(&[future - 1, d])?;
    let latent_error = encoded
        .data()
        .chunks(d)
        .zip(predicted.data().chunks(d))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
        .collect();
    let frames: Vec<usize> = (anchor + 1..anchor + future).collect();
    Ok(RolloutEval {
        anchor,
        latent_error,
        truth: crate::training::frame_targets(ds, &frames)?,
        from_encoder: decode(bundle, &encoded)?,
        from_predictor: decode(bundle, &predicted)?,
    })
}

const GAP: u32 = 2;

impl RolloutEval {
    /// Rows: ground truth, decoded encoder latents, decoded predictions.
    /// Columns: time steps.
    pub fn grid(&self) -> GrayImage {
        let shape = self.truth.shape();
        let (cols, h, w) = (shape[0] as u32, shape[1] as u32, shape[2] as u32);
        let width = cols * w + (cols - 1) * GAP;
        let height = 3 * h + 2 * GAP;
        let mut img = GrayImage::from_pixel(width, height, image::Luma([96]));
        for (row, t) in [&self.truth, &self.from_encoder, &self.from_predictor].into_iter().enumerate() {
            for c in 0..cols {
                let frame = &t.data()[(c * h * w) as usize..((c + 1) * h * w) as usize];
                for y in 0..h {
                    for x in 0..w {
                        let v = (frame[(y * w + x) as usize].clamp(0.0, 1.0) * 255.0).round() as u8;
                        img.put_pixel(c * (w + GAP) + x, row as u32 * (h + GAP) + y, image::Luma([v]));
                    }
                }
            }
        }
        img
    }

    pub fn save_grid(&self, path: &Path) -> Result<()> {
        self.grid().save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

/// Per-dimension spread and cross-dimension correlation of a latent set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseMetrics {
    /// Sample standard deviation of each latent coordinate.
    pub per_dim_std: Vec<f64>,
    /// Frobenius norm of the off-diagonal part of the sample covariance.
    pub offdiag_cov_norm: f64,
}

/// Collapse diagnostics for `latents[M, D]`, `M ≥ 2`.
pub fn collapse_metrics(latents: &Tensor) -> Result<CollapseMetrics> {
    let (m, d) = match *latents.shape() {
        [m, d] if m >= 2 => (m, d),
        ref s => return Err(JepaError::Config(format!("collapse metrics need [M >= 2, D] latents, got {s:?}"))),
    };
    // shifting by the first row keeps constant columns exactly zero
    let raw = latents.data();
    let x = DMatrix::from_fn(m, d, |i, j| raw[i * d + j] - raw[j]);
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(m, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (m - 1) as f64;
    let per_dim_std = (0..d).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    let off: f64 = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| cov[(i, j)].powi(2)).sum();
    Ok(CollapseMetrics { per_dim_std, offdiag_cov_norm: off.sqrt() })
}

pub const PROBE_TARGETS: [&str; 3] = ["sin_theta", "cos_theta", "theta_dot"];

/// `(sin θ, cos θ, θ̇)` at each frame, `[M, 3]`.
pub fn probe_targets(ds: &EpisodeDataset, frames: &[usize]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(frames.len() * 3);
    for &t in frames {
        let s = ds.state(t);
        data.extend_from_slice(&[s.theta.sin(), s.theta.cos(), s.theta_dot]);
    }
    Ok(Tensor::new(&[frames.len(), 3], data)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Held-out R² per target, in [`PROBE_TARGETS`] order.
    pub r2: Vec<f64>,
    pub held_out: usize,
    /// The fitting design matrix had fewer independent columns than inputs.
    pub rank_deficient: bool,
}

impl ProbeReport {
    /// R² clipped at -1 for display.
    pub fn display_r2(&self) -> Vec<f64> {
        self.r2.iter().map(|r| r.max(-1.0)).collect()
    }
}

fn as_matrix(t: &Tensor) -> Result<DMatrix<f64>> {
    match *t.shape() {
        [m, d] => Ok(DMatrix::from_row_slice(m, d, t.data())),
        ref s => Err(JepaError::Config(format!("expected a 2-D table, got {s:?}"))),
    }
}

/// `1 - SS_res / SS_tot` per column.
pub fn r_squared(truth: &DMatrix<f64>, pred: &DMatrix<f64>) -> Vec<f64> {
    (0..truth.ncols())
        .map(|j| {
            let y = truth.column(j);
            let mean = y.mean();
            let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
            let ss_res: f64 = y.iter().zip(pred.column(j).iter()).map(|(a, b)| (a - b).powi(2)).sum();
            if ss_tot > 0.0 {
                1.0 - ss_res / ss_tot
            } else if ss_res == 0.0 {
                1.0
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

fn check_probe_sizes(train_x: &Tensor, train_y: &Tensor, test_x: &Tensor, test_y: &Tensor) -> Result<()> {
    let rows = |t: &Tensor| t.shape().first().copied().unwrap_or(0);
    if rows(train_x) != rows(train_y) || rows(test_x) != rows(test_y) {
        return Err(JepaError::Config("probe inputs and targets differ in row count".into()));
    }
    if rows(test_x) < MIN_PROBE_WINDOWS {
        return Err(JepaError::DatasetTooShort { len: rows(test_x), need: MIN_PROBE_WINDOWS });
    }
    Ok(())
}

fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(x.ncols(), 1.0)
}

/// Least-squares affine map from latents to targets, scored on held-out rows.
pub fn linear_probe(train_x: &Tensor, train_y: &Tensor, test_x: &Tensor, test_y: &Tensor) -> Result<ProbeReport> {
    check_probe_sizes(train_x, train_y, test_x, test_y)?;
    let a = with_intercept(&as_matrix(train_x)?);
    let y = as_matrix(train_y)?;
    let svd = a.clone().svd(true, true);
    let tol = 1e-10 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    let rank = svd.rank(tol);
    let coef = svd.solve(&y, tol).map_err(|e| JepaError::Numeric(format!("probe solve failed: {e}")))?;
    let pred = with_intercept(&as_matrix(test_x)?) * coef;
    Ok(ProbeReport {
        r2: r_squared(&as_matrix(test_y)?, &pred),
        held_out: test_x.shape()[0],
        rank_deficient: rank < a.ncols(),
    })
}

/// One-hidden-layer MLP probe (ELU, standardized targets, full-batch Adam).
/// An upper-bound reference for the linear probe.
pub fn mlp_probe(
    train_x: &Tensor,
    train_y: &Tensor,
    test_x: &Tensor,
    test_y: &Tensor,
    hidden: usize,
    iterations: usize,
    seed: u64,
) -> Result<ProbeReport> {
    use jepa_nn::layers::Linear;
    check_probe_sizes(train_x, train_y, test_x, test_y)?;
    let (d, k) = (train_x.shape()[1], train_y.shape()[1]);
    let y = as_matrix(train_y)?;
    let mean: Vec<f64> = (0..k).map(|j| y.column(j).mean()).collect();
    let std: Vec<f64> = (0..k)
        .map(|j| {
            let s = y.column(j).variance().sqrt();
            if s > 1e-12 { s } else { 1.0 }
        })
        .collect();
    let standardized = Tensor::from_fn(train_y.shape(), |i| (train_y.data()[i] - mean[i % k]) / std[i % k]);
    let l1 = Linear::new("l1", d, hidden);
    let l2 = Linear::new("l2", hidden, k);
    let mut ps = ParameterSet::new();
    let mut rng = RngState::new(seed);
    l1.init(&mut ps, &mut rng);
    l2.init(&mut ps, &mut rng);
    let adam = Adam::with_lr(1e-2)?;
    let forward = |ps: &ParameterSet, x: &Tensor, trainable: bool| -> Result<(Var, jepa_nn::Bindings)> {
        let vars = ps.bind(trainable);
        let ctx = Ctx::eval(&vars, ps.buffers());
        let h = l1.forward(&ctx, &Var::constant(x.clone()))?.elu();
        Ok((l2.forward(&ctx, &h)?, vars))
    };
    let target = Var::constant(standardized);
    for _ in 0..iterations {
        let (out, vars) = forward(&ps, train_x, true)?;
        let loss = out.sub(&target)?.square().mean();
        let g = jepa_nn::gradients(&loss, &[&vars])?;
        ps.set_grads(&g[0])?;
        adam.update(&mut ps);
    }
    let (out, _) = forward(&ps, test_x, false)?;
    let pred = DMatrix::from_fn(test_x.shape()[0], k, |i, j| out.value().data()[i * k + j] * std[j] + mean[j]);
    Ok(ProbeReport { r2: r_squared(&as_matrix(test_y)?, &pred), held_out: test_x.shape()[0], rank_deficient: false })
}

/// Latents and probe targets at the given frames.
pub fn probe_table(bundle: &ModelBundle, ds: &EpisodeDataset, frames: &[usize]) -> Result<(Tensor, Tensor)> {
    Ok((encode_frames(bundle, ds, frames)?, probe_targets(ds, frames)?))
}

/// Linear probe fit on the training windows of `ds` and scored on `held_out`
/// (every window) when given, otherwise on the validation windows of `ds`.
/// `None` when the scored set is smaller than [`MIN_PROBE_WINDOWS`].
pub fn heldout_linear_probe(
    bundle: &ModelBundle,
    ds: &EpisodeDataset,
    split: &Split,
    held_out: Option<&EpisodeDataset>,
) -> Result<Option<ProbeReport>> {
    let cfg = &bundle.config;
    let (test_ds, frames): (&EpisodeDataset, Vec<usize>) = match held_out {
        Some(h) => (h, anchor_range(h.len(), cfg.past_frames, cfg.future_steps)?.collect()),
        None => (ds, split.val.clone()),
    };
    if frames.len() < MIN_PROBE_WINDOWS {
        return Ok(None);
    }
    let (tx, ty) = probe_table(bundle, ds, &split.train)?;
    let (vx, vy) = probe_table(bundle, test_ds, &frames)?;
    Ok(Some(linear_probe(&tx, &ty, &vx, &vy)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderMetrics {
    pub val_pixel_mse: f64,
    pub mean_image_pixel_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub anchor: usize,
    pub anchor_latent_error: Vec<f64>,
    pub val_windows: usize,
    pub val_latent_error_by_step: Vec<f64>,
    pub collapse: CollapseMetrics,
    /// `None` when fewer than [`MIN_PROBE_WINDOWS`] held-out windows exist.
    pub linear_probe: Option<ProbeReport>,
    pub mlp_probe: Option<ProbeReport>,
    pub decoder: Option<DecoderMetrics>,
    pub grid_file: Option<String>,
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    /// Anchor for the rollout grid; defaults to the first validation anchor.
    pub index: Option<usize>,
    pub train_fraction: f64,
    pub mlp_hidden: usize,
    pub mlp_iterations: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { index: None, train_fraction: 0.9, mlp_hidden: 64, mlp_iterations: 500, seed: 0 }
    }
}

/// Full evaluation on the validation part of `ds`. Writes the rollout grid
/// to `out_dir/rollout_<k>.png` when a directory is given and a decoder has
/// been trained.
pub fn evaluate(
    bundle: &ModelBundle,
    ds: &EpisodeDataset,
    opts: &EvalOptions,
    out_dir: Option<&Path>,
) -> Result<EvalReport> {
    let cfg = &bundle.config;
    let split = Split::chronological(ds.len(), cfg.past_frames, cfg.future_steps, opts.train_fraction)?;
    let anchor = opts.index.unwrap_or(split.val[0]);
    let val_latents = encode_frames(bundle, ds, &split.val)?;
    let collapse = collapse_metrics(&val_latents)?;
    let val_latent_error_by_step = latent_error_by_step(bundle, ds, &split.val)?;

    let (linear_probe, mlp_probe) = if split.val.len() >= MIN_PROBE_WINDOWS {
        let (tx, ty) = probe_table(bundle, ds, &split.train)?;
        let vy = probe_targets(ds, &split.val)?;
        (
            Some(linear_probe(&tx, &ty, &val_latents, &vy)?),
            Some(mlp_probe(&tx, &ty, &val_latents, &vy, opts.mlp_hidden, opts.mlp_iterations, opts.seed)?),
        )
    } else {
        (None, None)
    };

    let rollout = rollout_eval(bundle, ds, anchor)?;
    let (decoder, grid_file) = if bundle.meta.decoder_trained {
        let train_frames = frames_in(0, split.boundary, cfg.past_frames);
        let val_frames = frames_in(split.boundary, ds.len(), cfg.past_frames);
        let latents = encode_frames(bundle, ds, &val_frames)?;
        let mut sum = 0.0;
        for start in (0..val_frames.len()).step_by(128) {
            let len = 128.min(val_frames.len() - start);
            let dec = decode(bundle, &latents.slice_outer(start, len)?)?;
            let truth = crate::training::frame_targets(ds, &val_frames[start..start + len])?;
            sum += dec.data().iter().zip(truth.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        let metrics = DecoderMetrics {
            val_pixel_mse: sum / (val_frames.len() * ds.frame(0).len()) as f64,
            mean_image_pixel_mse: constant_image_mse(ds, &val_frames, &mean_image(ds, &train_frames)),
        };
        let grid = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let name = format!("rollout_{anchor}.png");
                rollout.save_grid(&dir.join(&name))?;
                Some(name)
            }
            None => None,
        };
        (Some(metrics), grid)
    } else {
        (None, None)
    };

    Ok(EvalReport {
        anchor,
        anchor_latent_error: rollout.latent_error,
        val_windows: split.val.len(),
        val_latent_error_by_step,
        collapse,
        linear_probe,
        mlp_probe,
        decoder,
        grid_file,
    })
}
