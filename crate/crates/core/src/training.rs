//! Two-phase training.
//!
//! Phase 1 fits the observation encoder, action encoder and latent dynamics
//! jointly on the latent objective. Phase 2 freezes them and fits the decoder
//! on encoder latents of individual frames.

use std::io::Write;

use jepa_nn::{clip_grad_norm, gradients, no_grad, Adam, Bindings, Ctx, ParameterSet, RngState, Tensor, Var};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::TrainingConfig;
use crate::dataset::EpisodeDataset;
use crate::error::{JepaError, Result};
use crate::losses::{self, LatentTerms};
use crate::model::{Architecture, BundleMeta, ModelBundle};
use crate::pendulum::FRAME_PIXELS;
use crate::windows::{sample_batch, SampleBatch, Split};

const VALIDATION_STREAM: u64 = 7;

/// Graph of one phase-1 objective evaluation.
pub struct Phase1Graph {
    pub terms: LatentTerms,
    pub encoder: Bindings,
    pub action_encoder: Bindings,
    pub predictor: Bindings,
}

/// Evaluates the latent objective on `batch`. With `rng` the networks run in
/// training mode with trainable parameters; without it, in eval mode on
/// constants.
pub fn phase1_objective(
    arch: &Architecture,
    bundle: &mut ModelBundle,
    batch: &SampleBatch,
    cfg: &TrainingConfig,
    rng: Option<&mut RngState>,
) -> Result<Phase1Graph> {
    let (past, future) = (cfg.model.past_frames, cfg.model.future_steps);
    let d = cfg.model.latent_dim;
    let n = batch.anchors.len();
    let dt = bundle.meta.dt;
    let w = &cfg.weights;
    let trainable = rng.is_some();
    let enc_vars = bundle.encoder.bind(trainable);
    let act_vars = bundle.action_encoder.bind(trainable);
    let pred_vars = bundle.predictor.bind(trainable);
    let x = Var::constant(batch.windows.clone());
    let a = Var::constant(batch.actions.clone());

    // The contractive term runs in eval mode on the stats from before this
    // step, so the objective does not depend on parameters through buffers.
    let stats = (w.lambda4 > 0.0 && trainable).then(|| bundle.encoder.buffers().clone());
    let (encoded, z, mut rng) = match rng {
        Some(rng) => {
            let e = arch.encoder.forward(&mut Ctx::train(&enc_vars, bundle.encoder.buffers_mut(), rng), &x)?;
            let z = arch
                .action_encoder
                .forward(&mut Ctx::train(&act_vars, bundle.action_encoder.buffers_mut(), rng), &a)?;
            (e, z, Some(rng))
        }
        None => {
            let e = arch.encoder.forward(&mut Ctx::eval(&enc_vars, bundle.encoder.buffers()), &x)?;
            let z = arch.action_encoder.forward(&mut Ctx::eval(&act_vars, bundle.action_encoder.buffers()), &a)?;
            (e, z, None)
        }
    };
    let pred_ctx = Ctx::eval(&pred_vars, bundle.predictor.buffers());

    let s_k = encoded.slice_outer(0, n)?;
    let targets = encoded.slice_outer(n, future * n)?.reshape(&[future, n, d])?;
    let actions: Vec<Var> = (0..future - 1).map(|j| z.slice_outer(j * n, n)).collect::<jepa_nn::Result<_>>()?;
    let predicted = arch.dynamics.rollout(&pred_ctx, &s_k, &actions, dt)?;
    let predicted = Var::concat_outer(&predicted)?.reshape(&[future - 1, n, d])?;

    let invariance = losses::invariance_loss(&targets.slice_outer(0, future - 1)?, &predicted)?;
    let variance = losses::variance_loss(&targets, w.eps1, w.eps2)?;
    let covariance = losses::covariance_loss(&targets)?;

    // one-step predictions from encoder latents s_k .. s_{k+T_f-2}
    let states = encoded.slice_outer(0, (future - 1) * n)?;
    let stepped = arch.dynamics.predict_step(&pred_ctx, &states, &z, dt)?;
    let lipschitz = losses::lipschitz_loss(
        &stepped.reshape(&[future - 1, n, d])?,
        &states.reshape(&[future - 1, n, d])?,
        w.lipschitz_l,
    )?;

    let contractive = if w.lambda4 > 0.0 {
        let pool = future * n;
        let m = w.contractive_subsample.min(pool);
        let rows: Vec<usize> = match rng.as_deref_mut() {
            Some(r) => rand::seq::index::sample(&mut r.next_stream(), pool, m).into_iter().map(|i| n + i).collect(),
            None => (0..m).map(|i| n + i * pool / m).collect(),
        };
        let per = past * batch.windows.shape()[2] * batch.windows.shape()[3];
        let mut probe = Vec::with_capacity(m * per);
        for r in rows {
            probe.extend_from_slice(&batch.windows.data()[r * per..(r + 1) * per]);
        }
        let mut shape = batch.windows.shape().to_vec();
        shape[0] = m;
        let probe = Tensor::new(&shape, probe)?;
        let buffers = stats.as_ref().unwrap_or_else(|| bundle.encoder.buffers());
        let g = losses::contractive_loss(
            |o| {
                arch.encoder
                    .forward(&mut Ctx::eval(&enc_vars, buffers), o)
                    .map_err(|e| match e {
                        JepaError::Nn(e) => e,
                        other => jepa_nn::NnError::Contract(other.to_string()),
                    })
            },
            &probe,
            trainable,
        )?;
        Some(g)
    } else {
        None
    };

    Ok(Phase1Graph {
        terms: LatentTerms { variance, covariance, invariance, contractive, lipschitz },
        encoder: enc_vars,
        action_encoder: act_vars,
        predictor: pred_vars,
    })
}

/// Mean values of the latent terms over some set of batches.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TermMeans {
    pub variance: f64,
    pub covariance: f64,
    pub invariance: f64,
    pub contractive: Option<f64>,
    pub lipschitz: f64,
    pub total: f64,
}

#[derive(Default)]
struct TermAccumulator {
    sums: [f64; 6],
    has_contractive: bool,
    count: usize,
}

impl TermAccumulator {
    fn add(&mut self, terms: &LatentTerms, total: f64) {
        let v = terms.values();
        for (i, (_, x)) in v.iter().enumerate() {
            self.sums[i] += x.unwrap_or(0.0);
        }
        self.has_contractive = v[3].1.is_some();
        self.sums[5] += total;
        self.count += 1;
    }

    fn means(&self) -> TermMeans {
        let c = self.count.max(1) as f64;
        TermMeans {
            variance: self.sums[0] / c,
            covariance: self.sums[1] / c,
            invariance: self.sums[2] / c,
            contractive: self.has_contractive.then(|| self.sums[3] / c),
            lipschitz: self.sums[4] / c,
            total: self.sums[5] / c,
        }
    }
}

#[derive(Serialize)]
struct StepRecord<'a> {
    phase: u8,
    epoch: usize,
    step: usize,
    variance: f64,
    covariance: f64,
    invariance: f64,
    contractive: Option<f64>,
    lipschitz: f64,
    total: f64,
    grad_norm: f64,
    split: &'a str,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub train: TermMeans,
    pub val: TermMeans,
}

#[derive(Clone, Debug)]
pub struct Phase1Outcome {
    /// Parameters at the epoch with the lowest validation total.
    pub bundle: ModelBundle,
    pub best_epoch: usize,
    pub history: Vec<EpochSummary>,
    pub split: Split,
}

fn write_line(log: &mut Option<&mut dyn Write>, value: &impl Serialize) -> Result<()> {
    if let Some(w) = log.as_deref_mut() {
        serde_json::to_writer(&mut *w, value)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn check_finite(terms: &LatentTerms, total: f64, step: usize) -> Result<()> {
    for (name, v) in terms.values() {
        if v.is_some_and(|v| !v.is_finite()) {
            return Err(JepaError::NonFiniteLoss { term: name, step });
        }
    }
    if !total.is_finite() {
        return Err(JepaError::NonFiniteLoss { term: "total", step });
    }
    Ok(())
}

fn batches(anchors: &[usize], size: usize, limit: Option<usize>) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = anchors.chunks(size).filter(|c| c.len() >= 2).collect();
    if let Some(l) = limit {
        out.truncate(l);
    }
    out
}

/// Phase-1 validation means over (at most `max_val_windows`) validation anchors.
pub fn validate_phase1(
    arch: &Architecture,
    bundle: &mut ModelBundle,
    ds: &EpisodeDataset,
    anchors: &[usize],
    cfg: &TrainingConfig,
) -> Result<TermMeans> {
    // The batch-level terms need batches drawn across the split like the
    // training batches, so anchors get a fixed shuffle instead of running
    // consecutively.
    let mut anchors = anchors.to_vec();
    anchors.shuffle(&mut RngState::new(cfg.seed).fork(VALIDATION_STREAM).next_stream());
    if let Some(m) = cfg.max_val_windows {
        anchors.truncate(m.max(2));
    }
    let norm = (bundle.meta.action_mean, bundle.meta.action_std);
    let mut acc = TermAccumulator::default();
    for chunk in batches(&anchors, cfg.batch_size, None) {
        let batch = sample_batch(ds, chunk, cfg.model.past_frames, cfg.model.future_steps, norm)?;
        let g = phase1_objective(arch, bundle, &batch, cfg, None)?;
        let total = g.terms.total(&cfg.weights)?.value().item();
        acc.add(&g.terms, total);
    }
    Ok(acc.means())
}

/// Replaces the encoder's batch-norm running stats with the average batch
/// statistics of the current weights over the first `cfg.bn_calibration_batches`
/// batches of `order`, with dropout off.
///
/// Momentum-averaged stats lag the weights, and eval-mode latents are very
/// sensitive to that lag once the sigmoid head saturates.
pub fn calibrate_encoder(
    arch: &Architecture,
    bundle: &mut ModelBundle,
    ds: &EpisodeDataset,
    order: &[usize],
    cfg: &TrainingConfig,
) -> Result<()> {
    let norm = (bundle.meta.action_mean, bundle.meta.action_std);
    let chunks = batches(order, cfg.batch_size, Some(cfg.bn_calibration_batches));
    let vars = bundle.encoder.bind(false);
    for (i, chunk) in chunks.into_iter().enumerate() {
        let batch = sample_batch(ds, chunk, cfg.model.past_frames, cfg.model.future_steps, norm)?;
        let x = Var::constant(batch.windows);
        let momentum = 1.0 / (i + 1) as f64;
        no_grad(|| arch.encoder.forward(&mut Ctx::calibrate(&vars, bundle.encoder.buffers_mut(), momentum), &x))?;
    }
    Ok(())
}

/// Trains encoders and predictor. Step and epoch records go to `log` as JSON
/// lines.
pub fn train_phase1(cfg: &TrainingConfig, ds: &EpisodeDataset, mut log: Option<&mut dyn Write>) -> Result<Phase1Outcome> {
    cfg.validate()?;
    let dt = cfg.resolve_dt(ds.dt())?;
    let (past, future) = (cfg.model.past_frames, cfg.model.future_steps);
    let split = Split::chronological(ds.len(), past, future, cfg.train_fraction)?;
    let mut rng = RngState::new(cfg.seed);
    let meta = BundleMeta {
        dt,
        action_mean: ds.manifest.action_mean,
        action_std: ds.manifest.action_std,
        seed: cfg.seed,
        decoder_trained: false,
    };
    let mut bundle = ModelBundle::init(&cfg.model, meta, &mut rng.fork(0))?;
    let arch = bundle.architecture()?;
    let adam = Adam::with_lr(cfg.learning_rate)?;
    let norm = (bundle.meta.action_mean, bundle.meta.action_std);
    let mut order = split.train.clone();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelBundle)> = None;
    let mut step = 0;

    for epoch in 1..=cfg.phase1_epochs {
        order.shuffle(&mut rng.next_stream());
        let mut acc = TermAccumulator::default();
        for chunk in batches(&order, cfg.batch_size, cfg.max_batches_per_epoch) {
            step += 1;
            let batch = sample_batch(ds, chunk, past, future, norm)?;
            let g = phase1_objective(&arch, &mut bundle, &batch, cfg, Some(&mut rng))?;
            let total = g.terms.total(&cfg.weights)?;
            let total_value = total.value().item();
            check_finite(&g.terms, total_value, step)?;
            let grads = gradients(&total, &[&g.encoder, &g.action_encoder, &g.predictor])?;
            bundle.encoder.set_grads(&grads[0])?;
            bundle.action_encoder.set_grads(&grads[1])?;
            bundle.predictor.set_grads(&grads[2])?;
            let grad_norm = clip_grad_norm(
                &mut [&mut bundle.encoder, &mut bundle.action_encoder, &mut bundle.predictor],
                cfg.grad_clip,
            );
            adam.update(&mut bundle.encoder);
            adam.update(&mut bundle.action_encoder);
            adam.update(&mut bundle.predictor);
            acc.add(&g.terms, total_value);
            let v = g.terms.values();
            write_line(
                &mut log,
                &StepRecord {
                    phase: 1,
                    epoch,
                    step,
                    variance: v[0].1.unwrap_or(f64::NAN),
                    covariance: v[1].1.unwrap_or(f64::NAN),
                    invariance: v[2].1.unwrap_or(f64::NAN),
                    contractive: v[3].1,
                    lipschitz: v[4].1.unwrap_or(f64::NAN),
                    total: total_value,
                    grad_norm,
                    split: "train",
                },
            )?;
        }
        calibrate_encoder(&arch, &mut bundle, ds, &order, cfg)?;
        let val = validate_phase1(&arch, &mut bundle, ds, &split.val, cfg)?;
        if !val.total.is_finite() {
            return Err(JepaError::NonFiniteLoss { term: "validation total", step });
        }
        let summary = EpochSummary { epoch, train: acc.means(), val };
        write_line(&mut log, &summary)?;
        if best.as_ref().is_none_or(|(b, _, _)| summary.val.total < *b) {
            best = Some((summary.val.total, epoch, bundle.clone()));
        }
        history.push(summary);
    }
    let (_, best_epoch, bundle) = best.ok_or_else(|| JepaError::Config("phase1_epochs must be positive".into()))?;
    Ok(Phase1Outcome { bundle, best_epoch, history, split })
}

/// Eval-mode latents of the windows ending at each frame index in `frames`,
/// as `[len, D]`.
pub fn encode_frames(bundle: &ModelBundle, ds: &EpisodeDataset, frames: &[usize]) -> Result<Tensor> {
    let arch = bundle.architecture()?;
    let past = bundle.config.past_frames;
    let d = bundle.config.latent_dim;
    let vars = bundle.encoder.bind(false);
    let mut out = Vec::with_capacity(frames.len() * d);
    for chunk in frames.chunks(128) {
        let x = Var::constant(crate::windows::window_batch(ds, chunk, past)?);
        let s = arch.encoder.forward(&mut Ctx::eval(&vars, bundle.encoder.buffers()), &x)?;
        out.extend_from_slice(s.value().data());
    }
    Ok(Tensor::new(&[frames.len(), d], out)?)
}

/// Target frames scaled to `[0, 1]`, as `[len, H, W]`.
pub fn frame_targets(ds: &EpisodeDataset, frames: &[usize]) -> Result<Tensor> {
    let side = ds.manifest.frame_height;
    let mut data = Vec::with_capacity(frames.len() * FRAME_PIXELS);
    for &t in frames {
        data.extend(ds.frame(t).iter().map(|&p| f64::from(p) / 255.0));
    }
    Ok(Tensor::new(&[frames.len(), side, side], data)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_mse: f64,
    pub train_cosine: f64,
    /// Mean squared error per pixel on validation frames.
    pub val_pixel_mse: f64,
}

#[derive(Clone, Debug)]
pub struct Phase2Outcome {
    pub bundle: ModelBundle,
    pub best_epoch: usize,
    pub history: Vec<DecoderEpoch>,
    /// Per-pixel validation MSE of the mean training image.
    pub baseline_pixel_mse: f64,
    pub val_pixel_mse: f64,
}

/// Frames whose window lies entirely inside `[lo, hi)`.
pub fn frames_in(lo: usize, hi: usize, past: usize) -> Vec<usize> {
    (lo + past - 1..hi).collect()
}

/// Mean image over the given frames.
pub fn mean_image(ds: &EpisodeDataset, frames: &[usize]) -> Vec<f64> {
    let mut acc = vec![0.0; FRAME_PIXELS];
    for &t in frames {
        for (a, &p) in acc.iter_mut().zip(ds.frame(t)) {
            *a += f64::from(p) / 255.0;
        }
    }
    acc.iter_mut().for_each(|a| *a /= frames.len() as f64);
    acc
}

/// Per-pixel MSE of a fixed image against the given frames.
pub fn constant_image_mse(ds: &EpisodeDataset, frames: &[usize], image: &[f64]) -> f64 {
    let mut sum = 0.0;
    for &t in frames {
        for (m, &p) in image.iter().zip(ds.frame(t)) {
            sum += (f64::from(p) / 255.0 - m).powi(2);
        }
    }
    sum / (frames.len() * FRAME_PIXELS) as f64
}

/// Eval-mode decodings of `latents` (`[M, D]`).
pub fn decode(bundle: &ModelBundle, latents: &Tensor) -> Result<Tensor> {
    let arch = bundle.architecture()?;
    let vars = bundle.decoder.bind(false);
    let out = arch.decoder.forward(&mut Ctx::eval(&vars, bundle.decoder.buffers()), &Var::constant(latents.clone()))?;
    Ok(out.value().clone())
}

fn decoder_val_mse(bundle: &ModelBundle, latents: &Tensor, targets: &Tensor) -> Result<f64> {
    let m = latents.shape()[0];
    let mut sum = 0.0;
    for start in (0..m).step_by(128) {
        let len = 128.min(m - start);
        let dec = decode(bundle, &latents.slice_outer(start, len)?)?;
        let tgt = targets.slice_outer(start, len)?;
        sum += dec.data().iter().zip(tgt.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(sum / targets.numel() as f64)
}

/// Trains the decoder on frozen encoder latents. Fails if any frozen
/// parameter changes.
pub fn train_phase2(
    cfg: &TrainingConfig,
    ds: &EpisodeDataset,
    frozen: &ModelBundle,
    mut log: Option<&mut dyn Write>,
) -> Result<Phase2Outcome> {
    cfg.validate()?;
    cfg.resolve_dt(ds.dt())?;
    let past = frozen.config.past_frames;
    let split = Split::chronological(ds.len(), past, frozen.config.future_steps, cfg.train_fraction)?;
    let before = frozen.frozen_fingerprint();
    let mut bundle = frozen.clone();
    let arch = bundle.architecture()?;
    let mut rng = RngState::new(cfg.seed).fork(2);
    bundle.decoder = arch.decoder.init(&mut rng.fork(0));

    let train_frames = frames_in(0, split.boundary, past);
    let val_frames = frames_in(split.boundary, ds.len(), past);
    let train_latents = encode_frames(&bundle, ds, &train_frames)?;
    let val_latents = encode_frames(&bundle, ds, &val_frames)?;
    let val_targets = frame_targets(ds, &val_frames)?;
    let train_mean = mean_image(ds, &train_frames);
    let baseline = constant_image_mse(ds, &val_frames, &train_mean);
    // start from the mean intensity instead of sigmoid(0) = 0.5 on mostly dark frames
    let level = train_mean.iter().sum::<f64>() / train_mean.len() as f64;
    arch.decoder.set_output_level(&mut bundle.decoder, level)?;

    let adam = Adam::with_lr(cfg.learning_rate)?;
    let d = bundle.config.latent_dim;
    let mut order: Vec<usize> = (0..train_frames.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ParameterSet)> = None;
    for epoch in 1..=cfg.phase2_epochs {
        order.shuffle(&mut rng.next_stream());
        let (mut sum_loss, mut sum_mse, mut sum_cos, mut count) = (0.0, 0.0, 0.0, 0usize);
        for chunk in batches(&order, cfg.batch_size, cfg.max_batches_per_epoch) {
            let mut s = Vec::with_capacity(chunk.len() * d);
            for &i in chunk {
                s.extend_from_slice(&train_latents.data()[i * d..(i + 1) * d]);
            }
            let frames: Vec<usize> = chunk.iter().map(|&i| train_frames[i]).collect();
            let target = Var::constant(frame_targets(ds, &frames)?);
            let vars = bundle.decoder.bind(true);
            let out = arch.decoder.forward(
                &mut Ctx::train(&vars, bundle.decoder.buffers_mut(), &mut rng),
                &Var::constant(Tensor::new(&[chunk.len(), d], s)?),
            )?;
            let (loss, mse, cos) = losses::reconstruction_loss(&target, &out, &cfg.weights)?;
            let lv = loss.value().item();
            if !lv.is_finite() {
                return Err(JepaError::NonFiniteLoss { term: "reconstruction", step: count + 1 });
            }
            let grads = gradients(&loss, &[&vars])?;
            bundle.decoder.set_grads(&grads[0])?;
            clip_grad_norm(&mut [&mut bundle.decoder], cfg.grad_clip);
            adam.update(&mut bundle.decoder);
            sum_loss += lv;
            sum_mse += mse;
            sum_cos += cos;
            count += 1;
        }
        let c = count.max(1) as f64;
        let vars = bundle.decoder.bind(false);
        for (i, chunk) in batches(&order, cfg.batch_size, Some(cfg.bn_calibration_batches)).into_iter().enumerate() {
            let mut s = Vec::with_capacity(chunk.len() * d);
            for &i in chunk {
                s.extend_from_slice(&train_latents.data()[i * d..(i + 1) * d]);
            }
            let x = Var::constant(Tensor::new(&[chunk.len(), d], s)?);
            let momentum = 1.0 / (i + 1) as f64;
            no_grad(|| arch.decoder.forward(&mut Ctx::calibrate(&vars, bundle.decoder.buffers_mut(), momentum), &x))?;
        }
        let val_pixel_mse = decoder_val_mse(&bundle, &val_latents, &val_targets)?;
        let rec = DecoderEpoch {
            epoch,
            train_loss: sum_loss / c,
            train_mse: sum_mse / c,
            train_cosine: sum_cos / c,
            val_pixel_mse,
        };
        write_line(&mut log, &rec)?;
        if best.as_ref().is_none_or(|(b, _, _)| val_pixel_mse < *b) {
            best = Some((val_pixel_mse, epoch, bundle.decoder.clone()));
        }
        history.push(rec);
    }
    let (val_pixel_mse, best_epoch, decoder) =
        best.ok_or_else(|| JepaError::Config("phase2_epochs must be positive".into()))?;
    bundle.decoder = decoder;
    bundle.meta.decoder_trained = true;
    if bundle.frozen_fingerprint() != before {
        return Err(JepaError::Numeric("frozen parameters changed during decoder training".into()));
    }
    Ok(Phase2Outcome { bundle, best_epoch, history, baseline_pixel_mse: baseline, val_pixel_mse })
}
