//! Short training runs on toy episodes: the latent objective learns, the
//! predictor learns alone against a frozen encoder, phase 2 leaves frozen
//! parameters untouched, and runs are reproducible.

mod common;

use common::small_training;
use jepa_nn::{clip_grad_norm, gradients, Adam, Ctx, RngState, Tensor, Var};
use ode_jepa::model::{BundleMeta, ModelBundle};
use ode_jepa::pendulum::{generate_dataset, GeneratorConfig};
use ode_jepa::sweep::{SweepGrid, SweepPoint};
use ode_jepa::training::{phase1_objective, train_phase1, train_phase2};
use ode_jepa::windows::{sample_batch, Split};
use ode_jepa::{EpisodeDataset, LossWeights, TrainingConfig};
use rand::seq::SliceRandom;

fn toy(steps: usize, seed: u64) -> EpisodeDataset {
    generate_dataset(&GeneratorConfig { steps, seed, ..GeneratorConfig::default() }).unwrap()
}

fn step_invariance(log: &[u8]) -> Vec<f64> {
    std::str::from_utf8(log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| v.get("split").and_then(|s| s.as_str()) == Some("train"))
        .map(|v| v["invariance"].as_f64().unwrap())
        .collect()
}

#[test]
fn invariance_halves_within_200_steps() {
    let ds = toy(500, 21);
    let cfg = small_training(34, 0);
    let mut log = Vec::new();
    let outcome = train_phase1(&cfg, &ds, Some(&mut log)).unwrap();
    let inv = step_invariance(&log);
    assert!(inv.len() >= 200, "only {} steps", inv.len());
    let tail: f64 = inv[190..200].iter().sum::<f64>() / 10.0;
    assert!(tail <= 0.5 * inv[0], "step 1 invariance {:.5}, steps 191-200 mean {tail:.5}", inv[0]);
    assert!(outcome.best_epoch >= 1 && outcome.history.len() == 34);
}

#[test]
fn predictor_learns_alone_against_a_frozen_random_encoder() {
    let ds = toy(400, 22);
    let weights =
        LossWeights { lambda1: 0.0, lambda2: 0.0, lambda3: 1.0, lambda4: 0.0, lambda5: 0.0, ..LossWeights::default() };
    let cfg = TrainingConfig { weights, ..small_training(1, 3) };
    let meta = BundleMeta { dt: 0.1, action_mean: ds.manifest.action_mean, action_std: ds.manifest.action_std, seed: 3, decoder_trained: false };
    let norm = (meta.action_mean, meta.action_std);
    let mut bundle = ModelBundle::init(&cfg.model, meta, &mut RngState::new(3)).unwrap();
    let arch = bundle.architecture().unwrap();
    let split = Split::chronological(ds.len(), 4, 4, 0.9).unwrap();
    let adam = Adam::with_lr(1e-3).unwrap();
    let encoder_before = bundle.encoder.clone();
    let probe = sample_batch(&ds, &split.train[..64], 4, 4, norm).unwrap();
    let eval_inv = |b: &mut ModelBundle| phase1_objective(&arch, b, &probe, &cfg, None).unwrap().terms.invariance.value().item();

    let start = eval_inv(&mut bundle);
    let mut rng = RngState::new(4);
    let mut order = split.train.clone();
    for _ in 0..4 {
        order.shuffle(&mut rng.next_stream());
        for chunk in order.chunks(32) {
            let batch = sample_batch(&ds, chunk, 4, 4, norm).unwrap();
            // the encoder runs in eval mode so its statistics stay frozen too
            let act = bundle.action_encoder.bind(true);
            let pred = bundle.predictor.bind(true);
            let enc = bundle.encoder.bind(false);
            let x = Var::constant(batch.windows.clone());
            let s = arch.encoder.forward(&mut Ctx::eval(&enc, bundle.encoder.buffers()), &x).unwrap();
            let z = arch.action_encoder.forward(&mut Ctx::eval(&act, bundle.action_encoder.buffers()), &Var::constant(batch.actions.clone())).unwrap();
            let n = chunk.len();
            let zs: Vec<Var> = (0..3).map(|j| z.slice_outer(j * n, n).unwrap()).collect();
            let out = arch.dynamics.rollout(&Ctx::eval(&pred, bundle.predictor.buffers()), &s.slice_outer(0, n).unwrap(), &zs, 0.1).unwrap();
            let predicted = Var::concat_outer(&out).unwrap().reshape(&[3, n, 6]).unwrap();
            let targets = s.slice_outer(n, 3 * n).unwrap().reshape(&[3, n, 6]).unwrap();
            let loss = ode_jepa::losses::invariance_loss(&targets, &predicted).unwrap();
            let grads = gradients(&loss, &[&act, &pred]).unwrap();
            bundle.action_encoder.set_grads(&grads[0]).unwrap();
            bundle.predictor.set_grads(&grads[1]).unwrap();
            clip_grad_norm(&mut [&mut bundle.action_encoder, &mut bundle.predictor], 10.0);
            adam.update(&mut bundle.action_encoder);
            adam.update(&mut bundle.predictor);
        }
    }
    let end = eval_inv(&mut bundle);
    assert_eq!(bundle.encoder, encoder_before);
    assert!(end < start, "invariance {start:.6} -> {end:.6}");
}

#[test]
fn phase2_freezes_phase1_parameters_and_beats_the_mean_image() {
    let ds = toy(600, 23);
    let cfg = small_training(3, 5);
    let frozen = train_phase1(&cfg, &ds, None).unwrap().bundle;
    let before = frozen.frozen_fingerprint();
    let cfg2 = TrainingConfig { phase2_epochs: 60, ..cfg };
    let mut log = Vec::new();
    let outcome = train_phase2(&cfg2, &ds, &frozen, Some(&mut log)).unwrap();
    assert_eq!(outcome.bundle.frozen_fingerprint(), before);
    assert_eq!(outcome.bundle.encoder, frozen.encoder);
    assert_eq!(outcome.bundle.predictor, frozen.predictor);
    assert!(outcome.bundle.meta.decoder_trained);
    assert!(
        outcome.val_pixel_mse < outcome.baseline_pixel_mse,
        "decoder {:.5} vs mean image {:.5}",
        outcome.val_pixel_mse,
        outcome.baseline_pixel_mse
    );
    // training loss trends down over the run
    let first = &outcome.history[0];
    let last = outcome.history.last().unwrap();
    assert!(last.train_loss < first.train_loss);
}

#[test]
fn training_is_bitwise_reproducible() {
    let ds = toy(300, 24);
    let cfg = TrainingConfig { max_batches_per_epoch: Some(3), ..small_training(2, 9) };
    let a = train_phase1(&cfg, &ds, None).unwrap();
    let b = train_phase1(&cfg, &ds, None).unwrap();
    assert_eq!(a.bundle.to_bytes().unwrap(), b.bundle.to_bytes().unwrap());
    assert_eq!(a.history, b.history);
    let c = train_phase1(&TrainingConfig { seed: 10, ..cfg }, &ds, None).unwrap();
    assert_ne!(a.bundle.to_bytes().unwrap(), c.bundle.to_bytes().unwrap());
}

#[test]
fn trained_action_encoder_separates_zero_and_unit_actions() {
    let ds = toy(400, 25);
    let cfg = TrainingConfig { max_batches_per_epoch: Some(4), ..small_training(2, 11) };
    let bundle = train_phase1(&cfg, &ds, None).unwrap().bundle;
    let arch = bundle.architecture().unwrap();
    let vars = bundle.action_encoder.bind(false);
    let a = Var::constant(Tensor::new(&[2, 1], vec![0.0, 1.0]).unwrap());
    let z = arch.action_encoder.forward(&mut Ctx::eval(&vars, bundle.action_encoder.buffers()), &a).unwrap();
    let d = z.value().data();
    let dist = (0..6).map(|i| (d[i] - d[6 + i]).powi(2)).sum::<f64>().sqrt();
    assert!(dist > 1e-3, "distance {dist}");
}

#[test]
fn sweep_of_two_points_reports_two_reproducible_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    toy(200, 26).write_dir(&data).unwrap();
    let base = TrainingConfig { max_batches_per_epoch: Some(2), ..small_training(1, 0) };
    let full = LossWeights::default();
    let grid = |out: &str| SweepGrid {
        data: data.clone(),
        out: dir.path().join(out),
        probe_data: None,
        base: base.clone(),
        seeds: vec![1],
        points: vec![
            SweepPoint { name: "full".into(), weights: full.clone() },
            SweepPoint { name: "plain".into(), weights: LossWeights { lambda4: 0.0, lambda5: 0.0, ..full.clone() } },
        ],
    };
    let a = grid("a").run().unwrap();
    assert_eq!(a.rows.len(), 2);
    assert_eq!(a.rows[0].point, "full");
    assert!(dir.path().join("a/plain/seed-1/model.ckpt").exists());
    assert!(dir.path().join("a/report.json").exists());
    let b = grid("b").run().unwrap();
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!(x.val_latent_error_by_step, y.val_latent_error_by_step);
        assert_eq!(x.collapse, y.collapse);
    }
    // small episodes have too few held-out windows for a probe
    assert!(a.rows[0].linear_probe.is_none());
}
