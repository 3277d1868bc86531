//! Central finite differences against reverse-mode gradients of the full
//! phase-1 objective (including the second-order contractive path) on a
//! tiny model.
//!
//! ```text
//! cargo run --release --example gradient_check -- [seed]
//! ```

use jepa_nn::{gradients, RngState, Tensor};
use ode_jepa::model::{BundleMeta, ModelBundle};
use ode_jepa::training::phase1_objective;
use ode_jepa::windows::SampleBatch;
use ode_jepa::{LossWeights, ModelConfig, TrainingConfig};
use rand::Rng;

fn main() -> ode_jepa::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let model = ModelConfig {
        latent_dim: 3,
        image_size: 8,
        encoder_channels: vec![2, 2, 2],
        action_hidden: 4,
        action_blocks: 1,
        predictor_hidden: 5,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let cfg = TrainingConfig {
        model: model.clone(),
        weights: LossWeights { contractive_subsample: 2, ..LossWeights::default() },
        ..TrainingConfig::default()
    };
    let meta = BundleMeta { dt: 0.1, action_mean: 0.0, action_std: 1.0, seed, decoder_trained: false };
    let mut init = RngState::new(seed);
    let mut bundle = ModelBundle::init(&model, meta, &mut init)?;
    // the predictor's output layer starts at zero; move it off that point
    let mut stream = init.next_stream();
    for (_, p) in bundle.predictor.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v += stream.random_range(-0.3..0.3));
    }

    let n = 4;
    let (past, future) = (model.past_frames, model.future_steps);
    let batch = SampleBatch {
        anchors: (0..n).collect(),
        windows: Tensor::from_fn(&[(future + 1) * n, past, 8, 8], |_| stream.random::<f64>()),
        actions: Tensor::from_fn(&[(future - 1) * n, 1], |_| stream.random_range(-1.0..1.0)),
    };
    let arch = bundle.architecture()?;
    let objective = |b: &ModelBundle| -> ode_jepa::Result<f64> {
        let mut b = b.clone();
        let g = phase1_objective(&arch, &mut b, &batch, &cfg, Some(&mut RngState::new(99)))?;
        Ok(g.terms.total(&cfg.weights)?.value().item())
    };

    let mut scratch = bundle.clone();
    let g = phase1_objective(&arch, &mut scratch, &batch, &cfg, Some(&mut RngState::new(99)))?;
    let total = g.terms.total(&cfg.weights)?;
    let grads = gradients(&total, &[&g.encoder, &g.action_encoder, &g.predictor])?;
    println!("objective {:.6}", total.value().item());

    let h = 1e-5;
    let mut worst = 0.0f64;
    for (group, grads) in grads.iter().enumerate() {
        for (name, grad) in grads {
            let j = grad.numel() / 2;
            let eval = |delta: f64| -> ode_jepa::Result<f64> {
                let mut b = bundle.clone();
                let set = [&mut b.encoder, &mut b.action_encoder, &mut b.predictor];
                let set = set.into_iter().nth(group).expect("three groups");
                set.get_mut(name)?.value.data_mut()[j] += delta;
                objective(&b)
            };
            let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
            let ad = grad.data()[j];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
            println!("{name:<18} autodiff {ad:+.6e}  finite diff {fd:+.6e}  rel err {rel:.2e}");
        }
    }
    println!("worst relative error {worst:.2e}");
    Ok(())
}
