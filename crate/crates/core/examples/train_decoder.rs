//! Phase 2: fits the decoder on frozen latents from a phase-1 checkpoint and
//! confirms the frozen parameters are untouched.
//!
//! ```text
//! cargo run --release --example train_phase1 -- 2000 20 0 target/phase1-example
//! cargo run --release --example train_decoder -- target/phase1-example [epochs] [steps] [seed]
//! ```

use std::path::PathBuf;

use ode_jepa::pendulum::{generate_dataset, GeneratorConfig};
use ode_jepa::training::train_phase2;
use ode_jepa::{ModelBundle, TrainingConfig};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> ode_jepa::Result<()> {
    let dir: PathBuf = arg(1, PathBuf::from("target/phase1-example"));
    let epochs: usize = arg(2, 10);
    let steps: usize = arg(3, 2000);
    let seed: u64 = arg(4, 0);

    let frozen = ModelBundle::load(&dir)?;
    // same episode the phase-1 example trained on
    let ds = generate_dataset(&GeneratorConfig { steps, seed: 1000 + seed, ..Default::default() })?;
    let cfg = TrainingConfig { model: frozen.config.clone(), phase2_epochs: epochs, seed, ..TrainingConfig::default() };
    let outcome = train_phase2(&cfg, &ds, &frozen, None)?;
    for e in &outcome.history {
        println!(
            "epoch {:>3}  train loss {:>10.4}  cosine {:.4}  val pixel mse {:.5}",
            e.epoch, e.train_loss, e.train_cosine, e.val_pixel_mse
        );
    }
    println!(
        "best epoch {}: val pixel mse {:.5} vs mean-image baseline {:.5}",
        outcome.best_epoch, outcome.val_pixel_mse, outcome.baseline_pixel_mse
    );
    assert_eq!(outcome.bundle.frozen_fingerprint(), frozen.frozen_fingerprint());
    println!("encoder, action encoder and predictor checksums unchanged");
    outcome.bundle.save(&dir)?;
    Ok(())
}
