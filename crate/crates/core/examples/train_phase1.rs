//! Phase-1 training on a freshly simulated episode, followed by collapse
//! metrics and a linear probe scored on an independent episode.
//!
//! ```text
//! cargo run --release --example train_phase1 -- [steps] [epochs] [seed] [out-dir] [config.json]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use ode_jepa::evaluation::{collapse_metrics, heldout_linear_probe, latent_error_by_step, PROBE_TARGETS};
use ode_jepa::pendulum::{generate_dataset, GeneratorConfig};
use ode_jepa::training::{encode_frames, train_phase1};
use ode_jepa::TrainingConfig;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> ode_jepa::Result<()> {
    let steps: usize = arg(1, 2000);
    let epochs: usize = arg(2, 20);
    let seed: u64 = arg(3, 0);
    let out: PathBuf = arg(4, PathBuf::from("target/phase1-example"));

    let ds = generate_dataset(&GeneratorConfig { steps, seed: 1000 + seed, ..Default::default() })?;
    let held_out = generate_dataset(&GeneratorConfig { steps: 2000, seed: 2000 + seed, ..Default::default() })?;
    let base = match std::env::args().nth(5) {
        Some(path) => TrainingConfig::load(std::path::Path::new(&path))?,
        None => TrainingConfig::default(),
    };
    let cfg = TrainingConfig { phase1_epochs: epochs, seed, ..base };

    let start = Instant::now();
    let mut log = std::fs::File::create(std::env::temp_dir().join("phase1-example.jsonl"))?;
    let outcome = train_phase1(&cfg, &ds, Some(&mut log))?;
    println!("trained {epochs} epochs in {:.0} s, best epoch {}", start.elapsed().as_secs_f64(), outcome.best_epoch);
    for e in &outcome.history {
        println!(
            "epoch {:>3}  train total {:>9.4}  val total {:>9.4}  val inv {:.5}  val var {:.3}  val lip {:.5}",
            e.epoch, e.train.total, e.val.total, e.val.invariance, e.val.variance, e.val.lipschitz
        );
    }

    let bundle = &outcome.bundle;
    let latents = encode_frames(bundle, &ds, &outcome.split.val)?;
    let collapse = collapse_metrics(&latents)?;
    println!("val per-dim std: {:?}", collapse.per_dim_std);
    println!("latent error by step: {:?}", latent_error_by_step(bundle, &ds, &outcome.split.val)?);
    if let Some(probe) = heldout_linear_probe(bundle, &ds, &outcome.split, Some(&held_out))? {
        for (name, r2) in PROBE_TARGETS.iter().zip(&probe.r2) {
            println!("linear probe R² {name}: {r2:.3}");
        }
    }
    bundle.save(&out)?;
    println!("checkpoint written to {}", out.display());
    Ok(())
}
