//! Evaluates a checkpoint: latent error per horizon step, collapse metrics,
//! probes, and (with a trained decoder) the truth / encoder / predictor grid.
//!
//! ```text
//! cargo run --release --example evaluate_rollout -- target/phase1-example [steps] [seed] [anchor]
//! ```

use std::path::PathBuf;

use ode_jepa::evaluation::{evaluate, EvalOptions, PROBE_TARGETS};
use ode_jepa::pendulum::{generate_dataset, GeneratorConfig};
use ode_jepa::ModelBundle;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> ode_jepa::Result<()> {
    let dir: PathBuf = arg(1, PathBuf::from("target/phase1-example"));
    let steps: usize = arg(2, 2000);
    let seed: u64 = arg(3, 0);
    let index: Option<usize> = std::env::args().nth(4).and_then(|s| s.parse().ok());

    let bundle = ModelBundle::load(&dir)?;
    let ds = generate_dataset(&GeneratorConfig { steps, seed: 1000 + seed, ..Default::default() })?;
    let report = evaluate(&bundle, &ds, &EvalOptions { index, seed, ..Default::default() }, Some(&dir))?;

    println!("anchor {} latent error by step: {:?}", report.anchor, report.anchor_latent_error);
    println!("{} val windows, mean latent error by step: {:?}", report.val_windows, report.val_latent_error_by_step);
    println!("val per-dim std: {:?}", report.collapse.per_dim_std);
    match (&report.linear_probe, &report.mlp_probe) {
        (Some(lin), Some(mlp)) => {
            for (i, name) in PROBE_TARGETS.iter().enumerate() {
                println!("probe R² {name:<10} linear {:.3}  mlp {:.3}", lin.r2[i], mlp.r2[i]);
            }
        }
        _ => println!("too few validation windows for probes"),
    }
    match (&report.decoder, &report.grid_file) {
        (Some(d), Some(grid)) => println!(
            "decoder pixel mse {:.5} (mean image {:.5}); grid at {}",
            d.val_pixel_mse,
            d.mean_image_pixel_mse,
            dir.join(grid).display()
        ),
        _ => println!("no trained decoder in this checkpoint"),
    }
    Ok(())
}
