//! Small loss-weight sweep: the full objective against one without the
//! contractive and Lipschitz terms, on a shared dataset and a few seeds.
//!
//! ```text
//! cargo run --release --example loss_sweep -- [steps] [epochs] [seeds] [out-dir]
//! ```

use std::path::PathBuf;

use ode_jepa::pendulum::{generate_dataset, GeneratorConfig};
use ode_jepa::sweep::{SweepGrid, SweepPoint};
use ode_jepa::{LossWeights, ModelConfig, TrainingConfig};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> ode_jepa::Result<()> {
    let steps: usize = arg(1, 600);
    let epochs: usize = arg(2, 2);
    let seeds: u64 = arg(3, 2);
    let out: PathBuf = arg(4, PathBuf::from("target/sweep-example"));

    let data = out.join("data");
    generate_dataset(&GeneratorConfig { steps, seed: 7, ..Default::default() })?.write_dir(&data)?;
    let full = LossWeights::default();
    let grid = SweepGrid {
        data,
        out: out.clone(),
        probe_data: None,
        base: TrainingConfig {
            model: ModelConfig { encoder_channels: vec![8, 16, 32], ..ModelConfig::default() },
            phase1_epochs: epochs,
            ..TrainingConfig::default()
        },
        seeds: (0..seeds).collect(),
        points: vec![
            SweepPoint { name: "full".into(), weights: full.clone() },
            SweepPoint { name: "no-smoothness".into(), weights: LossWeights { lambda4: 0.0, lambda5: 0.0, ..full } },
        ],
    };
    let report = grid.run()?;
    for row in &report.rows {
        println!(
            "{:<14} seed {}  best epoch {}  val invariance {:.5}  latent error by step {:?}",
            row.point, row.seed, row.best_epoch, row.val_invariance, row.val_latent_error_by_step
        );
    }
    println!("report at {}", out.join("report.json").display());
    Ok(())
}
