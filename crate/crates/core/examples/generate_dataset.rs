//! Simulates a PID-driven pendulum episode, writes it to disk, reads it back,
//! and saves the first few frames as PNGs.
//!
//! ```text
//! cargo run --release --example generate_dataset -- [steps] [seed] [out-dir]
//! ```

use std::path::PathBuf;

use image::GrayImage;
use ode_jepa::pendulum::{generate_dataset, GeneratorConfig, FRAME_SIZE};
use ode_jepa::EpisodeDataset;

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> ode_jepa::Result<()> {
    let steps: usize = arg(1, 2000);
    let seed: u64 = arg(2, 0);
    let out: PathBuf = arg(3, PathBuf::from("target/dataset-example"));

    let ds = generate_dataset(&GeneratorConfig { steps, seed, ..Default::default() })?;
    ds.write_dir(&out)?;
    let back = EpisodeDataset::read_dir(&out)?;
    assert_eq!(back.observations, ds.observations);

    let thetas: Vec<f64> = (0..ds.len()).map(|k| ds.state(k).theta).collect();
    let max_abs = thetas.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    println!("{} steps at dt = {} written to {}", ds.len(), ds.dt(), out.display());
    println!("action mean {:.3}, std {:.3}", ds.manifest.action_mean, ds.manifest.action_std);
    println!("max |theta| {max_abs:.3} rad");
    for k in 0..4.min(ds.len()) {
        let path = out.join(format!("frame_{k}.png"));
        let side = FRAME_SIZE as u32;
        GrayImage::from_raw(side, side, ds.frame(k).to_vec()).expect("frame size").save(&path)?;
        println!("frame {k}: theta {:+.3} -> {}", ds.state(k).theta, path.display());
    }
    Ok(())
}
