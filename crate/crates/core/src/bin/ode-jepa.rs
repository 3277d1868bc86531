use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ode_jepa::config::TrainingConfig;
use ode_jepa::evaluation::{evaluate, EvalOptions};
use ode_jepa::model::ModelBundle;
use ode_jepa::pendulum::{generate_dataset, GeneratorConfig};
use ode_jepa::sweep::SweepGrid;
use ode_jepa::training::{train_phase1, train_phase2};
use ode_jepa::{EpisodeDataset, Result};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "ode-jepa", version, about = "Latent world models of a pendulum from pixels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a PID-driven pendulum episode and write it as a dataset.
    Generate {
        #[arg(long, default_value_t = 20_000)]
        steps: usize,
        #[arg(long, default_value_t = 0.1)]
        dt: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Phase 1 trains encoders and predictor; phase 2 trains the decoder.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        phase: u8,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Phase-1 checkpoint directory for phase 2 (defaults to --out).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Phase-1 runs over a grid of loss weights and seeds.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
    },
    /// Rollout grid, latent errors, probes and collapse metrics.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        index: Option<usize>,
        /// Also print the report to stdout.
        #[arg(long, value_enum)]
        report: Option<ReportFormat>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { steps, dt, seed, out } => {
            let ds = generate_dataset(&GeneratorConfig { steps, dt, seed, ..GeneratorConfig::default() })?;
            ds.write_dir(&out)?;
            eprintln!("wrote {} steps to {}", ds.len(), out.display());
        }
        Command::Train { phase, config, data, out, checkpoint } => {
            let cfg = match config {
                Some(path) => TrainingConfig::load(&path)?,
                None => TrainingConfig::default(),
            };
            let ds = EpisodeDataset::read_dir(&data)?;
            fs::create_dir_all(&out)?;
            cfg.save(&out.join("config.json"))?;
            if phase == 1 {
                let mut log = fs::File::create(out.join("train_log.jsonl"))?;
                let outcome = train_phase1(&cfg, &ds, Some(&mut log))?;
                outcome.bundle.save(&out)?;
                fs::write(out.join("phase1_history.json"), serde_json::to_string_pretty(&outcome.history)?)?;
                eprintln!("phase 1 done, best epoch {}", outcome.best_epoch);
            } else {
                let frozen = ModelBundle::load(checkpoint.as_ref().unwrap_or(&out))?;
                let mut log = fs::File::create(out.join("decoder_log.jsonl"))?;
                let outcome = train_phase2(&cfg, &ds, &frozen, Some(&mut log))?;
                outcome.bundle.save(&out)?;
                eprintln!(
                    "phase 2 done, val pixel MSE {:.5} (mean image {:.5})",
                    outcome.val_pixel_mse, outcome.baseline_pixel_mse
                );
            }
        }
        Command::Sweep { grid } => {
            let report = SweepGrid::load(&grid)?.run()?;
            eprintln!("{} runs complete", report.rows.len());
        }
        Command::Eval { checkpoint, data, out, index, report } => {
            let bundle = ModelBundle::load(&checkpoint)?;
            let ds = EpisodeDataset::read_dir(&data)?;
            let opts = EvalOptions { index, seed: bundle.meta.seed, ..EvalOptions::default() };
            let rep = evaluate(&bundle, &ds, &opts, Some(&out))?;
            let json = serde_json::to_string_pretty(&rep)?;
            fs::write(out.join("report.json"), &json)?;
            if report.is_some() {
                println!("{json}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
