use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use ubiq_harness::boids::{run_boids, BoidsConfig};

/// Distributed boids over in-process peers, checking that every peer holds the same flock.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    #[arg(long, default_value_t = 3)]
    peers: usize,
    #[arg(long, default_value_t = 10)]
    boids_per_peer: usize,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write per-step digest, velocity variance and centroid as CSV.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn main() -> anyhow::Result<()> {
    ubiq_harness::init_tracing();
    let args = Args::parse();
    anyhow::ensure!(args.peers > 0 && args.boids_per_peer > 0, "peers and boids per peer must be positive");
    let config = BoidsConfig { peers: args.peers, boids_per_peer: args.boids_per_peer, steps: args.steps, seed: args.seed, ..BoidsConfig::default() };
    let run = run_boids(&config)?;
    if let Some(path) = &args.report {
        std::fs::write(path, run.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    let last = run.steps.last().context("no steps recorded")?;
    println!("steps {} digest {:016x} velocity_variance {:.6e}", last.step, last.digest, last.velocity_variance);
    match run.first_divergence {
        None => {
            println!("consistent: all {} peers held identical flocks at every step", config.peers);
            Ok(())
        }
        Some(step) => anyhow::bail!("peers diverged at step {step}"),
    }
}
