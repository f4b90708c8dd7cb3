use std::path::PathBuf;
use std::time::Duration;

use anyhow::Context;
use clap::Parser;
use ubiq_core::transport::ConnectionSpec;
use ubiq_harness::bots::{run_bots, BotConfig, RoomChoice};

/// A fleet of headless bots streaming poses through a relay.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// Relay address, host:port (TCP) or ws://host:port.
    #[arg(long)]
    server: String,
    /// Three-digit join code, or "new".
    #[arg(long, default_value = "new")]
    room: RoomChoice,
    #[arg(long, default_value_t = 2)]
    bots: usize,
    #[arg(long, default_value_t = 60.0)]
    pose_rate: f64,
    #[arg(long, default_value_t = 84)]
    payload_bytes: usize,
    /// Seconds of pose streaming.
    #[arg(long, default_value_t = 30.0)]
    duration: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for one JSONL event log per bot.
    #[arg(long)]
    log_dir: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    ubiq_harness::init_tracing();
    let args = Args::parse();
    anyhow::ensure!(args.duration >= 0.0 && args.duration.is_finite(), "duration must be non-negative");
    let server = ConnectionSpec::parse(&args.server).with_context(|| format!("bad server address {:?}", args.server))?;
    let config = BotConfig {
        room: args.room,
        pose_rate: args.pose_rate,
        payload_bytes: args.payload_bytes,
        duration: Duration::from_secs_f64(args.duration),
        log_dir: args.log_dir,
        ..BotConfig::new(server, args.bots)
    };
    let summary = run_bots(&config).await?;
    let json = serde_json::to_string_pretty(&summary)?;
    match &args.out {
        Some(path) => std::fs::write(path, &json).with_context(|| format!("writing {}", path.display()))?,
        None => println!("{json}"),
    }
    eprintln!(
        "room {} bots {} sent {} received {} lost {} p50 {:.3} ms p95 {:.3} ms",
        summary.joincode.as_deref().unwrap_or("-"),
        summary.bots,
        summary.sent,
        summary.received,
        summary.lost,
        summary.latency.p50_ms,
        summary.latency.p95_ms
    );
    let failed = summary.per_bot.iter().filter(|b| b.error.is_some()).count();
    anyhow::ensure!(failed == 0, "{failed} bot(s) failed");
    Ok(())
}
