use std::process::ExitCode;

use clap::Parser;
use ubiq_core::transport::ConnectionSpec;
use ubiq_harness::demo::{loopback_demo, DemoOptions};

/// Two peers in one process exchanging room, spawn, pose, log and latency traffic.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// Use an external relay (host:port or ws://host:port) instead of an in-process one.
    #[arg(long)]
    server: Option<String>,
    /// Deliberately expect the wrong pose; the demo must then fail.
    #[arg(long)]
    sabotage: bool,
}

#[tokio::main]
async fn main() -> ExitCode {
    ubiq_harness::init_tracing();
    let args = Args::parse();
    let server = match args.server.as_deref().map(ConnectionSpec::parse).transpose() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("ubiq-loopback-demo: {e}");
            return ExitCode::from(2);
        }
    };
    match loopback_demo(&DemoOptions { server, sabotage: args.sabotage }).await {
        Ok(checks) => {
            for c in checks {
                println!("ok {c}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("ubiq-loopback-demo: {e}");
            ExitCode::FAILURE
        }
    }
}
