use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;
use ubiq_server::{ServerConfig, ServerError};

/// Rendezvous and relay server for headless social-VR peers.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    #[arg(long, default_value_t = 8001)]
    tcp_port: u16,
    #[arg(long, default_value_t = 8002)]
    ws_port: u16,
    #[arg(long, default_value_t = 60)]
    idle_room_seconds: u64,
    /// JSONL event log. UBIQ_SERVER_LOG takes precedence.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value = "0.0.0.0")]
    bind: String,
    #[arg(long, default_value_t = ubiq_core::wire::MAX_LENGTH)]
    max_message_bytes: usize,
    /// Delay every relayed frame by this many milliseconds.
    #[arg(long, default_value_t = 0)]
    forward_delay_ms: u64,
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt().with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into())).with_writer(std::io::stderr).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(3);
        }
    };
    let log_path = std::env::var_os("UBIQ_SERVER_LOG").map(PathBuf::from).or(args.log);
    let config = ServerConfig {
        bind: args.bind,
        tcp_port: args.tcp_port,
        ws_port: args.ws_port,
        idle_room_seconds: args.idle_room_seconds,
        log_path,
        max_message_bytes: args.max_message_bytes,
        forward_delay: Duration::from_millis(args.forward_delay_ms),
    };
    let server = match ubiq_server::start(config).await {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    println!("tcp {} ws {}", server.tcp_addr(), server.ws_addr());
    shutdown_signal().await;
    server.shutdown().await;
    ExitCode::SUCCESS
}

fn fail(e: ServerError) -> ExitCode {
    eprintln!("ubiq-server: {e}");
    ExitCode::from(e.exit_code() as u8)
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("install SIGTERM handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = tokio::signal::ctrl_c().await;
}
