//! Rendezvous and relay server.
//!
//! Accepts peers over TCP and WebSocket. A fresh connection is sandboxed: only
//! messages addressed to the RoomServer are processed. Once it joins a room,
//! everything else it sends is forwarded unchanged to the other members.

mod eventlog;
mod http;
mod relay;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::json;
use tokio::task::JoinHandle;
use tokio_util::sync::CancellationToken;
use ubiq_core::transport::{self, Listener};
use ubiq_core::wire::MAX_LENGTH;

pub use eventlog::EventLog;
pub use relay::{Relay, OUTBOUND_CAP};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerConfig {
    pub bind: String,
    /// Zero picks a free port.
    pub tcp_port: u16,
    pub ws_port: u16,
    pub idle_room_seconds: u64,
    pub log_path: Option<PathBuf>,
    pub max_message_bytes: usize,
    /// Extra delay on everything the relay writes. Zero in normal operation.
    pub forward_delay: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "0.0.0.0".into(),
            tcp_port: 8001,
            ws_port: 8002,
            idle_room_seconds: 60,
            log_path: None,
            max_message_bytes: MAX_LENGTH,
            forward_delay: Duration::ZERO,
        }
    }
}

impl ServerConfig {
    /// Loopback-only, ephemeral ports.
    pub fn local() -> Self {
        Self { bind: "127.0.0.1".into(), tcp_port: 0, ws_port: 0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ServerError> {
        if self.tcp_port != 0 && self.tcp_port == self.ws_port {
            return Err(ServerError::Config(format!("tcp and websocket ports must differ (both {})", self.tcp_port)));
        }
        if self.max_message_bytes < 10 || self.max_message_bytes > MAX_LENGTH {
            return Err(ServerError::Config(format!("max message bytes must be within 10..={MAX_LENGTH}")));
        }
        if self.bind.is_empty() {
            return Err(ServerError::Config("empty bind address".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot bind {0}: {1}")]
    Bind(String, String),
}

impl ServerError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            ServerError::Bind(..) => 2,
            ServerError::Config(_) => 3,
        }
    }
}

/// A started server. Stop it with [`RunningServer::shutdown`].
pub struct RunningServer {
    relay: Arc<Relay>,
    tcp: Listener,
    ws_addr: SocketAddr,
    cancel: CancellationToken,
    tasks: Vec<JoinHandle<()>>,
}

impl RunningServer {
    pub fn relay(&self) -> &Arc<Relay> {
        &self.relay
    }

    pub fn tcp_addr(&self) -> SocketAddr {
        self.tcp.local_addr()
    }

    pub fn ws_addr(&self) -> SocketAddr {
        self.ws_addr
    }

    /// Base URL of the admin API.
    pub fn http_url(&self) -> String {
        format!("http://{}", self.ws_addr)
    }

    /// Stops accepting, closes every connection and waits for the tasks.
    pub async fn shutdown(self) {
        self.tcp.close();
        self.cancel.cancel();
        self.relay.close_all();
        for t in self.tasks {
            let _ = t.await;
        }
        self.relay.log().event("stopped", json!({}));
    }
}

/// Binds both listeners and starts serving in the background.
pub async fn start(config: ServerConfig) -> Result<RunningServer, ServerError> {
    config.validate()?;
    let log = match &config.log_path {
        Some(p) => EventLog::open(p).map_err(|e| ServerError::Config(format!("cannot open log {}: {e}", p.display())))?,
        None => EventLog::disabled(),
    };
    let relay = Relay::new(Duration::from_secs(config.idle_room_seconds), config.max_message_bytes, log);
    relay.set_forward_delay(config.forward_delay);

    let tcp_authority = format!("{}:{}", config.bind, config.tcp_port);
    let acceptor = relay.clone();
    let tcp = transport::listen_tcp(&tcp_authority, move |c| acceptor.accept(c))
        .await
        .map_err(|e| ServerError::Bind(tcp_authority.clone(), e.to_string()))?;

    let ws_authority = format!("{}:{}", config.bind, config.ws_port);
    let ws_listener = match tokio::net::TcpListener::bind(&ws_authority).await {
        Ok(l) => l,
        Err(e) => {
            tcp.close();
            return Err(ServerError::Bind(ws_authority, e.to_string()));
        }
    };
    let ws_addr = ws_listener.local_addr().map_err(|e| ServerError::Bind(ws_authority, e.to_string()))?;

    let cancel = CancellationToken::new();
    let app = http::router(relay.clone()).into_make_service_with_connect_info::<SocketAddr>();
    let stop = cancel.clone();
    let serve = tokio::spawn(async move {
        if let Err(e) = axum::serve(ws_listener, app).with_graceful_shutdown(stop.cancelled_owned()).await {
            tracing::error!(error = %e, "http server failed");
        }
    });

    let sweeper = relay.clone();
    let stop = cancel.clone();
    let period = Duration::from_secs(config.idle_room_seconds.clamp(1, 5));
    let sweep = tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tokio::select! {
                _ = stop.cancelled() => break,
                _ = tick.tick() => { sweeper.evict_idle(Instant::now()); }
            }
        }
    });

    relay.log().event(
        "started",
        json!({ "tcp": tcp.local_addr().to_string(), "ws": ws_addr.to_string(), "idle_room_seconds": config.idle_room_seconds }),
    );
    Ok(RunningServer { relay, tcp, ws_addr, cancel, tasks: vec![serve, sweep] })
}
