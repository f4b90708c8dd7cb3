use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{ConnectInfo, State};
use axum::response::Response;
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use ubiq_core::admin::{Health, ServerStats};
use ubiq_core::rooms::RoomSummary;
use ubiq_core::transport::{Connection, ConnectionIo, ConnectionSpec};

use crate::relay::Relay;

/// WebSocket peers at `/`, admin JSON under `/api`.
pub fn router(relay: Arc<Relay>) -> Router {
    Router::new()
        .route("/", get(upgrade))
        .route("/api/health", get(health))
        .route("/api/rooms", get(rooms))
        .route("/api/stats", get(stats))
        .with_state(relay)
}

async fn health() -> Json<Health> {
    Json(Health { status: "ok".into(), version: env!("CARGO_PKG_VERSION").into() })
}

async fn rooms(State(relay): State<Arc<Relay>>) -> Json<Vec<RoomSummary>> {
    Json(relay.rooms())
}

async fn stats(State(relay): State<Arc<Relay>>) -> Json<ServerStats> {
    Json(relay.stats())
}

async fn upgrade(ws: WebSocketUpgrade, ConnectInfo(remote): ConnectInfo<SocketAddr>, State(relay): State<Arc<Relay>>) -> Response {
    ws.on_upgrade(move |socket| async move {
        let (conn, io) = Connection::new(ConnectionSpec::websocket(remote.ip().to_string(), remote.port()));
        relay.accept(conn);
        drive(socket, io).await;
    })
}

/// Pumps one upgraded socket: binary messages are reframed inbound, each
/// outbound frame leaves as one binary message.
async fn drive(socket: WebSocket, io: ConnectionIo) {
    io.mark_open();
    let (mut reader, mut writer) = io.split();
    let cancel = reader.cancellation();
    let (mut sink, mut stream) = socket.split();
    let write = async {
        while let Some(bytes) = writer.next_outbound().await {
            let len = bytes.len();
            if let Err(e) = sink.send(Message::Binary(bytes)).await {
                writer.close(Some(e.to_string()));
                break;
            }
            writer.written(len);
        }
        let _ = sink.close().await;
    };
    let read = async {
        loop {
            let msg = tokio::select! {
                _ = cancel.cancelled() => break,
                msg = stream.next() => msg,
            };
            match msg {
                Some(Ok(Message::Binary(data))) => {
                    if reader.deliver_bytes(&data).is_err() {
                        break;
                    }
                }
                Some(Ok(Message::Text(_))) => {
                    reader.close(Some("text frames are not part of the protocol".into()));
                    break;
                }
                Some(Ok(Message::Close(_))) | None => {
                    reader.close(None);
                    break;
                }
                Some(Ok(_)) => {}
                Some(Err(e)) => {
                    reader.close(Some(e.to_string()));
                    break;
                }
            }
        }
    };
    tokio::join!(write, read);
}
