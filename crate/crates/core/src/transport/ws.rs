use futures::{SinkExt, StreamExt};
use tokio::io::{AsyncRead, AsyncWrite};
use tokio::net::TcpListener;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};
use tokio_util::sync::CancellationToken;

use super::{Connection, ConnectionIo, ConnectionSpec, Listener, TransportError};

pub(super) async fn dial(spec: &ConnectionSpec) -> Result<WebSocketStream<MaybeTlsStream<tokio::net::TcpStream>>, TransportError> {
    let url = format!("ws://{}:{}/", spec.host, spec.port);
    let (ws, _) = tokio_tungstenite::connect_async(url).await.map_err(|e| TransportError::Connect(spec.to_string(), e.to_string()))?;
    Ok(ws)
}

pub async fn connect_ws(spec: ConnectionSpec) -> Result<Connection, TransportError> {
    let ws = dial(&spec).await?;
    let (conn, io) = Connection::new(spec);
    io.mark_open();
    tokio::spawn(serve_websocket(ws, io));
    Ok(conn)
}

/// Drives a connection over a WebSocket. Each outbound frame goes out as one
/// binary message; inbound binary messages are reframed, so senders may split
/// or merge frames freely.
pub async fn serve_websocket<S>(ws: WebSocketStream<S>, io: ConnectionIo)
where
    S: AsyncRead + AsyncWrite + Unpin + Send + 'static,
{
    io.mark_open();
    let (mut reader, mut writer) = io.split();
    let cancel = reader.cancellation();
    let (mut sink, mut stream) = ws.split();

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
                Some(Ok(Message::Close(_))) | None => {
                    reader.close(None);
                    break;
                }
                Some(Ok(Message::Text(_))) => {
                    reader.close(Some("text frames are not part of the protocol".into()));
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

pub async fn listen_ws<F>(authority: &str, mut acceptor: F) -> Result<Listener, TransportError>
where
    F: FnMut(Connection) + Send + 'static,
{
    let listener = TcpListener::bind(authority).await.map_err(|e| TransportError::Bind(authority.to_string(), e))?;
    let local_addr = listener.local_addr().map_err(|e| TransportError::Bind(authority.to_string(), e))?;
    let cancel = CancellationToken::new();
    let stop = cancel.clone();
    let (tx, mut rx) = tokio::sync::mpsc::unbounded_channel();
    tokio::spawn(async move {
        loop {
            tokio::select! {
                _ = stop.cancelled() => break,
                accepted = listener.accept() => match accepted {
                    Ok((stream, peer)) => {
                        let _ = stream.set_nodelay(true);
                        let tx = tx.clone();
                        tokio::spawn(async move {
                            match tokio_tungstenite::accept_async(stream).await {
                                Ok(ws) => {
                                    let (conn, io) = Connection::new(ConnectionSpec::websocket(peer.ip().to_string(), peer.port()));
                                    let _ = tx.send(conn);
                                    serve_websocket(ws, io).await;
                                }
                                Err(e) => tracing::debug!(error = %e, "websocket handshake failed"),
                            }
                        });
                    }
                    Err(e) => tracing::warn!(error = %e, "accept failed"),
                },
            }
        }
    });
    // Handshakes finish concurrently; hand connections to the acceptor in one place.
    tokio::spawn(async move {
        while let Some(conn) = rx.recv().await {
            acceptor(conn);
        }
    });
    Ok(Listener { local_addr, cancel })
}
