use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio_util::sync::CancellationToken;

use super::{Connection, ConnectionIo, ConnectionSpec, Listener, TransportError};

pub(super) async fn dial(spec: &ConnectionSpec) -> Result<TcpStream, TransportError> {
    let stream = TcpStream::connect(spec.authority()).await.map_err(|e| TransportError::Connect(spec.to_string(), e.to_string()))?;
    let _ = stream.set_nodelay(true);
    Ok(stream)
}

pub async fn connect_tcp(spec: ConnectionSpec) -> Result<Connection, TransportError> {
    let stream = dial(&spec).await?;
    let (conn, io) = Connection::new(spec);
    io.mark_open();
    tokio::spawn(serve_stream(stream, io));
    Ok(conn)
}

/// Drives a connection over any byte stream until either side closes.
pub async fn serve_stream<S>(stream: S, io: ConnectionIo)
where
    S: AsyncRead + AsyncWrite + Send + 'static,
{
    io.mark_open();
    let (mut reader, mut writer) = io.split();
    let cancel = reader.cancellation();
    let (mut rd, mut wr) = tokio::io::split(stream);

    let write = async {
        while let Some(bytes) = writer.next_outbound().await {
            if let Err(e) = wr.write_all(&bytes).await {
                writer.close(Some(e.to_string()));
                break;
            }
            writer.written(bytes.len());
        }
        let _ = wr.shutdown().await;
    };
    let read = async {
        let mut buf = vec![0u8; 64 * 1024];
        loop {
            tokio::select! {
                _ = cancel.cancelled() => break,
                res = rd.read(&mut buf) => match res {
                    Ok(0) => {
                        reader.close(None);
                        break;
                    }
                    Ok(n) => {
                        if reader.deliver_bytes(&buf[..n]).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        reader.close(Some(e.to_string()));
                        break;
                    }
                },
            }
        }
    };
    tokio::join!(write, read);
}

pub async fn listen_tcp<F>(authority: &str, mut acceptor: F) -> Result<Listener, TransportError>
where
    F: FnMut(Connection) + Send + 'static,
{
    let listener = TcpListener::bind(authority).await.map_err(|e| TransportError::Bind(authority.to_string(), e))?;
    let local_addr = listener.local_addr().map_err(|e| TransportError::Bind(authority.to_string(), e))?;
    let cancel = CancellationToken::new();
    let stop = cancel.clone();
    tokio::spawn(async move {
        loop {
            tokio::select! {
                _ = stop.cancelled() => break,
                accepted = listener.accept() => match accepted {
                    Ok((stream, peer)) => {
                        let _ = stream.set_nodelay(true);
                        let (conn, io) = Connection::new(ConnectionSpec::tcp(peer.ip().to_string(), peer.port()));
                        tokio::spawn(serve_stream(stream, io));
                        acceptor(conn);
                    }
                    Err(e) => tracing::warn!(error = %e, "accept failed"),
                },
            }
        }
    });
    Ok(Listener { local_addr, cancel })
}
