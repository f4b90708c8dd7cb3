use std::sync::Arc;
use std::time::Duration;

use tokio::sync::mpsc;

use super::{Connection, ConnectionReceiver, ConnectionSender, ConnectionSpec, Shared, Sink, TransportEvent};
use crate::wire::Frame;

fn half(shared: &Arc<Shared>, rx: mpsc::UnboundedReceiver<TransportEvent>, sink: Sink) -> Connection {
    Connection {
        sender: ConnectionSender { shared: shared.clone(), sink: Arc::new(sink) },
        receiver: ConnectionReceiver { id: shared.id, rx, stash: None, finished: false },
    }
}

/// Two open connections wired to each other in process. A frame sent on one
/// is queued on the other's receiver immediately; no I/O, no runtime needed.
pub fn loopback_pair() -> (Connection, Connection) {
    let (a_tx, a_rx) = mpsc::unbounded_channel();
    let (b_tx, b_rx) = mpsc::unbounded_channel();
    let a = Arc::new(Shared::new(ConnectionSpec::loopback(), a_tx));
    let b = Arc::new(Shared::new(ConnectionSpec::loopback(), b_tx));
    a.mark_open();
    b.mark_open();
    let ca = half(&a, a_rx, Sink::Direct(b.clone()));
    let cb = half(&b, b_rx, Sink::Direct(a));
    (ca, cb)
}

/// Like [`loopback_pair`] but every frame is held back by `one_way` in each
/// direction. Must be called inside a tokio runtime.
pub fn loopback_pair_with_delay(one_way: Duration) -> (Connection, Connection) {
    let (a, a_io) = Connection::new(ConnectionSpec::loopback());
    let (b, b_io) = Connection::new(ConnectionSpec::loopback());
    a.sender.set_send_delay(one_way);
    b.sender.set_send_delay(one_way);
    a_io.mark_open();
    b_io.mark_open();
    let a_shared = a_io.shared.clone();
    let b_shared = b_io.shared.clone();
    tokio::spawn(pump(a_io, b_shared));
    tokio::spawn(pump(b_io, a_shared));
    (a, b)
}

async fn pump(io: super::ConnectionIo, to: Arc<Shared>) {
    let (_, mut io) = io.split();
    while let Some(bytes) = io.next_outbound().await {
        io.written(bytes.len());
        match Frame::parse(bytes) {
            Ok(frame) => {
                if to.inbound.send(TransportEvent::Frame(frame)).is_err() {
                    break;
                }
            }
            Err(e) => {
                io.close(Some(e.to_string()));
                break;
            }
        }
    }
    io.close(None);
    to.close(Some("peer closed".into()));
}
