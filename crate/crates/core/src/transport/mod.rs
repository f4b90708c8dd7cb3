//! Framed byte delivery between peers.
//!
//! A [`Connection`] is split into a cloneable [`ConnectionSender`] and a
//! [`ConnectionReceiver`]. Whatever drives the bytes (a TCP socket, a
//! WebSocket, or nothing at all for in-process loopback) holds the matching
//! [`ConnectionIo`]. Closure is reported as a [`TransportEvent::Closed`] on the
//! receiver; nothing reconnects automatically.

mod loopback;
mod tcp;
mod ws;

use std::fmt;
use std::sync::atomic::{AtomicU64, AtomicU8, AtomicUsize, Ordering};
use std::sync::Arc;
use std::task::{Context, Poll};
use std::time::{Duration, Instant};

use bytes::Bytes;
use tokio::sync::mpsc;
use tokio_util::sync::CancellationToken;

use crate::wire::{Frame, FrameDecoder, WireError};

pub use loopback::{loopback_pair, loopback_pair_with_delay};
pub use tcp::{connect_tcp, listen_tcp, serve_stream};
pub use ws::{connect_ws, listen_ws, serve_websocket};

/// Per-connection outbound buffer limit applied by servers.
pub const DEFAULT_OUTBOUND_CAP: usize = 4 << 20;

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("connection {0} is closed")]
    Closed(ConnectionId),
    #[error("connection {0} exceeded its outbound buffer of {1} bytes")]
    SlowConsumer(ConnectionId, usize),
    #[error("connect to {0} failed: {1}")]
    Connect(String, String),
    #[error("bind {0} failed: {1}")]
    Bind(String, std::io::Error),
    #[error("invalid connection spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConnectionId(u64);

impl ConnectionId {
    fn next() -> Self {
        static NEXT: AtomicU64 = AtomicU64::new(1);
        Self(NEXT.fetch_add(1, Ordering::Relaxed))
    }

    pub fn get(self) -> u64 {
        self.0
    }
}

impl fmt::Display for ConnectionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConnectionKind {
    Tcp,
    WebSocket,
    Loopback,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConnectionSpec {
    pub kind: ConnectionKind,
    pub host: String,
    pub port: u16,
}

impl ConnectionSpec {
    pub fn tcp(host: impl Into<String>, port: u16) -> Self {
        Self { kind: ConnectionKind::Tcp, host: host.into(), port }
    }

    pub fn websocket(host: impl Into<String>, port: u16) -> Self {
        Self { kind: ConnectionKind::WebSocket, host: host.into(), port }
    }

    pub fn loopback() -> Self {
        Self { kind: ConnectionKind::Loopback, host: String::new(), port: 0 }
    }

    /// Parses `host:port`, `tcp://host:port` or `ws://host:port[/]`.
    pub fn parse(text: &str) -> Result<Self, TransportError> {
        let (kind, rest) = if let Some(rest) = text.strip_prefix("ws://") {
            (ConnectionKind::WebSocket, rest.trim_end_matches('/'))
        } else if let Some(rest) = text.strip_prefix("tcp://") {
            (ConnectionKind::Tcp, rest)
        } else {
            (ConnectionKind::Tcp, text)
        };
        let (host, port) = rest.rsplit_once(':').ok_or_else(|| TransportError::Spec(format!("missing port in {text:?}")))?;
        let port: u16 = port.parse().map_err(|_| TransportError::Spec(format!("bad port in {text:?}")))?;
        if port == 0 || host.is_empty() {
            return Err(TransportError::Spec(format!("bad host or port in {text:?}")));
        }
        Ok(Self { kind, host: host.to_string(), port })
    }

    fn validate(&self) -> Result<(), TransportError> {
        match self.kind {
            ConnectionKind::Loopback => Ok(()),
            _ if self.port == 0 || self.host.is_empty() => Err(TransportError::Spec(format!("{self} needs a host and a port in 1..=65535"))),
            _ => Ok(()),
        }
    }

    fn authority(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }
}

impl fmt::Display for ConnectionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ConnectionKind::Tcp => write!(f, "tcp://{}:{}", self.host, self.port),
            ConnectionKind::WebSocket => write!(f, "ws://{}:{}/", self.host, self.port),
            ConnectionKind::Loopback => write!(f, "loopback"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectionState {
    Connecting,
    Open,
    Closed,
}

impl ConnectionState {
    fn from_u8(v: u8) -> Self {
        match v {
            0 => Self::Connecting,
            1 => Self::Open,
            _ => Self::Closed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportEvent {
    Opened,
    Frame(Frame),
    /// Terminal. `None` for an orderly close.
    Closed(Option<String>),
}

#[derive(Debug)]
struct Shared {
    id: ConnectionId,
    spec: ConnectionSpec,
    state: AtomicU8,
    queued: AtomicUsize,
    outbound_cap: AtomicUsize,
    send_delay_us: AtomicU64,
    cancel: CancellationToken,
    inbound: mpsc::UnboundedSender<TransportEvent>,
}

impl Shared {
    fn state(&self) -> ConnectionState {
        ConnectionState::from_u8(self.state.load(Ordering::Acquire))
    }

    fn mark_open(&self) {
        if self.state.compare_exchange(0, 1, Ordering::AcqRel, Ordering::Acquire).is_ok() {
            let _ = self.inbound.send(TransportEvent::Opened);
        }
    }

    /// Returns false if it was already closed.
    fn close(&self, reason: Option<String>) -> bool {
        if self.state.swap(2, Ordering::AcqRel) == 2 {
            return false;
        }
        self.cancel.cancel();
        let _ = self.inbound.send(TransportEvent::Closed(reason));
        true
    }
}

enum Sink {
    /// Frames go to a driver task through a queue.
    Queue(mpsc::UnboundedSender<(Bytes, Instant)>),
    /// In-process loopback: frames land directly in the other end's inbound queue.
    Direct(Arc<Shared>),
}

/// Cloneable sending half. Safe to use from any thread.
#[derive(Clone)]
pub struct ConnectionSender {
    shared: Arc<Shared>,
    sink: Arc<Sink>,
}

impl fmt::Debug for ConnectionSender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConnectionSender").field("id", &self.shared.id).field("state", &self.shared.state()).finish()
    }
}

impl ConnectionSender {
    pub fn id(&self) -> ConnectionId {
        self.shared.id
    }

    pub fn state(&self) -> ConnectionState {
        self.shared.state()
    }

    pub fn is_closed(&self) -> bool {
        self.state() == ConnectionState::Closed
    }

    /// Bytes accepted for sending but not yet written.
    pub fn queued_bytes(&self) -> usize {
        self.shared.queued.load(Ordering::Acquire)
    }

    /// Queues one encoded frame. Frames queued while connecting are written
    /// once the connection opens.
    pub fn send(&self, frame: Bytes) -> Result<(), TransportError> {
        if self.is_closed() {
            return Err(TransportError::Closed(self.id()));
        }
        match &*self.sink {
            Sink::Direct(peer) => {
                if peer.state() == ConnectionState::Closed {
                    return Err(TransportError::Closed(self.id()));
                }
                let frame = Frame::parse(frame)?;
                peer.inbound.send(TransportEvent::Frame(frame)).map_err(|_| TransportError::Closed(self.id()))
            }
            Sink::Queue(tx) => {
                let len = frame.len();
                let queued = self.shared.queued.fetch_add(len, Ordering::AcqRel) + len;
                let cap = self.shared.outbound_cap.load(Ordering::Acquire);
                if cap > 0 && queued > cap {
                    self.shared.close(Some(format!("outbound buffer exceeded {cap} bytes")));
                    return Err(TransportError::SlowConsumer(self.id(), cap));
                }
                tx.send((frame, Instant::now())).map_err(|_| TransportError::Closed(self.id()))
            }
        }
    }

    pub fn close(&self) {
        self.shared.close(None);
        if let Sink::Direct(peer) = &*self.sink {
            peer.close(Some("peer closed".into()));
        }
    }

    /// Caps the outbound buffer; exceeding it closes the connection. Zero disables.
    pub fn set_outbound_cap(&self, bytes: usize) {
        self.shared.outbound_cap.store(bytes, Ordering::Release);
    }

    /// Holds every outbound frame back by `delay` before writing it.
    pub fn set_send_delay(&self, delay: Duration) {
        self.shared.send_delay_us.store(delay.as_micros() as u64, Ordering::Release);
    }
}

/// Receiving half. Owned by exactly one consumer.
#[derive(Debug)]
pub struct ConnectionReceiver {
    id: ConnectionId,
    rx: mpsc::UnboundedReceiver<TransportEvent>,
    stash: Option<TransportEvent>,
    finished: bool,
}

impl ConnectionReceiver {
    pub fn id(&self) -> ConnectionId {
        self.id
    }

    /// True once the terminal `Closed` event has been consumed.
    pub fn is_finished(&self) -> bool {
        self.finished
    }

    fn observe(&mut self, ev: TransportEvent) -> TransportEvent {
        if matches!(ev, TransportEvent::Closed(_)) {
            self.finished = true;
        }
        ev
    }

    pub fn try_next(&mut self) -> Option<TransportEvent> {
        if let Some(ev) = self.stash.take() {
            return Some(self.observe(ev));
        }
        if self.finished {
            return None;
        }
        self.rx.try_recv().ok().map(|ev| self.observe(ev))
    }

    /// Ready once an event is available; the event stays queued for `try_next`.
    pub fn poll_ready(&mut self, cx: &mut Context<'_>) -> Poll<()> {
        if self.stash.is_some() {
            return Poll::Ready(());
        }
        if self.finished {
            return Poll::Pending;
        }
        match self.rx.poll_recv(cx) {
            Poll::Ready(Some(ev)) => {
                self.stash = Some(ev);
                Poll::Ready(())
            }
            Poll::Ready(None) => {
                self.stash = Some(TransportEvent::Closed(Some("transport dropped".into())));
                Poll::Ready(())
            }
            Poll::Pending => Poll::Pending,
        }
    }

    pub async fn recv(&mut self) -> Option<TransportEvent> {
        if self.finished && self.stash.is_none() {
            return None;
        }
        std::future::poll_fn(|cx| self.poll_ready(cx)).await;
        self.try_next()
    }
}

/// Both halves plus the connection's identity.
#[derive(Debug)]
pub struct Connection {
    pub sender: ConnectionSender,
    pub receiver: ConnectionReceiver,
}

impl Connection {
    /// A connection in the `Connecting` state and the driver-side handle for it.
    pub fn new(spec: ConnectionSpec) -> (Self, ConnectionIo) {
        let (inbound_tx, inbound_rx) = mpsc::unbounded_channel();
        let (out_tx, out_rx) = mpsc::unbounded_channel();
        let shared = Arc::new(Shared::new(spec, inbound_tx));
        let conn = Connection {
            sender: ConnectionSender { shared: shared.clone(), sink: Arc::new(Sink::Queue(out_tx)) },
            receiver: ConnectionReceiver { id: shared.id, rx: inbound_rx, stash: None, finished: false },
        };
        (conn, ConnectionIo { shared, outbound: out_rx, decoder: FrameDecoder::new() })
    }

    pub fn id(&self) -> ConnectionId {
        self.sender.id()
    }

    pub fn spec(&self) -> &ConnectionSpec {
        &self.sender.shared.spec
    }

    pub fn state(&self) -> ConnectionState {
        self.sender.state()
    }

    pub fn split(self) -> (ConnectionSender, ConnectionReceiver) {
        (self.sender, self.receiver)
    }
}

impl Shared {
    fn new(spec: ConnectionSpec, inbound: mpsc::UnboundedSender<TransportEvent>) -> Self {
        Self {
            id: ConnectionId::next(),
            spec,
            state: AtomicU8::new(0),
            queued: AtomicUsize::new(0),
            outbound_cap: AtomicUsize::new(0),
            send_delay_us: AtomicU64::new(0),
            cancel: CancellationToken::new(),
            inbound,
        }
    }
}

/// The driver's side of a connection.
pub struct ConnectionIo {
    shared: Arc<Shared>,
    outbound: mpsc::UnboundedReceiver<(Bytes, Instant)>,
    decoder: FrameDecoder,
}

impl ConnectionIo {
    pub fn id(&self) -> ConnectionId {
        self.shared.id
    }

    pub fn mark_open(&self) {
        self.shared.mark_open();
    }

    pub fn close(&self, reason: Option<String>) {
        self.shared.close(reason);
    }

    pub fn split(self) -> (IoReader, IoWriter) {
        (
            IoReader { shared: self.shared.clone(), decoder: self.decoder },
            IoWriter { shared: self.shared, outbound: self.outbound },
        )
    }
}

/// Reframes inbound bytes into the connection's receive queue.
pub struct IoReader {
    shared: Arc<Shared>,
    decoder: FrameDecoder,
}

impl IoReader {
    pub fn close(&self, reason: Option<String>) {
        self.shared.close(reason);
    }

    pub fn cancellation(&self) -> CancellationToken {
        self.shared.cancel.clone()
    }

    /// Feeds raw bytes from the wire. A malformed stream closes the connection.
    pub fn deliver_bytes(&mut self, data: &[u8]) -> Result<usize, WireError> {
        self.decoder.push(data);
        let mut n = 0;
        loop {
            match self.decoder.next_frame() {
                Ok(Some(frame)) => {
                    let _ = self.shared.inbound.send(TransportEvent::Frame(frame));
                    n += 1;
                }
                Ok(None) => return Ok(n),
                Err(e) => {
                    self.shared.close(Some(e.to_string()));
                    return Err(e);
                }
            }
        }
    }
}

/// Yields frames queued by senders, in order.
pub struct IoWriter {
    shared: Arc<Shared>,
    outbound: mpsc::UnboundedReceiver<(Bytes, Instant)>,
}

impl IoWriter {
    pub fn close(&self, reason: Option<String>) {
        self.shared.close(reason);
    }

    /// Next frame to write, honouring any injected send delay. Frames queued
    /// before a close are still yielded; `None` after that.
    pub async fn next_outbound(&mut self) -> Option<Bytes> {
        let (bytes, queued_at) = tokio::select! {
            biased;
            item = self.outbound.recv() => item?,
            _ = self.shared.cancel.cancelled() => return None,
        };
        let delay = self.shared.send_delay_us.load(Ordering::Acquire);
        if delay > 0 {
            let due = queued_at + Duration::from_micros(delay);
            tokio::select! {
                _ = tokio::time::sleep_until(due.into()) => {}
                _ = self.shared.cancel.cancelled() => return None,
            }
        }
        Some(bytes)
    }

    /// Call after a frame from `next_outbound` has been written.
    pub fn written(&self, bytes: usize) {
        self.shared.queued.fetch_sub(bytes, Ordering::AcqRel);
    }
}

impl Frame {
    /// Parses exactly one complete encoded message.
    pub fn parse(bytes: Bytes) -> Result<Frame, WireError> {
        let mut decoder = FrameDecoder::new();
        decoder.push(&bytes);
        match decoder.next_frame()? {
            Some(frame) if decoder.pending().is_empty() => Ok(frame),
            _ => Err(WireError::BadLength(bytes.len().saturating_sub(4) as u32)),
        }
    }
}

/// Opens a connection and waits until it is usable.
pub async fn connect(spec: ConnectionSpec) -> Result<Connection, TransportError> {
    spec.validate()?;
    match spec.kind {
        ConnectionKind::Tcp => connect_tcp(spec).await,
        ConnectionKind::WebSocket => connect_ws(spec).await,
        ConnectionKind::Loopback => Err(TransportError::Spec("loopback connections come from loopback_pair()".into())),
    }
}

/// Starts connecting in the background and returns at once in the
/// `Connecting` state. Frames sent meanwhile are held until the connection
/// opens; failure arrives as a `Closed` event. Must run inside a tokio runtime.
pub fn connect_in_background(spec: ConnectionSpec) -> Result<Connection, TransportError> {
    spec.validate()?;
    if spec.kind == ConnectionKind::Loopback {
        return Err(TransportError::Spec("loopback connections come from loopback_pair()".into()));
    }
    let (conn, io) = Connection::new(spec.clone());
    tokio::spawn(async move {
        match spec.kind {
            ConnectionKind::Tcp => match tcp::dial(&spec).await {
                Ok(stream) => serve_stream(stream, io).await,
                Err(e) => io.close(Some(e.to_string())),
            },
            ConnectionKind::WebSocket => match ws::dial(&spec).await {
                Ok(stream) => serve_websocket(stream, io).await,
                Err(e) => io.close(Some(e.to_string())),
            },
            ConnectionKind::Loopback => unreachable!(),
        }
    });
    Ok(conn)
}

/// Handle to a running listener. Dropping it does not stop it; call `close`.
#[derive(Debug)]
pub struct Listener {
    local_addr: std::net::SocketAddr,
    cancel: CancellationToken,
}

impl Listener {
    pub fn local_addr(&self) -> std::net::SocketAddr {
        self.local_addr
    }

    pub fn port(&self) -> u16 {
        self.local_addr.port()
    }

    /// Stops accepting; the port is released.
    pub fn close(&self) {
        self.cancel.cancel();
    }
}

/// Accepts connections for `spec` and hands each one to `acceptor`.
pub async fn listen<F>(spec: ConnectionSpec, acceptor: F) -> Result<Listener, TransportError>
where
    F: FnMut(Connection) + Send + 'static,
{
    match spec.kind {
        ConnectionKind::Tcp => listen_tcp(&spec.authority(), acceptor).await,
        ConnectionKind::WebSocket => listen_ws(&spec.authority(), acceptor).await,
        ConnectionKind::Loopback => Err(TransportError::Spec("cannot listen on loopback".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parsing() {
        let s = ConnectionSpec::parse("127.0.0.1:8001").unwrap();
        assert_eq!(s, ConnectionSpec::tcp("127.0.0.1", 8001));
        let s = ConnectionSpec::parse("ws://localhost:8002/").unwrap();
        assert_eq!(s, ConnectionSpec::websocket("localhost", 8002));
        assert!(ConnectionSpec::parse("localhost").is_err());
        assert!(ConnectionSpec::parse("localhost:0").is_err());
        assert!(ConnectionSpec::parse("localhost:70000").is_err());
    }

    #[test]
    fn ids_are_unique() {
        let (a, _) = Connection::new(ConnectionSpec::loopback());
        let (b, _) = Connection::new(ConnectionSpec::loopback());
        assert_ne!(a.id(), b.id());
        assert_eq!(a.state(), ConnectionState::Connecting);
    }

    #[test]
    fn slow_consumer_is_closed() {
        let (conn, _io) = Connection::new(ConnectionSpec::tcp("h", 1));
        conn.sender.set_outbound_cap(100);
        conn.sender.send(Bytes::from(vec![0u8; 60])).unwrap();
        assert!(matches!(conn.sender.send(Bytes::from(vec![0u8; 60])), Err(TransportError::SlowConsumer(_, 100))));
        assert!(conn.sender.is_closed());
        let (_, mut rx) = conn.split();
        assert!(matches!(rx.try_next(), Some(TransportEvent::Closed(Some(_)))));
        assert!(rx.is_finished());
    }
}
