use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use bytes::Bytes;
use parking_lot::Mutex;
use serde_json::json;
use ubiq_core::admin::ServerStats;
use ubiq_core::rooms::{Outcome, RoomServerState, RoomSummary};
use ubiq_core::transport::{Connection, ConnectionId, ConnectionSender, TransportError, TransportEvent};
use ubiq_core::wire::Frame;

use crate::eventlog::EventLog;

/// Per-connection outbound buffer limit.
pub const OUTBOUND_CAP: usize = 4 << 20;

struct Inner {
    state: RoomServerState<ConnectionId>,
    senders: BTreeMap<ConnectionId, ConnectionSender>,
    closed: bool,
}

/// Room state plus the live connections. One lock serializes all membership
/// changes; sends are non-blocking queue pushes made under that lock, so every
/// recipient sees each sender's frames in order.
pub struct Relay {
    inner: Mutex<Inner>,
    max_message_bytes: usize,
    forward_delay: Mutex<Duration>,
    started: Instant,
    slow_consumers: AtomicU64,
    log: EventLog,
}

impl Relay {
    pub fn new(idle_after: Duration, max_message_bytes: usize, log: EventLog) -> Arc<Self> {
        Arc::new(Self {
            inner: Mutex::new(Inner { state: RoomServerState::new(idle_after), senders: BTreeMap::new(), closed: false }),
            max_message_bytes,
            forward_delay: Mutex::new(Duration::ZERO),
            started: Instant::now(),
            slow_consumers: AtomicU64::new(0),
            log,
        })
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    /// Delays every frame the relay writes from now on, for fault injection.
    pub fn set_forward_delay(&self, delay: Duration) {
        *self.forward_delay.lock() = delay;
        for s in self.inner.lock().senders.values() {
            s.set_send_delay(delay);
        }
    }

    /// Takes ownership of a new connection and serves it until it closes.
    pub fn accept(self: &Arc<Self>, conn: Connection) {
        let spec = conn.spec().to_string();
        let (tx, mut rx) = conn.split();
        let id = tx.id();
        tx.set_outbound_cap(OUTBOUND_CAP);
        tx.set_send_delay(*self.forward_delay.lock());
        {
            let mut inner = self.inner.lock();
            if inner.closed {
                tx.close();
                return;
            }
            inner.senders.insert(id, tx);
        }
        self.log.event("connection_opened", json!({ "id": id.get(), "remote": spec }));
        let relay = self.clone();
        tokio::spawn(async move {
            let mut reason = None;
            while let Some(ev) = rx.recv().await {
                match ev {
                    TransportEvent::Frame(frame) => relay.on_frame(id, &frame),
                    TransportEvent::Closed(r) => {
                        reason = r;
                        break;
                    }
                    TransportEvent::Opened => {}
                }
            }
            relay.on_closed(id, reason);
        });
    }

    fn on_frame(&self, from: ConnectionId, frame: &Frame) {
        let mut inner = self.inner.lock();
        if frame.len() > self.max_message_bytes + 4 {
            if let Some(s) = inner.senders.get(&from) {
                s.close();
            }
            return;
        }
        match inner.state.handle(from, frame, Instant::now()) {
            Outcome::Protocol(out) => {
                for (to, bytes) in out {
                    self.deliver(&inner, to, bytes);
                }
            }
            Outcome::Forward(members) => {
                self.fanout(&inner, from, frame.bytes(), &members);
            }
            Outcome::Discarded => {}
        }
    }

    /// Forwards `raw` byte-identical to every listed member except `from`.
    /// Returns how many members it was handed to.
    fn fanout(&self, inner: &Inner, from: ConnectionId, raw: &Bytes, members: &[ConnectionId]) -> usize {
        let mut n = 0;
        for &to in members.iter().filter(|&&m| m != from) {
            self.deliver(inner, to, raw.clone());
            n += 1;
        }
        n
    }

    fn deliver(&self, inner: &Inner, to: ConnectionId, bytes: Bytes) {
        let Some(sender) = inner.senders.get(&to) else { return };
        match sender.send(bytes) {
            Ok(()) => {}
            Err(TransportError::SlowConsumer(..)) => {
                self.slow_consumers.fetch_add(1, Ordering::Relaxed);
                tracing::warn!(connection = to.get(), "closing slow consumer");
            }
            Err(_) => sender.close(),
        }
    }

    fn on_closed(&self, id: ConnectionId, reason: Option<String>) {
        let mut inner = self.inner.lock();
        inner.senders.remove(&id);
        for (to, bytes) in inner.state.disconnect(id, Instant::now()) {
            self.deliver(&inner, to, bytes);
        }
        drop(inner);
        self.log.event("connection_closed", json!({ "id": id.get(), "reason": reason }));
    }

    /// Removes empty rooms idle past the threshold; returns their uuids.
    pub fn evict_idle(&self, now: Instant) -> Vec<String> {
        let evicted = self.inner.lock().state.evict_idle(now);
        if !evicted.is_empty() {
            self.log.event("rooms_evicted", json!({ "uuids": evicted }));
        }
        evicted
    }

    pub fn rooms(&self) -> Vec<RoomSummary> {
        self.inner.lock().state.rooms()
    }

    pub fn connection_count(&self) -> usize {
        self.inner.lock().senders.len()
    }

    pub fn stats(&self) -> ServerStats {
        let inner = self.inner.lock();
        ServerStats {
            uptime_secs: self.started.elapsed().as_secs_f64(),
            connections: inner.senders.len(),
            rooms: inner.state.room_count(),
            counters: inner.state.counters(),
            slow_consumers: self.slow_consumers.load(Ordering::Relaxed),
        }
    }

    /// Closes every connection, including any accepted later.
    pub fn close_all(&self) {
        let mut inner = self.inner.lock();
        inner.closed = true;
        for s in inner.senders.values() {
            s.close();
        }
    }
}
