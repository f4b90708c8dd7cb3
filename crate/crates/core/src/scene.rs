//! Per-peer message router.
//!
//! A [`PeerScene`] owns a registry of components keyed by [`Address`] and the
//! set of connections the peer holds. Sending writes the encoded message to
//! every connection; the peer's own components never see their own sends.
//! Inbound messages wait in per-connection queues until [`PeerScene::dispatch`]
//! runs on the scene's update context.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::panic::AssertUnwindSafe;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};
use std::task::Poll;

use bytes::Bytes;
use parking_lot::{Mutex, RwLock};
use rand::Rng;

use crate::services::stats::{Direction, StatsMonitor};
use crate::transport::{self, Connection, ConnectionId, ConnectionReceiver, ConnectionSender, ConnectionSpec, ConnectionState, TransportError, TransportEvent};
use crate::wire::{self, Address, NetworkId, WireError, WireMessage};

pub type ComponentError = Box<dyn std::error::Error + Send + Sync>;

/// A message endpoint.
pub trait Component: Send {
    fn receive(&mut self, ctx: &NetworkContext, msg: &WireMessage) -> Result<(), ComponentError>;
}

pub type ComponentHandle = Arc<Mutex<dyn Component>>;

/// Wraps a component for registration.
pub fn handle<C: Component + 'static>(component: C) -> Arc<Mutex<C>> {
    Arc::new(Mutex::new(component))
}

/// A component made from a closure.
pub struct FnComponent<F>(pub F);

impl<F> Component for FnComponent<F>
where
    F: FnMut(&NetworkContext, &WireMessage) -> Result<(), ComponentError> + Send,
{
    fn receive(&mut self, ctx: &NetworkContext, msg: &WireMessage) -> Result<(), ComponentError> {
        (self.0)(ctx, msg)
    }
}

pub fn fn_component<F>(f: F) -> ComponentHandle
where
    F: FnMut(&NetworkContext, &WireMessage) -> Result<(), ComponentError> + Send + 'static,
{
    Arc::new(Mutex::new(FnComponent(f)))
}

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("component already registered at {0}")]
    DuplicateRegistration(Address),
    #[error("scene {0} is shut down")]
    Shutdown(NetworkId),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SceneEvent {
    ConnectionOpened(ConnectionId),
    ConnectionClosed { id: ConnectionId, reason: Option<String> },
}

fn same_handle(a: &ComponentHandle, b: &ComponentHandle) -> bool {
    std::ptr::eq(Arc::as_ptr(a) as *const (), Arc::as_ptr(b) as *const ())
}

struct Shared {
    id: NetworkId,
    registry: Mutex<HashMap<Address, Vec<ComponentHandle>>>,
    outbound: RwLock<Vec<ConnectionSender>>,
    shutdown: AtomicBool,
    stats: OnceLock<Arc<StatsMonitor>>,
    dropped: AtomicU64,
    callback_errors: AtomicU64,
}

impl Shared {
    fn register(self: &Arc<Self>, handle: ComponentHandle, address: Address) -> Result<NetworkContext, SceneError> {
        let mut registry = self.registry.lock();
        let slot = registry.entry(address).or_default();
        if slot.iter().any(|h| same_handle(h, &handle)) {
            return Err(SceneError::DuplicateRegistration(address));
        }
        slot.push(handle);
        Ok(NetworkContext { shared: self.clone(), address })
    }

    fn unregister(&self, handle: &ComponentHandle, address: Address) -> bool {
        let mut registry = self.registry.lock();
        let Some(slot) = registry.get_mut(&address) else { return false };
        let before = slot.len();
        slot.retain(|h| !same_handle(h, handle));
        let removed = slot.len() != before;
        if slot.is_empty() {
            registry.remove(&address);
        }
        removed
    }

    fn send(&self, msg: &WireMessage) -> Result<(), SceneError> {
        if self.shutdown.load(Ordering::Acquire) {
            return Err(SceneError::Shutdown(self.id));
        }
        let bytes = wire::encode(msg)?;
        let outbound = self.outbound.read();
        for conn in outbound.iter() {
            if conn.is_closed() {
                continue;
            }
            match conn.send(bytes.clone()) {
                Ok(()) => {
                    if let Some(stats) = self.stats.get() {
                        stats.record(Direction::Out, msg.address.component, bytes.len());
                    }
                }
                Err(e) => tracing::debug!(scene = %self.id, error = %e, "send on closed connection"),
            }
        }
        Ok(())
    }
}

/// A registered component's view of its scene: its own address plus the
/// ability to send. Cheap to clone and usable from any thread.
#[derive(Clone)]
pub struct NetworkContext {
    shared: Arc<Shared>,
    address: Address,
}

impl fmt::Debug for NetworkContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NetworkContext").field("scene", &self.shared.id).field("address", &self.address).finish()
    }
}

impl NetworkContext {
    pub fn address(&self) -> Address {
        self.address
    }

    pub fn scene_id(&self) -> NetworkId {
        self.shared.id
    }

    /// Queues `payload` for `to` on every connection of the scene.
    pub fn send(&self, to: Address, payload: impl Into<Bytes>) -> Result<(), SceneError> {
        let msg = WireMessage::new(to, payload)?;
        self.shared.send(&msg)
    }

    pub fn send_text<T: serde::Serialize + ?Sized>(&self, to: Address, value: &T) -> Result<(), SceneError> {
        self.send(to, wire::to_text_object(value)?)
    }

    /// Registers another component in the same scene.
    pub fn register(&self, handle: ComponentHandle, address: Address) -> Result<NetworkContext, SceneError> {
        self.shared.register(handle, address)
    }

    pub fn unregister(&self, handle: &ComponentHandle, address: Address) -> bool {
        self.shared.unregister(handle, address)
    }

    pub fn is_registered(&self, address: Address) -> bool {
        self.shared.registry.lock().contains_key(&address)
    }
}

/// One peer's router. Confined to a single update context.
pub struct PeerScene {
    shared: Arc<Shared>,
    receivers: Vec<ConnectionReceiver>,
    events: VecDeque<SceneEvent>,
}

impl fmt::Debug for PeerScene {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeerScene").field("id", &self.shared.id).field("connections", &self.receivers.len()).finish()
    }
}

impl PeerScene {
    pub fn new(id: NetworkId) -> Self {
        Self {
            shared: Arc::new(Shared {
                id,
                registry: Mutex::new(HashMap::new()),
                outbound: RwLock::new(Vec::new()),
                shutdown: AtomicBool::new(false),
                stats: OnceLock::new(),
                dropped: AtomicU64::new(0),
                callback_errors: AtomicU64::new(0),
            }),
            receivers: Vec::new(),
            events: VecDeque::new(),
        }
    }

    pub fn with_random_id<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::new(wire::generate_network_id(rng))
    }

    pub fn id(&self) -> NetworkId {
        self.shared.id
    }

    pub fn register(&self, handle: ComponentHandle, address: Address) -> Result<NetworkContext, SceneError> {
        self.shared.register(handle, address)
    }

    pub fn unregister(&self, handle: &ComponentHandle, address: Address) -> bool {
        self.shared.unregister(handle, address)
    }

    /// A sending context for an address that has no component behind it.
    pub fn context(&self, address: Address) -> NetworkContext {
        NetworkContext { shared: self.shared.clone(), address }
    }

    pub fn attach_stats(&self, monitor: Arc<StatsMonitor>) {
        let _ = self.shared.stats.set(monitor);
    }

    pub fn stats(&self) -> Option<&Arc<StatsMonitor>> {
        self.shared.stats.get()
    }

    /// Adopts an existing connection.
    pub fn add_connection(&mut self, conn: Connection) -> ConnectionId {
        let (sender, receiver) = conn.split();
        let id = sender.id();
        self.shared.outbound.write().push(sender);
        self.receivers.push(receiver);
        id
    }

    /// Starts connecting to `spec` in the background; sends made before it
    /// opens are held. Failure shows up as a `ConnectionClosed` event.
    pub fn connect(&mut self, spec: ConnectionSpec) -> Result<ConnectionId, SceneError> {
        let conn = transport::connect_in_background(spec)?;
        Ok(self.add_connection(conn))
    }

    pub fn connection_states(&self) -> Vec<(ConnectionId, ConnectionState)> {
        self.shared.outbound.read().iter().map(|c| (c.id(), c.state())).collect()
    }

    pub fn open_connections(&self) -> usize {
        self.shared.outbound.read().iter().filter(|c| c.state() == ConnectionState::Open).count()
    }

    pub fn send(&self, to: Address, payload: impl Into<Bytes>) -> Result<(), SceneError> {
        self.shared.send(&WireMessage::new(to, payload)?)
    }

    /// Messages that matched no component.
    pub fn dropped_count(&self) -> u64 {
        self.shared.dropped.load(Ordering::Relaxed)
    }

    pub fn callback_error_count(&self) -> u64 {
        self.shared.callback_errors.load(Ordering::Relaxed)
    }

    pub fn take_events(&mut self) -> Vec<SceneEvent> {
        self.events.drain(..).collect()
    }

    /// Drains every inbound queue, connection by connection, and invokes each
    /// component registered at the message's exact address. Returns the
    /// number of callbacks made.
    pub fn dispatch(&mut self) -> usize {
        let mut delivered = 0;
        let mut finished = false;
        for i in 0..self.receivers.len() {
            while let Some(ev) = self.receivers[i].try_next() {
                match ev {
                    TransportEvent::Frame(frame) => delivered += self.deliver(&frame.to_message(), frame.len()),
                    TransportEvent::Opened => self.events.push_back(SceneEvent::ConnectionOpened(self.receivers[i].id())),
                    TransportEvent::Closed(reason) => {
                        finished = true;
                        self.events.push_back(SceneEvent::ConnectionClosed { id: self.receivers[i].id(), reason });
                    }
                }
            }
        }
        if finished {
            self.receivers.retain(|r| !r.is_finished());
            self.shared.outbound.write().retain(|c| !c.is_closed());
        }
        delivered
    }

    fn deliver(&self, msg: &WireMessage, wire_len: usize) -> usize {
        if let Some(stats) = self.shared.stats.get() {
            stats.record(Direction::In, msg.address.component, wire_len);
        }
        let handles: Vec<ComponentHandle> = match self.shared.registry.lock().get(&msg.address) {
            Some(h) => h.clone(),
            None => {
                self.shared.dropped.fetch_add(1, Ordering::Relaxed);
                tracing::trace!(scene = %self.shared.id, address = %msg.address, "no component at address");
                return 0;
            }
        };
        let ctx = NetworkContext { shared: self.shared.clone(), address: msg.address };
        for handle in &handles {
            let result = std::panic::catch_unwind(AssertUnwindSafe(|| handle.lock().receive(&ctx, msg)));
            let failure = match result {
                Ok(Ok(())) => None,
                Ok(Err(e)) => Some(e.to_string()),
                Err(_) => Some("component panicked".to_string()),
            };
            if let Some(error) = failure {
                self.shared.callback_errors.fetch_add(1, Ordering::Relaxed);
                tracing::warn!(scene = %self.shared.id, address = %msg.address, %error, "component callback failed");
            }
        }
        handles.len()
    }

    /// Resolves once any connection has something to dispatch.
    pub async fn readable(&mut self) {
        if self.receivers.is_empty() {
            return std::future::pending().await;
        }
        std::future::poll_fn(|cx| {
            let mut ready = false;
            for r in &mut self.receivers {
                ready |= r.poll_ready(cx).is_ready();
            }
            if ready {
                Poll::Ready(())
            } else {
                Poll::Pending
            }
        })
        .await
    }

    /// Closes every connection; later sends fail.
    pub fn shutdown(&mut self) {
        self.shared.shutdown.store(true, Ordering::Release);
        for conn in self.shared.outbound.read().iter() {
            conn.close();
        }
    }

    pub fn is_shutdown(&self) -> bool {
        self.shared.shutdown.load(Ordering::Acquire)
    }
}

impl Drop for PeerScene {
    fn drop(&mut self) {
        // Components usually hold a context back into the scene.
        self.shared.registry.lock().clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::loopback_pair;
    use crate::wire::ComponentId;

    fn addr(o: u64, c: u16) -> Address {
        Address::new(NetworkId::new(o).unwrap(), ComponentId::new(c).unwrap())
    }

    type Log = Arc<Mutex<Vec<(&'static str, Bytes)>>>;

    fn recorder(name: &'static str, log: &Log) -> ComponentHandle {
        let log = log.clone();
        fn_component(move |_, msg| {
            log.lock().push((name, msg.payload.clone()));
            Ok(())
        })
    }

    fn pair() -> (PeerScene, PeerScene) {
        let mut a = PeerScene::new(NetworkId::new(1000).unwrap());
        let mut b = PeerScene::new(NetworkId::new(2000).unwrap());
        let (ca, cb) = loopback_pair();
        a.add_connection(ca);
        b.add_connection(cb);
        (a, b)
    }

    #[test]
    fn registration_order_is_delivery_order() {
        let (a, mut b) = pair();
        let log = Log::default();
        b.register(recorder("A", &log), addr(500, 3)).unwrap();
        b.register(recorder("B", &log), addr(500, 3)).unwrap();
        a.send(addr(500, 3), &b"x"[..]).unwrap();
        assert_eq!(b.dispatch(), 2);
        let names: Vec<_> = log.lock().iter().map(|(n, _)| *n).collect();
        assert_eq!(names, ["A", "B"]);
    }

    #[test]
    fn duplicate_registration_fails_until_unregistered() {
        let scene = PeerScene::new(NetworkId::new(1000).unwrap());
        let h = recorder("A", &Log::default());
        scene.register(h.clone(), addr(500, 3)).unwrap();
        assert!(matches!(scene.register(h.clone(), addr(500, 3)), Err(SceneError::DuplicateRegistration(_))));
        // Same handle at a different address is fine.
        scene.register(h.clone(), addr(500, 4)).unwrap();
        assert!(scene.unregister(&h, addr(500, 3)));
        scene.register(h, addr(500, 3)).unwrap();
    }

    #[test]
    fn unmatched_messages_are_dropped_silently() {
        let (a, mut b) = pair();
        a.send(addr(777, 1), &b"nobody"[..]).unwrap();
        assert_eq!(b.dispatch(), 0);
        assert_eq!(b.dropped_count(), 1);
    }

    #[test]
    fn address_selectivity() {
        let (a, mut b) = pair();
        let log = Log::default();
        b.register(recorder("target", &log), addr(500, 3)).unwrap();
        b.register(recorder("other-component", &log), addr(500, 4)).unwrap();
        b.register(recorder("other-object", &log), addr(501, 3)).unwrap();
        a.send(addr(500, 3), &b"m"[..]).unwrap();
        assert_eq!(b.dispatch(), 1);
        assert_eq!(log.lock()[0].0, "target");
    }

    #[test]
    fn no_local_echo() {
        let (a, mut b) = pair();
        let mut a = a;
        let log = Log::default();
        a.register(recorder("self", &log), addr(500, 3)).unwrap();
        a.send(addr(500, 3), &b"m"[..]).unwrap();
        assert_eq!(a.dispatch(), 0);
        assert!(log.lock().is_empty());
        b.dispatch();
    }

    #[test]
    fn send_without_connections_is_a_no_op() {
        let scene = PeerScene::new(NetworkId::new(1000).unwrap());
        scene.send(addr(500, 3), &b"m"[..]).unwrap();
    }

    #[test]
    fn two_connections_carry_identical_bytes() {
        let mut a = PeerScene::new(NetworkId::new(1000).unwrap());
        let (c1, mut far1) = loopback_pair();
        let (c2, mut far2) = loopback_pair();
        a.add_connection(c1);
        a.add_connection(c2);
        a.send(addr(500, 3), vec![9u8; 40]).unwrap();
        let grab = |rx: &mut ConnectionReceiver| loop {
            match rx.try_next() {
                Some(TransportEvent::Frame(f)) => break f.into_bytes(),
                Some(_) => continue,
                None => panic!("no frame"),
            }
        };
        let b1 = grab(&mut far1.receiver);
        let b2 = grab(&mut far2.receiver);
        assert_eq!(b1, b2);
        assert_eq!(b1.len(), 54);
    }

    #[test]
    fn failing_callback_is_isolated() {
        let (a, mut b) = pair();
        let log = Log::default();
        b.register(fn_component(|_, _| Err("boom".into())), addr(500, 3)).unwrap();
        b.register(fn_component(|_, _| panic!("kaboom")), addr(500, 3)).unwrap();
        b.register(recorder("survivor", &log), addr(500, 3)).unwrap();
        a.send(addr(500, 3), &b"1"[..]).unwrap();
        a.send(addr(500, 3), &b"2"[..]).unwrap();
        assert_eq!(b.dispatch(), 6);
        assert_eq!(b.callback_error_count(), 4);
        assert_eq!(log.lock().len(), 2);
    }

    #[test]
    fn callbacks_can_register_and_send() {
        let (mut a, mut b) = pair();
        let log = Log::default();
        let inner = recorder("inner", &log);
        b.register(
            fn_component(move |ctx, _| {
                ctx.register(inner.clone(), addr(600, 1))?;
                ctx.send(addr(900, 1), &b"ack"[..])?;
                Ok(())
            }),
            addr(500, 3),
        )
        .unwrap();
        a.register(recorder("ack", &log), addr(900, 1)).unwrap();
        a.send(addr(500, 3), &b"spawn"[..]).unwrap();
        b.dispatch();
        a.send(addr(600, 1), &b"hello"[..]).unwrap();
        b.dispatch();
        a.dispatch();
        let names: Vec<_> = log.lock().iter().map(|(n, _)| *n).collect();
        assert_eq!(names, ["inner", "ack"]);
    }

    #[test]
    fn shutdown_rejects_sends_and_reports_closure() {
        let (mut a, mut b) = pair();
        a.shutdown();
        assert!(matches!(a.send(addr(500, 3), &b"m"[..]), Err(SceneError::Shutdown(_))));
        b.dispatch();
        assert!(b.take_events().iter().any(|e| matches!(e, SceneEvent::ConnectionClosed { .. })));
        assert_eq!(b.open_connections(), 0);
    }

    #[test]
    fn oversize_send_is_rejected() {
        let scene = PeerScene::new(NetworkId::new(1000).unwrap());
        assert!(matches!(scene.send(addr(500, 3), vec![0u8; 2_000_000]), Err(SceneError::Wire(WireError::Oversize(_)))));
    }

    mod order {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn callbacks_follow_send_order(payloads in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..32), 1..40)) {
                let (a, mut b) = pair();
                let log = Log::default();
                b.register(recorder("r", &log), addr(500, 3)).unwrap();
                for p in &payloads {
                    a.send(addr(500, 3), p.clone()).unwrap();
                }
                b.dispatch();
                let got: Vec<Vec<u8>> = log.lock().iter().map(|(_, p)| p.to_vec()).collect();
                prop_assert_eq!(got, payloads);
            }
        }
    }
}
