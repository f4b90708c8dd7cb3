//! A ready-to-use peer: one scene with rooms, latency, logging, spawning
//! and traffic statistics attached.

use std::sync::Arc;
use std::time::Instant;

use parking_lot::Mutex;
use rand::Rng;

use crate::rooms::{RoomClient, RoomEvent};
use crate::scene::{PeerScene, SceneError, SceneEvent};
use crate::services::latency::LatencyMeter;
use crate::services::logging::EventLogger;
use crate::services::spawn::{BlueprintRegistry, Spawner};
use crate::services::stats::StatsMonitor;
use crate::transport::{Connection, ConnectionId, ConnectionSpec};
use crate::wire::NetworkId;

pub struct Peer {
    pub scene: PeerScene,
    pub rooms: Arc<Mutex<RoomClient>>,
    pub latency: Arc<Mutex<LatencyMeter>>,
    pub logger: Arc<Mutex<EventLogger>>,
    pub spawner: Arc<Mutex<Spawner>>,
    pub stats: Arc<StatsMonitor>,
}

impl Peer {
    pub fn new(id: NetworkId, blueprints: Arc<BlueprintRegistry>) -> Result<Self, SceneError> {
        let scene = PeerScene::new(id);
        let stats = Arc::new(StatsMonitor::new(Instant::now()));
        scene.attach_stats(stats.clone());
        let rooms = RoomClient::attach(&scene)?;
        let uuid = rooms.lock().me().uuid.clone();
        let latency = LatencyMeter::attach(&scene, uuid.clone())?;
        let logger = EventLogger::attach(&scene, uuid)?;
        let spawner = Spawner::attach(&scene, blueprints)?;
        Ok(Self { scene, rooms, latency, logger, spawner, stats })
    }

    pub fn with_random_id<R: Rng + ?Sized>(rng: &mut R, blueprints: Arc<BlueprintRegistry>) -> Result<Self, SceneError> {
        Self::new(crate::wire::generate_network_id(rng), blueprints)
    }

    pub fn id(&self) -> NetworkId {
        self.scene.id()
    }

    pub fn uuid(&self) -> String {
        self.rooms.lock().me().uuid.clone()
    }

    pub fn add_connection(&mut self, conn: Connection) -> ConnectionId {
        self.scene.add_connection(conn)
    }

    pub fn connect(&mut self, spec: ConnectionSpec) -> Result<ConnectionId, SceneError> {
        self.scene.connect(spec)
    }

    /// Delivers everything queued, keeps the services in step with room
    /// membership and runs due latency pings. Returns the room events seen.
    pub fn update(&mut self, now: Instant) -> Result<Vec<RoomEvent>, SceneError> {
        self.scene.dispatch();
        for event in self.scene.take_events() {
            if let SceneEvent::ConnectionClosed { .. } = event {
                if self.scene.open_connections() == 0 {
                    self.rooms.lock().reset();
                }
            }
        }
        let events = self.rooms.lock().take_events();
        for event in &events {
            match event {
                RoomEvent::PeerAdded(p) => {
                    self.latency.lock().add_peer(p.uuid.clone(), p.sceneid);
                    self.logger.lock().announce()?;
                }
                RoomEvent::PeerRemoved(p) => self.latency.lock().remove_peer(&p.uuid),
                _ => {}
            }
        }
        if self.rooms.lock().room().is_some() {
            self.latency.lock().latency_tick(now)?;
        }
        Ok(events)
    }

    /// Waits until a connection has something to deliver.
    pub async fn readable(&mut self) {
        self.scene.readable().await
    }

    pub fn shutdown(&mut self) {
        self.scene.shutdown();
    }
}
