//! Talking to a relay: the HTTP admin API, and a [`Session`] that drives one
//! peer through connect and join from async code.

use std::sync::Arc;
use std::time::{Duration, Instant};

use ubiq_core::admin::{Health, ServerStats};
use ubiq_core::rooms::{JoinTarget, RoomError, RoomEvent, RoomRecord, RoomSummary};
use ubiq_core::scene::SceneError;
use ubiq_core::services::spawn::BlueprintRegistry;
use ubiq_core::transport::{ConnectionSpec, ConnectionState};
use ubiq_core::{NetworkId, Peer};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("http: {0}")]
    Http(#[from] reqwest::Error),
    #[error("join rejected: {0}")]
    Rejected(String),
    #[error("timed out waiting for {0}")]
    Timeout(&'static str),
    #[error("connection closed")]
    Closed,
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Room(#[from] RoomError),
}

/// Client for the relay's `/api` endpoints.
#[derive(Debug, Clone)]
pub struct AdminClient {
    base: String,
    http: reqwest::Client,
}

impl AdminClient {
    /// `base` is e.g. `http://127.0.0.1:8002`.
    pub fn new(base: impl Into<String>) -> Self {
        Self { base: base.into().trim_end_matches('/').to_string(), http: reqwest::Client::new() }
    }

    async fn get<T: serde::de::DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        Ok(self.http.get(format!("{}{path}", self.base)).send().await?.error_for_status()?.json().await?)
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        self.get("/api/health").await
    }

    pub async fn rooms(&self) -> Result<Vec<RoomSummary>, ClientError> {
        self.get("/api/rooms").await
    }

    pub async fn stats(&self) -> Result<ServerStats, ClientError> {
        self.get("/api/stats").await
    }
}

const POLL: Duration = Duration::from_millis(1);

/// One peer connected to a relay.
pub struct Session {
    pub peer: Peer,
    events: Vec<RoomEvent>,
}

impl Session {
    /// Connects and waits until the connection is open.
    pub async fn connect(id: NetworkId, spec: ConnectionSpec, blueprints: Arc<BlueprintRegistry>, timeout: Duration) -> Result<Self, ClientError> {
        let mut peer = Peer::new(id, blueprints)?;
        peer.connect(spec)?;
        let deadline = Instant::now() + timeout;
        loop {
            match peer.scene.connection_states().first().map(|(_, s)| *s) {
                Some(ConnectionState::Open) => break,
                Some(ConnectionState::Connecting) => {}
                _ => return Err(ClientError::Closed),
            }
            if Instant::now() >= deadline {
                return Err(ClientError::Timeout("connection"));
            }
            tokio::time::sleep(POLL).await;
        }
        Ok(Self { peer, events: Vec::new() })
    }

    pub fn wrap(peer: Peer) -> Self {
        Self { peer, events: Vec::new() }
    }

    /// Runs one update and keeps the room events for [`Session::take_events`].
    pub fn update(&mut self) -> Result<(), ClientError> {
        let events = self.peer.update(Instant::now())?;
        self.events.extend(events);
        Ok(())
    }

    pub fn take_events(&mut self) -> Vec<RoomEvent> {
        std::mem::take(&mut self.events)
    }

    pub async fn join(&mut self, target: JoinTarget, timeout: Duration) -> Result<RoomRecord, ClientError> {
        self.peer.rooms.lock().join(target)?;
        let deadline = Instant::now() + timeout;
        loop {
            let before = self.events.len();
            self.update()?;
            let mut outcome = None;
            self.events.retain(|e| match e {
                RoomEvent::JoinedRoom(r) if outcome.is_none() => {
                    outcome = Some(Ok(r.clone()));
                    false
                }
                RoomEvent::Rejected(why) if outcome.is_none() => {
                    outcome = Some(Err(ClientError::Rejected(why.clone())));
                    false
                }
                _ => true,
            });
            if let Some(o) = outcome {
                return o;
            }
            if self.peer.scene.open_connections() == 0 {
                return Err(ClientError::Closed);
            }
            if Instant::now() >= deadline {
                return Err(ClientError::Timeout("join"));
            }
            if self.events.len() == before {
                tokio::time::sleep(POLL).await;
            }
        }
    }

    /// Updates until `done` holds or `timeout` passes.
    pub async fn pump_until(&mut self, timeout: Duration, mut done: impl FnMut(&mut Session) -> bool) -> Result<(), ClientError> {
        let deadline = Instant::now() + timeout;
        loop {
            self.update()?;
            if done(self) {
                return Ok(());
            }
            if Instant::now() >= deadline {
                return Err(ClientError::Timeout("condition"));
            }
            tokio::time::sleep(POLL).await;
        }
    }
}
