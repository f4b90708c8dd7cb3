use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use parking_lot::Mutex;

use super::{properties_size, JoinArgs, JoinTarget, PeerRecord, Properties, Request, RequestEnvelope, Response, RoomRecord, RoomSummary, MAX_PROPERTIES_BYTES};
use crate::scene::{Component, ComponentError, NetworkContext, PeerScene, SceneError};
use crate::wire::{self, well_known, Address, WireMessage};

#[derive(Debug, thiserror::Error)]
pub enum RoomError {
    #[error("not in a room")]
    NotInRoom,
    #[error("property map of {0} bytes exceeds {MAX_PROPERTIES_BYTES}")]
    PropertiesTooLarge(usize),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RoomEvent {
    JoinedRoom(RoomRecord),
    Rejected(String),
    PeerAdded(PeerRecord),
    PeerRemoved(PeerRecord),
    PeerUpdated(PeerRecord),
    RoomUpdated(RoomRecord),
    Rooms(Vec<RoomSummary>),
    Pong(u64),
}

/// A peer's side of the rooms protocol. Registered at `(scene id, 2)`.
pub struct RoomClient {
    ctx: NetworkContext,
    me: PeerRecord,
    room: Option<RoomRecord>,
    peers: BTreeMap<String, PeerRecord>,
    events: VecDeque<RoomEvent>,
}

impl RoomClient {
    /// Creates the client and registers it with `scene`.
    pub fn attach(scene: &PeerScene) -> Result<Arc<Mutex<RoomClient>>, SceneError> {
        let address = Address::new(scene.id(), well_known::ROOM_CLIENT);
        let client = Arc::new(Mutex::new(RoomClient {
            ctx: scene.context(address),
            me: PeerRecord::new(scene.id()),
            room: None,
            peers: BTreeMap::new(),
            events: VecDeque::new(),
        }));
        scene.register(client.clone(), address)?;
        Ok(client)
    }

    pub fn me(&self) -> &PeerRecord {
        &self.me
    }

    pub fn room(&self) -> Option<&RoomRecord> {
        self.room.as_ref()
    }

    /// Every other member of the current room, keyed by peer uuid.
    pub fn peers(&self) -> &BTreeMap<String, PeerRecord> {
        &self.peers
    }

    pub fn take_events(&mut self) -> Vec<RoomEvent> {
        self.events.drain(..).collect()
    }

    fn request(&self, request: Request) -> Result<(), SceneError> {
        let envelope = RequestEnvelope { request, sceneid: Some(self.me.sceneid) };
        self.ctx.send_text(well_known::ROOM_SERVER_ADDRESS, &envelope)
    }

    /// Asks to join; the answer arrives as `JoinedRoom` or `Rejected`.
    pub fn join(&mut self, target: JoinTarget) -> Result<(), RoomError> {
        Ok(self.request(Request::Join(JoinArgs::new(target, self.me.clone())))?)
    }

    pub fn leave(&mut self) -> Result<(), RoomError> {
        if self.room.take().is_none() {
            return Ok(());
        }
        for (_, peer) in std::mem::take(&mut self.peers) {
            self.events.push_back(RoomEvent::PeerRemoved(peer));
        }
        Ok(self.request(Request::Leave)?)
    }

    /// Forgets the room without telling the server, e.g. after the
    /// connection dropped.
    pub fn reset(&mut self) {
        self.room = None;
        for (_, peer) in std::mem::take(&mut self.peers) {
            self.events.push_back(RoomEvent::PeerRemoved(peer));
        }
    }

    pub fn set_peer_properties(&mut self, updates: Properties) -> Result<(), RoomError> {
        if self.room.is_none() {
            return Err(RoomError::NotInRoom);
        }
        let mut merged = self.me.properties.clone();
        merged.extend(updates.clone());
        let size = properties_size(&merged);
        if size > MAX_PROPERTIES_BYTES {
            return Err(RoomError::PropertiesTooLarge(size));
        }
        if updates.is_empty() {
            return Ok(());
        }
        self.me.properties = merged;
        Ok(self.request(Request::UpdatePeerProperties(updates))?)
    }

    /// Room properties change when the server echoes them back as
    /// `RoomUpdated`, so concurrent writers converge on the server's order.
    pub fn set_room_properties(&mut self, updates: Properties) -> Result<(), RoomError> {
        let Some(room) = &self.room else { return Err(RoomError::NotInRoom) };
        let mut merged = room.properties.clone();
        merged.extend(updates.clone());
        let size = properties_size(&merged);
        if size > MAX_PROPERTIES_BYTES {
            return Err(RoomError::PropertiesTooLarge(size));
        }
        if updates.is_empty() {
            return Ok(());
        }
        Ok(self.request(Request::UpdateRoomProperties(updates))?)
    }

    /// Result arrives as a `Rooms` event.
    pub fn discover(&mut self) -> Result<(), RoomError> {
        Ok(self.request(Request::DiscoverRooms)?)
    }

    pub fn ping(&mut self, id: u64) -> Result<(), RoomError> {
        Ok(self.request(Request::Ping { id })?)
    }

    fn apply(&mut self, response: Response) {
        match response {
            Response::SetRoom { room, peers } => {
                for (_, old) in std::mem::take(&mut self.peers) {
                    self.events.push_back(RoomEvent::PeerRemoved(old));
                }
                self.room = Some(room.clone());
                self.events.push_back(RoomEvent::JoinedRoom(room));
                for peer in peers {
                    if peer.uuid == self.me.uuid {
                        continue;
                    }
                    self.peers.insert(peer.uuid.clone(), peer.clone());
                    self.events.push_back(RoomEvent::PeerAdded(peer));
                }
            }
            Response::PeerAdded(peer) => {
                if peer.uuid != self.me.uuid && self.room.is_some() && self.peers.insert(peer.uuid.clone(), peer.clone()).is_none() {
                    self.events.push_back(RoomEvent::PeerAdded(peer));
                }
            }
            Response::PeerRemoved(peer) => {
                if let Some(old) = self.peers.remove(&peer.uuid) {
                    self.events.push_back(RoomEvent::PeerRemoved(old));
                }
            }
            Response::PeerUpdated(peer) => {
                if let Some(slot) = self.peers.get_mut(&peer.uuid) {
                    *slot = peer.clone();
                    self.events.push_back(RoomEvent::PeerUpdated(peer));
                }
            }
            Response::RoomUpdated(room) => {
                if self.room.as_ref().is_some_and(|r| r.uuid == room.uuid) {
                    self.room = Some(room.clone());
                    self.events.push_back(RoomEvent::RoomUpdated(room));
                }
            }
            Response::Rooms(rooms) => self.events.push_back(RoomEvent::Rooms(rooms)),
            Response::Pong { id } => self.events.push_back(RoomEvent::Pong(id)),
            Response::Rejected { reason } => self.events.push_back(RoomEvent::Rejected(reason)),
        }
    }
}

impl Component for RoomClient {
    fn receive(&mut self, _ctx: &NetworkContext, msg: &WireMessage) -> Result<(), ComponentError> {
        let response: Response = wire::from_text_object(&msg.payload)?;
        self.apply(response);
        Ok(())
    }
}
