//! Rooms: rendezvous and membership, as a JSON protocol between each peer's
//! [`RoomClient`] and a [`RoomServerState`] reachable at the well-known
//! RoomServer address.
//!
//! Requests look like `{"type":"Join","args":{"joincode":"042"}}`. The client
//! also adds a top-level `"sceneid"` so the server knows where to address its
//! replies before the peer has joined anything.

mod client;
mod server;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::wire::NetworkId;

pub use client::{RoomClient, RoomError, RoomEvent};
pub use server::{allocate_code, Outcome, RoomServerState, ServerCounters, DEFAULT_IDLE_ROOM_SECS};

pub type Properties = BTreeMap<String, String>;

/// Largest serialized property map accepted for a peer or a room.
pub const MAX_PROPERTIES_BYTES: usize = 8 * 1024;

pub mod reasons {
    pub const NO_SUCH_ROOM: &str = "no such room";
    pub const BAD_REQUEST: &str = "bad request";
    pub const SERVER_FULL: &str = "server full";
    pub const NOT_IN_ROOM: &str = "not in a room";
    pub const PROPERTIES_TOO_LARGE: &str = "properties too large";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoomRecord {
    pub uuid: String,
    pub joincode: String,
    pub name: String,
    pub publish: bool,
    #[serde(default)]
    pub properties: Properties,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerRecord {
    pub uuid: String,
    pub sceneid: NetworkId,
    #[serde(default)]
    pub properties: Properties,
}

impl PeerRecord {
    pub fn new(sceneid: NetworkId) -> Self {
        Self { uuid: uuid::Uuid::new_v4().to_string(), sceneid, properties: Properties::new() }
    }
}

/// What discovery reports about a published room.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoomSummary {
    pub uuid: String,
    pub joincode: String,
    pub name: String,
    pub peers: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JoinTarget {
    Code(String),
    Uuid(String),
    New { name: String, publish: bool },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinArgs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joincode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uuid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub publish: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer: Option<PeerRecord>,
}

impl JoinArgs {
    pub fn new(target: JoinTarget, peer: PeerRecord) -> Self {
        let mut args = JoinArgs { peer: Some(peer), ..Default::default() };
        match target {
            JoinTarget::Code(code) => args.joincode = Some(code),
            JoinTarget::Uuid(uuid) => args.uuid = Some(uuid),
            JoinTarget::New { name, publish } => {
                args.name = Some(name);
                args.publish = Some(publish);
            }
        }
        args
    }

    pub fn target(&self) -> Option<JoinTarget> {
        match (&self.joincode, &self.uuid, &self.name) {
            (Some(code), None, None) => Some(JoinTarget::Code(code.clone())),
            (None, Some(uuid), None) => Some(JoinTarget::Uuid(uuid.clone())),
            (None, None, Some(name)) => Some(JoinTarget::New { name: name.clone(), publish: self.publish.unwrap_or(false) }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "args")]
pub enum Request {
    Join(JoinArgs),
    Leave,
    UpdatePeerProperties(Properties),
    UpdateRoomProperties(Properties),
    DiscoverRooms,
    Ping { id: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestEnvelope {
    #[serde(flatten)]
    pub request: Request,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sceneid: Option<NetworkId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "args")]
pub enum Response {
    SetRoom { room: RoomRecord, peers: Vec<PeerRecord> },
    PeerAdded(PeerRecord),
    PeerRemoved(PeerRecord),
    RoomUpdated(RoomRecord),
    PeerUpdated(PeerRecord),
    Rooms(Vec<RoomSummary>),
    Pong { id: u64 },
    Rejected { reason: String },
}

pub(crate) fn properties_size(props: &Properties) -> usize {
    serde_json::to_vec(props).map(|v| v.len()).unwrap_or(usize::MAX)
}
