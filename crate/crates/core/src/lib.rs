//! Headless social-VR networking core.
//!
//! Messages are binary blobs addressed to an `(object, component)` pair and
//! prefixed by a 14-byte header. Each peer owns one [`PeerScene`], which routes
//! inbound messages to the components registered at the exact address and
//! sends outbound messages on every connection it holds. Fanout is the job of
//! the network (the relay), never of the sender.

pub mod admin;
pub mod graph;
pub mod peer;
pub mod rooms;
pub mod scene;
pub mod services;
pub mod transport;
pub mod wire;

pub use graph::{NodeId, SceneGraph};
pub use peer::Peer;
pub use scene::{Component, ComponentHandle, NetworkContext, PeerScene, SceneError};
pub use wire::{Address, ComponentId, Frame, FrameDecoder, NetworkId, WireError, WireMessage};
