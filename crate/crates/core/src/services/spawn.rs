//! Replicated object spawning.
//!
//! A blueprint is a named factory that builds the components of one object
//! around a given [`NetworkId`]. Spawning mints a fresh id, builds the object
//! locally and tells every other peer's spawner to build the same blueprint
//! with the same id. Only that one id needs to be shared for the whole object.

use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::Mutex;
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::scene::{Component, ComponentError, ComponentHandle, NetworkContext, PeerScene, SceneError};
use crate::wire::{self, well_known, Address, ComponentId, NetworkId, WireMessage};

pub type Factory = Box<dyn Fn(NetworkId) -> Vec<(ComponentId, ComponentHandle)> + Send + Sync>;

#[derive(Default)]
pub struct BlueprintRegistry {
    factories: BTreeMap<String, Factory>,
}

impl BlueprintRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a blueprint. Returns false, leaving the old one, if the name is taken.
    pub fn insert<F>(&mut self, name: impl Into<String>, factory: F) -> bool
    where
        F: Fn(NetworkId) -> Vec<(ComponentId, ComponentHandle)> + Send + Sync + 'static,
    {
        let name = name.into();
        if self.factories.contains_key(&name) {
            return false;
        }
        self.factories.insert(name, Box::new(factory));
        true
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    fn build(&self, name: &str, id: NetworkId) -> Option<Vec<(ComponentId, ComponentHandle)>> {
        self.factories.get(name).map(|f| f(id))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SpawnError {
    #[error("unknown blueprint {0:?}")]
    UnknownBlueprint(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpawnMessage {
    #[serde(rename = "type")]
    pub kind: String,
    pub blueprint: String,
    #[serde(rename = "networkId")]
    pub network_id: NetworkId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpawnOutcome {
    Instantiated(NetworkId),
    Ignored(String),
}

struct Instance {
    blueprint: String,
    components: Vec<(Address, ComponentHandle)>,
}

/// Registered at the shared spawner address on every peer.
pub struct Spawner {
    ctx: NetworkContext,
    registry: Arc<BlueprintRegistry>,
    instances: BTreeMap<NetworkId, Instance>,
    rng: StdRng,
    warnings: u64,
}

impl Spawner {
    pub fn attach(scene: &PeerScene, registry: Arc<BlueprintRegistry>) -> Result<Arc<Mutex<Spawner>>, SceneError> {
        Self::attach_with_rng(scene, registry, StdRng::from_entropy())
    }

    pub fn attach_with_rng(scene: &PeerScene, registry: Arc<BlueprintRegistry>, rng: StdRng) -> Result<Arc<Mutex<Spawner>>, SceneError> {
        let spawner = Arc::new(Mutex::new(Spawner {
            ctx: scene.context(well_known::SPAWNER_ADDRESS),
            registry,
            instances: BTreeMap::new(),
            rng,
            warnings: 0,
        }));
        scene.register(spawner.clone(), well_known::SPAWNER_ADDRESS)?;
        Ok(spawner)
    }

    /// Builds `blueprint` here under a fresh id and asks every other peer to do the same.
    pub fn spawn(&mut self, blueprint: &str) -> Result<NetworkId, SpawnError> {
        if !self.registry.contains(blueprint) {
            return Err(SpawnError::UnknownBlueprint(blueprint.to_string()));
        }
        let mut id = wire::generate_network_id(&mut self.rng);
        while self.instances.contains_key(&id) {
            id = wire::generate_network_id(&mut self.rng);
        }
        self.instantiate(&self.ctx.clone(), blueprint, id)?;
        let msg = SpawnMessage { kind: "spawn".into(), blueprint: blueprint.to_string(), network_id: id };
        self.ctx.send_text(well_known::SPAWNER_ADDRESS, &msg)?;
        Ok(id)
    }

    fn instantiate(&mut self, ctx: &NetworkContext, blueprint: &str, id: NetworkId) -> Result<(), SpawnError> {
        let parts = self.registry.build(blueprint, id).ok_or_else(|| SpawnError::UnknownBlueprint(blueprint.to_string()))?;
        let mut components = Vec::with_capacity(parts.len());
        for (component, handle) in parts {
            let address = Address::new(id, component);
            ctx.register(handle.clone(), address)?;
            components.push((address, handle));
        }
        self.instances.insert(id, Instance { blueprint: blueprint.to_string(), components });
        Ok(())
    }

    /// Handles a spawn request from another peer.
    pub fn on_spawn_message(&mut self, ctx: &NetworkContext, payload: &[u8]) -> SpawnOutcome {
        let msg: SpawnMessage = match wire::from_text_object(payload) {
            Ok(m) => m,
            Err(e) => return self.ignore(format!("unreadable spawn message: {e}")),
        };
        if msg.kind != "spawn" {
            return self.ignore(format!("unexpected message type {:?}", msg.kind));
        }
        if self.instances.contains_key(&msg.network_id) {
            return self.ignore(format!("object {} already exists", msg.network_id));
        }
        if !self.registry.contains(&msg.blueprint) {
            return self.ignore(format!("unknown blueprint {:?}", msg.blueprint));
        }
        match self.instantiate(ctx, &msg.blueprint, msg.network_id) {
            Ok(()) => SpawnOutcome::Instantiated(msg.network_id),
            Err(e) => self.ignore(e.to_string()),
        }
    }

    fn ignore(&mut self, reason: String) -> SpawnOutcome {
        tracing::warn!(%reason, "spawn ignored");
        self.warnings += 1;
        SpawnOutcome::Ignored(reason)
    }

    pub fn warnings(&self) -> u64 {
        self.warnings
    }

    /// Every object this peer holds, with its blueprint.
    pub fn instances(&self) -> BTreeMap<NetworkId, String> {
        self.instances.iter().map(|(id, i)| (*id, i.blueprint.clone())).collect()
    }

    /// Removes an object locally, unregistering its components.
    pub fn despawn_local(&mut self, id: NetworkId) -> bool {
        let Some(instance) = self.instances.remove(&id) else { return false };
        for (address, handle) in &instance.components {
            self.ctx.unregister(handle, *address);
        }
        true
    }
}

impl Component for Spawner {
    fn receive(&mut self, ctx: &NetworkContext, msg: &WireMessage) -> Result<(), ComponentError> {
        self.on_spawn_message(ctx, &msg.payload);
        Ok(())
    }
}
