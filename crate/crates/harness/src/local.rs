//! A relay living in the same process, reached through in-memory connections.

use std::sync::Arc;
use std::time::Duration;

use ubiq_core::transport::{loopback_pair, loopback_pair_with_delay, Connection};
use ubiq_core::wire::MAX_LENGTH;
use ubiq_server::{EventLog, Relay};

pub struct LocalRelay {
    relay: Arc<Relay>,
}

impl Default for LocalRelay {
    fn default() -> Self {
        Self::new()
    }
}

impl LocalRelay {
    pub fn new() -> Self {
        Self { relay: Relay::new(Duration::from_secs(60), MAX_LENGTH, EventLog::disabled()) }
    }

    /// A fresh connection to the relay. Must be called inside a tokio runtime.
    pub fn connect(&self) -> Connection {
        let (near, far) = loopback_pair();
        self.relay.accept(far);
        near
    }

    /// Like [`LocalRelay::connect`], with `one_way` added in each direction.
    pub fn connect_with_delay(&self, one_way: Duration) -> Connection {
        let (near, far) = loopback_pair_with_delay(one_way);
        self.relay.accept(far);
        near
    }

    pub fn relay(&self) -> &Arc<Relay> {
        &self.relay
    }
}
