//! JSON bodies of the relay's HTTP admin API.

use serde::{Deserialize, Serialize};

use crate::rooms::ServerCounters;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerStats {
    pub uptime_secs: f64,
    pub connections: usize,
    pub rooms: usize,
    pub counters: ServerCounters,
    /// Connections closed for exceeding their outbound buffer.
    pub slow_consumers: u64,
}
