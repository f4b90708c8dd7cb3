//! Peer-to-peer latency, sampled as half the ping round trip.
//!
//! Once per interval the meter pings the latency component of every known
//! peer. The ping carries the sender's send time, the pong echoes it back, so
//! only the pinger's monotonic clock is involved.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::scene::{Component, ComponentError, NetworkContext, PeerScene, SceneError};
use crate::wire::{self, well_known, Address, NetworkId, WireMessage};

pub const DEFAULT_INTERVAL: Duration = Duration::from_secs(1);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Probe {
    Ping { id: u64, t: u64, from: NetworkId, uuid: String },
    Pong { id: u64, t: u64, uuid: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    pub last: f64,
}

impl RunningStats {
    pub fn push(&mut self, ms: f64) {
        self.count += 1;
        self.mean += (ms - self.mean) / self.count as f64;
        self.last = ms;
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0 {
            return;
        }
        let total = self.count + other.count;
        self.mean = (self.mean * self.count as f64 + other.mean * other.count as f64) / total as f64;
        self.count = total;
        self.last = other.last;
    }
}

/// Directed latency statistics between peers, in milliseconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyMatrix {
    pub peers: Vec<String>,
    pub samples: BTreeMap<String, BTreeMap<String, RunningStats>>,
}

impl LatencyMatrix {
    pub fn record(&mut self, from: &str, to: &str, ms: f64) {
        if from == to {
            return;
        }
        for p in [from, to] {
            if !self.peers.iter().any(|x| x == p) {
                self.peers.push(p.to_string());
            }
        }
        self.samples.entry(from.to_string()).or_default().entry(to.to_string()).or_default().push(ms.max(0.0));
    }

    pub fn get(&self, from: &str, to: &str) -> Option<&RunningStats> {
        self.samples.get(from).and_then(|row| row.get(to))
    }

    pub fn merge(&mut self, other: &LatencyMatrix) {
        for p in &other.peers {
            if !self.peers.contains(p) {
                self.peers.push(p.clone());
            }
        }
        for (from, row) in &other.samples {
            for (to, stats) in row {
                self.samples.entry(from.clone()).or_default().entry(to.clone()).or_default().merge(stats);
            }
        }
    }

    /// Number of (from, to) pairs with at least one sample.
    pub fn populated_pairs(&self) -> usize {
        self.samples.values().map(|row| row.values().filter(|s| s.count > 0).count()).sum()
    }

    /// Square matrix of mean latencies; empty cells for the diagonal and for
    /// pairs without samples.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("from");
        for p in &self.peers {
            out.push(',');
            out.push_str(p);
        }
        out.push('\n');
        for from in &self.peers {
            out.push_str(from);
            for to in &self.peers {
                out.push(',');
                if let Some(s) = self.get(from, to) {
                    out.push_str(&format!("{:.3}", s.mean));
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub to: String,
    pub ms: f64,
}

pub type Clock = Arc<dyn Fn() -> Instant + Send + Sync>;

/// Registered at `(scene id, 3)`. Answers pings from others and pings them.
pub struct LatencyMeter {
    ctx: NetworkContext,
    uuid: String,
    epoch: Instant,
    clock: Clock,
    interval: Duration,
    next_due: Option<Instant>,
    seq: u64,
    peers: BTreeMap<String, NetworkId>,
    matrix: LatencyMatrix,
    samples: Vec<LatencySample>,
}

impl LatencyMeter {
    pub fn attach(scene: &PeerScene, uuid: impl Into<String>) -> Result<Arc<Mutex<LatencyMeter>>, SceneError> {
        Self::attach_with_clock(scene, uuid, Arc::new(Instant::now))
    }

    pub fn attach_with_clock(scene: &PeerScene, uuid: impl Into<String>, clock: Clock) -> Result<Arc<Mutex<LatencyMeter>>, SceneError> {
        let address = Address::new(scene.id(), well_known::LATENCY);
        let epoch = clock();
        let meter = Arc::new(Mutex::new(LatencyMeter {
            ctx: scene.context(address),
            uuid: uuid.into(),
            epoch,
            clock,
            interval: DEFAULT_INTERVAL,
            next_due: None,
            seq: 0,
            peers: BTreeMap::new(),
            matrix: LatencyMatrix::default(),
            samples: Vec::new(),
        }));
        scene.register(meter.clone(), address)?;
        Ok(meter)
    }

    pub fn set_interval(&mut self, interval: Duration) {
        self.interval = interval;
    }

    pub fn add_peer(&mut self, uuid: impl Into<String>, scene: NetworkId) {
        self.peers.insert(uuid.into(), scene);
    }

    pub fn remove_peer(&mut self, uuid: &str) {
        self.peers.remove(uuid);
    }

    pub fn matrix(&self) -> &LatencyMatrix {
        &self.matrix
    }

    pub fn samples(&self) -> &[LatencySample] {
        &self.samples
    }

    pub fn take_samples(&mut self) -> Vec<LatencySample> {
        std::mem::take(&mut self.samples)
    }

    fn micros(&self, t: Instant) -> u64 {
        t.saturating_duration_since(self.epoch).as_micros() as u64
    }

    /// Pings every known peer if an interval has elapsed. Returns pings sent.
    pub fn latency_tick(&mut self, now: Instant) -> Result<usize, SceneError> {
        if self.next_due.is_some_and(|due| now < due) {
            return Ok(0);
        }
        self.next_due = Some(match self.next_due {
            // Keep the cadence, but never try to catch up on missed ticks.
            Some(due) if now < due + self.interval => due + self.interval,
            _ => now + self.interval,
        });
        let t = self.micros(now);
        for (i, scene) in self.peers.values().enumerate() {
            let probe = Probe::Ping { id: self.seq + i as u64, t, from: self.ctx.scene_id(), uuid: self.uuid.clone() };
            self.ctx.send_text(Address::new(*scene, well_known::LATENCY), &probe)?;
        }
        self.seq += self.peers.len() as u64;
        Ok(self.peers.len())
    }
}

impl Component for LatencyMeter {
    fn receive(&mut self, ctx: &NetworkContext, msg: &WireMessage) -> Result<(), ComponentError> {
        match wire::from_text_object::<Probe>(&msg.payload)? {
            Probe::Ping { id, t, from, .. } => {
                let pong = Probe::Pong { id, t, uuid: self.uuid.clone() };
                ctx.send_text(Address::new(from, well_known::LATENCY), &pong)?;
            }
            Probe::Pong { t, uuid, .. } => {
                let now = self.micros((self.clock)());
                let ms = now.saturating_sub(t) as f64 / 2.0 / 1000.0;
                self.matrix.record(&self.uuid, &uuid, ms);
                self.samples.push(LatencySample { to: uuid, ms });
            }
        }
        Ok(())
    }
}
