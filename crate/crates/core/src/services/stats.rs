//! Bandwidth counters and prefix overhead.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::wire::{well_known, ComponentId, PREFIX_BYTES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    In,
    Out,
}

/// Traffic classes, by the component id messages are addressed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Category {
    Avatar,
    Rooms,
    Log,
    Latency,
    Spawn,
    Boids,
    Other,
}

impl Category {
    pub const ALL: [Category; 7] = [Category::Avatar, Category::Rooms, Category::Log, Category::Latency, Category::Spawn, Category::Boids, Category::Other];

    pub fn of(component: ComponentId) -> Self {
        match component {
            c if c == well_known::AVATAR => Category::Avatar,
            c if c == well_known::ROOM_SERVER || c == well_known::ROOM_CLIENT => Category::Rooms,
            c if c == well_known::LOG => Category::Log,
            c if c == well_known::LATENCY => Category::Latency,
            c if c == well_known::SPAWNER => Category::Spawn,
            c if c == well_known::BOIDS => Category::Boids,
            _ => Category::Other,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Avatar => "avatar",
            Category::Rooms => "rooms",
            Category::Log => "log",
            Category::Latency => "latency",
            Category::Spawn => "spawn",
            Category::Boids => "boids",
            Category::Other => "other",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Fraction of framed bytes spent on prefixes. Zero when nothing was sent.
pub fn overhead_ratio(message_count: u64, framed_bytes: u64) -> f64 {
    if framed_bytes == 0 {
        0.0
    } else {
        (PREFIX_BYTES as u64 * message_count) as f64 / framed_bytes as f64
    }
}

/// Counters for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSample {
    /// Seconds since the monitor was created.
    pub window_start: f64,
    pub window_end: f64,
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub categories: BTreeMap<String, u64>,
    pub message_count: u64,
    pub overhead_ratio: f64,
}

impl StatsSample {
    pub fn bytes_total(&self) -> u64 {
        self.bytes_in + self.bytes_out
    }

    pub fn category(&self, c: Category) -> u64 {
        self.categories.get(c.name()).copied().unwrap_or(0)
    }
}

/// Lock-free counters fed by the scene; sampled once per window.
#[derive(Debug)]
pub struct StatsMonitor {
    epoch: Instant,
    window_start: Mutex<Instant>,
    bytes_in: AtomicU64,
    bytes_out: AtomicU64,
    messages: AtomicU64,
    categories: [AtomicU64; 7],
}

impl Default for StatsMonitor {
    fn default() -> Self {
        Self::new(Instant::now())
    }
}

impl StatsMonitor {
    pub fn new(epoch: Instant) -> Self {
        Self {
            epoch,
            window_start: Mutex::new(epoch),
            bytes_in: AtomicU64::new(0),
            bytes_out: AtomicU64::new(0),
            messages: AtomicU64::new(0),
            categories: Default::default(),
        }
    }

    /// Counts one framed message of `wire_len` bytes.
    pub fn record(&self, direction: Direction, component: ComponentId, wire_len: usize) {
        let len = wire_len as u64;
        match direction {
            Direction::In => self.bytes_in.fetch_add(len, Ordering::Relaxed),
            Direction::Out => self.bytes_out.fetch_add(len, Ordering::Relaxed),
        };
        self.messages.fetch_add(1, Ordering::Relaxed);
        self.categories[Category::of(component).index()].fetch_add(len, Ordering::Relaxed);
    }

    /// Closes the current window at `window_end` and starts the next one.
    pub fn stats_sample(&self, window_end: Instant) -> StatsSample {
        let start = std::mem::replace(&mut *self.window_start.lock(), window_end);
        let bytes_in = self.bytes_in.swap(0, Ordering::Relaxed);
        let bytes_out = self.bytes_out.swap(0, Ordering::Relaxed);
        let message_count = self.messages.swap(0, Ordering::Relaxed);
        let categories = Category::ALL
            .iter()
            .map(|c| (c.name().to_string(), self.categories[c.index()].swap(0, Ordering::Relaxed)))
            .filter(|(_, v)| *v > 0)
            .collect();
        StatsSample {
            window_start: start.saturating_duration_since(self.epoch).as_secs_f64(),
            window_end: window_end.saturating_duration_since(self.epoch).as_secs_f64(),
            bytes_in,
            bytes_out,
            categories,
            message_count,
            overhead_ratio: overhead_ratio(message_count, bytes_in + bytes_out),
        }
    }
}
