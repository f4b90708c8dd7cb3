//! Services built on top of messaging: spawning, event logging, latency
//! metering and bandwidth statistics.

pub mod avatar;
pub mod boids;
pub mod latency;
pub mod logging;
pub mod spawn;
pub mod stats;
