//! Experiments and tools on top of the networking stack: the distributed
//! boids example, headless bot fleets and capacity reports, the in-process
//! loopback demo, and log analysis.

pub mod boids;
pub mod bots;
pub mod capacity;
pub mod demo;
pub mod local;
pub mod logtool;

pub use local::LocalRelay;

/// Installs a stderr subscriber honouring `RUST_LOG`, defaulting to `warn`.
pub fn init_tracing() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into());
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}
