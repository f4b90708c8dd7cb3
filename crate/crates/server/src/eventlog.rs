use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use parking_lot::Mutex;
use serde_json::Value;
use ubiq_core::services::logging::LogEvent;

/// Append-only JSONL event log in the same line format peers use.
pub struct EventLog {
    epoch: Instant,
    out: Option<Mutex<BufWriter<File>>>,
}

impl EventLog {
    pub fn disabled() -> Self {
        Self { epoch: Instant::now(), out: None }
    }

    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { epoch: Instant::now(), out: Some(Mutex::new(BufWriter::new(file))) })
    }

    pub fn event(&self, event: &str, args: Value) {
        tracing::info!(event, %args);
        let Some(out) = &self.out else { return };
        let line = LogEvent { ticks: self.epoch.elapsed().as_micros() as u64, peer: "server".into(), event: event.into(), args }.to_line();
        let mut out = out.lock();
        if let Err(e) = writeln!(out, "{line}").and_then(|_| out.flush()) {
            tracing::error!(error = %e, "server log write failed");
        }
    }
}
