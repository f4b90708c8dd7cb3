//! Offline analysis of JSONL event logs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use ubiq_core::services::latency::LatencyMatrix;
use ubiq_core::services::logging::LogEvent;
use ubiq_core::services::stats::{Category, StatsSample};
use ubiq_core::wire::PREFIX_BYTES;

#[derive(Debug, thiserror::Error)]
pub enum LogToolError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
}

/// Every event in `paths`, in file order, paired with its original line.
pub fn read_events(paths: &[impl AsRef<Path>]) -> Result<Vec<(LogEvent, String)>, LogToolError> {
    let mut out = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let text = std::fs::read_to_string(p).map_err(|source| LogToolError::Io { path: p.display().to_string(), source })?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let ev: LogEvent = serde_json::from_str(line).map_err(|e| LogToolError::Parse { path: p.display().to_string(), line: i + 1, message: e.to_string() })?;
            out.push((ev, line.to_string()));
        }
    }
    Ok(out)
}

/// All lines ordered by (ticks, peer), each kept byte for byte.
pub fn merge(paths: &[impl AsRef<Path>]) -> Result<Vec<String>, LogToolError> {
    let mut events = read_events(paths)?;
    events.sort_by(|(a, _), (b, _)| a.ticks.cmp(&b.ticks).then_with(|| a.peer.cmp(&b.peer)));
    Ok(events.into_iter().map(|(_, l)| l).collect())
}

#[derive(Deserialize)]
struct LatencyArgs {
    to: String,
    ms: f64,
}

pub fn latency_matrix(events: &[(LogEvent, String)]) -> LatencyMatrix {
    let mut m = LatencyMatrix::default();
    for (ev, _) in events.iter().filter(|(e, _)| e.event == "latency") {
        if let Ok(a) = serde_json::from_value::<LatencyArgs>(ev.args.clone()) {
            m.record(&ev.peer, &a.to, a.ms);
        }
    }
    m
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BandwidthRow {
    pub t: u64,
    pub bytes_total: u64,
    pub bytes_avatar: u64,
    pub bytes_rooms: u64,
    pub bytes_log: u64,
    pub messages: u64,
    pub overhead: f64,
}

/// Sums every peer's stats windows into one row per second, keyed by the
/// second each window started in.
pub fn bandwidth(events: &[(LogEvent, String)]) -> Vec<BandwidthRow> {
    let mut rows: BTreeMap<u64, BandwidthRow> = BTreeMap::new();
    for (ev, _) in events.iter().filter(|(e, _)| e.event == "stats") {
        let Ok(s) = serde_json::from_value::<StatsSample>(ev.args.clone()) else { continue };
        let t = s.window_start.max(0.0).floor() as u64;
        let row = rows.entry(t).or_insert_with(|| BandwidthRow { t, ..BandwidthRow::default() });
        row.bytes_total += s.bytes_total();
        row.bytes_avatar += s.category(Category::Avatar);
        row.bytes_rooms += s.category(Category::Rooms);
        row.bytes_log += s.category(Category::Log);
        row.messages += s.message_count;
    }
    rows.into_values()
        .map(|mut r| {
            r.overhead = ubiq_core::services::stats::overhead_ratio(r.messages, r.bytes_total);
            r
        })
        .collect()
}

pub fn bandwidth_csv(rows: &[BandwidthRow]) -> String {
    let mut out = String::from("t,bytes_total,bytes_avatar,bytes_rooms,bytes_log,overhead\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{},{:.6}\n", r.t, r.bytes_total, r.bytes_avatar, r.bytes_rooms, r.bytes_log, r.overhead));
    }
    out
}

/// Share of `framed` bytes taken by prefixes for `n` messages.
pub fn expected_overhead(n: u64, payload_bytes: u64) -> f64 {
    ubiq_core::services::stats::overhead_ratio(n, PREFIX_BYTES as u64 * n + payload_bytes)
}
