//! Structured event logs, one JSON object per line, optionally collected at a
//! single peer.
//!
//! A collector announces itself to every peer's logger at the shared log
//! address. From then on each logger also sends its lines, byte for byte, to
//! the collector's own log component. Lines emitted before any announcement
//! are held and sent once a collector is known.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use bytes::Bytes;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::scene::{Component, ComponentError, NetworkContext, PeerScene, SceneError};
use crate::wire::{self, well_known, Address, NetworkId, WireMessage};

/// Lines held back while no collector is known.
const MAX_PENDING_LINES: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    /// Microseconds on the emitter's monotonic clock.
    pub ticks: u64,
    pub peer: String,
    pub event: String,
    pub args: Value,
}

impl LogEvent {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("log events serialize")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Announcement {
    Collector { sceneid: NetworkId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Target {
    Local,
    Remote(NetworkId),
}

#[derive(Debug, Clone)]
struct Collected {
    peer: String,
    ticks: u64,
    line: Bytes,
}

/// Registered at the shared log address (for announcements) and at
/// `(scene id, 4)` (for lines, when collecting).
pub struct EventLogger {
    ctx: NetworkContext,
    peer: String,
    epoch: Instant,
    last_ticks: u64,
    file: Option<Box<dyn Write + Send>>,
    file_failed: bool,
    target: Option<Target>,
    pending: VecDeque<Bytes>,
    collected: Option<Vec<Collected>>,
    emitted: u64,
}

impl EventLogger {
    pub fn attach(scene: &PeerScene, peer_uuid: impl Into<String>) -> Result<Arc<Mutex<EventLogger>>, SceneError> {
        let own = Address::new(scene.id(), well_known::LOG);
        let logger = Arc::new(Mutex::new(EventLogger {
            ctx: scene.context(own),
            peer: peer_uuid.into(),
            epoch: Instant::now(),
            last_ticks: 0,
            file: None,
            file_failed: false,
            target: None,
            pending: VecDeque::new(),
            collected: None,
            emitted: 0,
        }));
        scene.register(logger.clone(), own)?;
        scene.register(logger.clone(), well_known::LOG_ANNOUNCE_ADDRESS)?;
        Ok(logger)
    }

    /// Also append every line to `sink`.
    pub fn set_file(&mut self, sink: Box<dyn Write + Send>) {
        self.file = Some(sink);
        self.file_failed = false;
    }

    pub fn peer(&self) -> &str {
        &self.peer
    }

    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    pub fn is_collecting(&self) -> bool {
        self.target == Some(Target::Local)
    }

    fn next_ticks(&mut self) -> u64 {
        let now = self.epoch.elapsed().as_micros() as u64;
        self.last_ticks = self.last_ticks.max(now);
        self.last_ticks
    }

    /// Writes one event locally and forwards it to the collector, if any.
    pub fn log_event(&mut self, event: impl Into<String>, args: Value) -> Result<LogEvent, SceneError> {
        let record = LogEvent { ticks: self.next_ticks(), peer: self.peer.clone(), event: event.into(), args };
        let line = Bytes::from(record.to_line());
        self.emitted += 1;
        if let Some(file) = self.file.as_mut() {
            let res = file.write_all(&line).and_then(|_| file.write_all(b"\n"));
            if let Err(e) = res {
                if !self.file_failed {
                    tracing::error!(peer = %self.peer, error = %e, "event log write failed");
                    self.file_failed = true;
                }
            }
        }
        match self.target {
            Some(Target::Local) => self.store(record.peer.clone(), record.ticks, line),
            Some(Target::Remote(id)) => self.ctx.send(Address::new(id, well_known::LOG), line)?,
            None => {
                if self.pending.len() == MAX_PENDING_LINES {
                    self.pending.pop_front();
                }
                self.pending.push_back(line);
            }
        }
        Ok(record)
    }

    fn store(&mut self, peer: String, ticks: u64, line: Bytes) {
        if let Some(c) = self.collected.as_mut() {
            c.push(Collected { peer, ticks, line });
        }
    }

    /// Becomes the collector for everyone who hears the announcement.
    pub fn collector_start(&mut self) -> Result<(), SceneError> {
        if self.collected.is_none() {
            self.collected = Some(Vec::new());
        }
        self.target = Some(Target::Local);
        for line in std::mem::take(&mut self.pending) {
            if let Ok(ev) = serde_json::from_slice::<LogEvent>(&line) {
                self.store(ev.peer, ev.ticks, line);
            }
        }
        self.announce()
    }

    /// Repeats the announcement, e.g. when a peer joins after collection began.
    pub fn announce(&self) -> Result<(), SceneError> {
        if self.target != Some(Target::Local) {
            return Ok(());
        }
        self.ctx.send_text(well_known::LOG_ANNOUNCE_ADDRESS, &Announcement::Collector { sceneid: self.ctx.scene_id() })
    }

    /// Lines collected so far.
    pub fn collected_count(&self) -> usize {
        self.collected.as_ref().map_or(0, Vec::len)
    }

    /// Writes every collected line to `path`, ordered by (peer, ticks), and
    /// returns how many were written. The collection starts over afterwards.
    pub fn collector_flush(&mut self, path: &Path) -> std::io::Result<usize> {
        let mut lines = self.collected.as_mut().map(std::mem::take).unwrap_or_default();
        lines.sort_by(|a, b| a.peer.cmp(&b.peer).then(a.ticks.cmp(&b.ticks)));
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for l in &lines {
            out.write_all(&l.line)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(lines.len())
    }
}

impl Component for EventLogger {
    fn receive(&mut self, ctx: &NetworkContext, msg: &WireMessage) -> Result<(), ComponentError> {
        if msg.address == well_known::LOG_ANNOUNCE_ADDRESS {
            let Announcement::Collector { sceneid } = wire::from_text_object(&msg.payload)?;
            if sceneid == ctx.scene_id() {
                return Ok(());
            }
            self.target = Some(Target::Remote(sceneid));
            let to = Address::new(sceneid, well_known::LOG);
            for line in std::mem::take(&mut self.pending) {
                ctx.send(to, line)?;
            }
            return Ok(());
        }
        if self.collected.is_none() {
            return Ok(());
        }
        let event: LogEvent = wire::from_text_object(&msg.payload)?;
        self.store(event.peer, event.ticks, msg.payload.clone());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::loopback_pair;
    use serde_json::json;

    #[derive(Clone, Default)]
    struct SharedBuf(Arc<Mutex<Vec<u8>>>);

    impl Write for SharedBuf {
        fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
            self.0.lock().extend_from_slice(buf);
            Ok(buf.len())
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }

    struct Broken;

    impl Write for Broken {
        fn write(&mut self, _: &[u8]) -> std::io::Result<usize> {
            Err(std::io::Error::other("disk full"))
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn line_format() {
        let scene = PeerScene::new(NetworkId::new(1000).unwrap());
        let logger = EventLogger::attach(&scene, "peer-a").unwrap();
        let buf = SharedBuf::default();
        logger.lock().set_file(Box::new(buf.clone()));
        logger.lock().log_event("SpawnObject", json!({"blueprint": "firework"})).unwrap();
        let text = String::from_utf8(buf.0.lock().clone()).unwrap();
        assert!(text.ends_with('\n'));
        let v: Value = serde_json::from_str(text.trim_end()).unwrap();
        assert_eq!(v["peer"], "peer-a");
        assert_eq!(v["event"], "SpawnObject");
        assert_eq!(v["args"], json!({"blueprint": "firework"}));
        assert!(v["ticks"].is_u64());
    }

    #[test]
    fn bulk_ticks_are_non_decreasing() {
        let scene = PeerScene::new(NetworkId::new(1000).unwrap());
        let logger = EventLogger::attach(&scene, "p").unwrap();
        let buf = SharedBuf::default();
        logger.lock().set_file(Box::new(buf.clone()));
        for i in 0..1000 {
            logger.lock().log_event("e", json!({"i": i})).unwrap();
        }
        let text = String::from_utf8(buf.0.lock().clone()).unwrap();
        let ticks: Vec<u64> = text.lines().map(|l| serde_json::from_str::<LogEvent>(l).unwrap().ticks).collect();
        assert_eq!(ticks.len(), 1000);
        assert!(ticks.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn write_failure_does_not_stop_forwarding() {
        let scene = PeerScene::new(NetworkId::new(1000).unwrap());
        let logger = EventLogger::attach(&scene, "p").unwrap();
        let mut l = logger.lock();
        l.set_file(Box::new(Broken));
        l.collector_start().unwrap();
        l.log_event("a", json!({})).unwrap();
        l.log_event("b", json!({})).unwrap();
        assert_eq!(l.collected_count(), 2);
    }

    #[test]
    fn remote_collection_is_byte_identical() {
        let mut a = PeerScene::new(NetworkId::new(1000).unwrap());
        let mut b = PeerScene::new(NetworkId::new(2000).unwrap());
        let (ca, cb) = loopback_pair();
        a.add_connection(ca);
        b.add_connection(cb);
        let la = EventLogger::attach(&a, "a").unwrap();
        let lb = EventLogger::attach(&b, "b").unwrap();
        // Emitted before any collector exists: held, then delivered.
        let early = lb.lock().log_event("early", json!({"n": 1})).unwrap();
        la.lock().collector_start().unwrap();
        b.dispatch();
        let late = lb.lock().log_event("late", json!({"n": 2})).unwrap();
        a.dispatch();
        la.lock().log_event("own", json!({})).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("collected.jsonl");
        assert_eq!(la.lock().collector_flush(&path).unwrap(), 3);
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines.contains(&early.to_line().as_str()));
        assert!(lines.contains(&late.to_line().as_str()));
        // Sorted by peer then ticks.
        assert!(lines[0].contains("\"peer\":\"a\""));
    }

    #[test]
    fn flush_with_nothing_creates_an_empty_file() {
        let scene = PeerScene::new(NetworkId::new(1000).unwrap());
        let logger = EventLogger::attach(&scene, "p").unwrap();
        logger.lock().collector_start().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        assert_eq!(logger.lock().collector_flush(&path).unwrap(), 0);
        assert_eq!(std::fs::read(&path).unwrap().len(), 0);
    }

    #[test]
    fn newest_announcement_wins() {
        let mut a = PeerScene::new(NetworkId::new(1000).unwrap());
        let mut b = PeerScene::new(NetworkId::new(2000).unwrap());
        let (ca, cb) = loopback_pair();
        a.add_connection(ca);
        b.add_connection(cb);
        let la = EventLogger::attach(&a, "a").unwrap();
        let lb = EventLogger::attach(&b, "b").unwrap();
        la.lock().collector_start().unwrap();
        b.dispatch();
        lb.lock().collector_start().unwrap();
        a.dispatch();
        la.lock().log_event("to-b", json!({})).unwrap();
        b.dispatch();
        assert_eq!(lb.lock().collected_count(), 1);
    }
}
