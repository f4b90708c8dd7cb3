//! Headless bots that join a room and stream poses, for load testing.
//!
//! Every pose carries its sequence number and send time, so receivers can
//! measure relayed one-way latency (all bots share one process clock) and
//! count loss per sender.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use bytes::{BufMut, Bytes, BytesMut};
use parking_lot::Mutex;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use ubiq_client::{ClientError, Session};
use ubiq_core::rooms::{JoinTarget, RoomEvent};
use ubiq_core::scene::{Component, ComponentError, NetworkContext};
use ubiq_core::services::avatar::AvatarPose;
use ubiq_core::services::spawn::BlueprintRegistry;
use ubiq_core::transport::ConnectionSpec;
use ubiq_core::wire::{self, well_known, Address, NetworkId, WireMessage};

/// Sequence number and send time lead every bot payload.
pub const STAMP_BYTES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoomChoice {
    New,
    Code(String),
}

impl std::str::FromStr for RoomChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "new" {
            Ok(RoomChoice::New)
        } else if s.len() == 3 && s.bytes().all(|c| c.is_ascii_digit()) {
            Ok(RoomChoice::Code(s.to_string()))
        } else {
            Err(format!("room must be a three-digit code or \"new\", got {s:?}"))
        }
    }
}

#[derive(Debug, Clone)]
pub struct BotConfig {
    pub server: ConnectionSpec,
    pub room: RoomChoice,
    pub bots: usize,
    pub pose_rate: f64,
    pub payload_bytes: usize,
    pub duration: Duration,
    /// Time after sending stops during which bots keep receiving.
    pub drain: Duration,
    pub setup_timeout: Duration,
    /// One JSONL event log per bot is written here when set.
    pub log_dir: Option<PathBuf>,
}

impl BotConfig {
    pub fn new(server: ConnectionSpec, bots: usize) -> Self {
        Self {
            server,
            room: RoomChoice::New,
            bots,
            pose_rate: 60.0,
            payload_bytes: ubiq_core::services::avatar::POSE_BYTES,
            duration: Duration::from_secs(30),
            drain: Duration::from_secs(1),
            setup_timeout: Duration::from_secs(30),
            log_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), BotError> {
        if self.bots == 0 {
            return Err(BotError::Config("bots must be positive".into()));
        }
        if !self.pose_rate.is_finite() || self.pose_rate <= 0.0 {
            return Err(BotError::Config("pose rate must be positive".into()));
        }
        if self.payload_bytes < STAMP_BYTES || self.payload_bytes > wire::MAX_PAYLOAD {
            return Err(BotError::Config(format!("payload bytes must be within {STAMP_BYTES}..={}", wire::MAX_PAYLOAD)));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BotError {
    #[error("invalid bot configuration: {0}")]
    Config(String),
    #[error("bot {0}: {1}")]
    Bot(usize, ClientError),
    #[error("log: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            count: sorted.len(),
            mean_ms: sorted.iter().sum::<f64>() / sorted.len() as f64,
            p50_ms: percentile(&sorted, 0.50),
            p95_ms: percentile(&sorted, 0.95),
            max_ms: *sorted.last().expect("non-empty"),
        }
    }
}

/// Nearest-rank percentile of sorted samples.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BotSummary {
    pub index: usize,
    pub uuid: String,
    pub sent: u64,
    pub received: u64,
    pub expected: u64,
    pub lost: u64,
    pub duplicates: u64,
    pub latency: LatencyStats,
    /// Half round trip to the next bot, from the latency meter.
    pub meter_half_rtt_ms: Option<f64>,
    pub meter_samples: usize,
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub inbound_pose_bytes_per_sec: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FleetSummary {
    pub bots: usize,
    pub pose_rate: f64,
    pub payload_bytes: usize,
    pub duration_secs: f64,
    pub joincode: Option<String>,
    pub sent: u64,
    pub received: u64,
    pub expected: u64,
    pub lost: u64,
    pub latency: LatencyStats,
    pub per_bot: Vec<BotSummary>,
}

/// Bot payload: sequence number and microseconds since the fleet epoch, then
/// pose bytes repeated to fill.
pub fn stamp_payload(seq: u64, sent_us: u64, pose: &AvatarPose, len: usize) -> Bytes {
    let mut out = BytesMut::with_capacity(len);
    out.put_u64_le(seq);
    out.put_u64_le(sent_us);
    let pose = pose.encode();
    while out.len() < len {
        let take = (len - out.len()).min(pose.len());
        out.put_slice(&pose[..take]);
    }
    out.freeze()
}

pub fn read_stamp(payload: &[u8]) -> Option<(u64, u64)> {
    let seq = u64::from_le_bytes(payload.get(0..8)?.try_into().ok()?);
    let sent = u64::from_le_bytes(payload.get(8..16)?.try_into().ok()?);
    Some((seq, sent))
}

#[derive(Default)]
struct SenderTally {
    received: u64,
    seen: std::collections::BTreeSet<u64>,
}

/// Registered at each other bot's avatar address.
struct PoseSink {
    epoch: Instant,
    recording: bool,
    latencies_ms: Vec<f64>,
    pose_bytes: u64,
    duplicates: u64,
    senders: BTreeMap<NetworkId, SenderTally>,
}

impl Component for PoseSink {
    fn receive(&mut self, _ctx: &NetworkContext, msg: &WireMessage) -> Result<(), ComponentError> {
        let now_us = self.epoch.elapsed().as_micros() as u64;
        let (seq, sent_us) = read_stamp(&msg.payload).ok_or("short pose payload")?;
        if !self.recording {
            return Ok(());
        }
        let tally = self.senders.entry(msg.address.object).or_default();
        if !tally.seen.insert(seq) {
            self.duplicates += 1;
            return Ok(());
        }
        tally.received += 1;
        self.pose_bytes += (msg.payload.len() + wire::PREFIX_BYTES) as u64;
        self.latencies_ms.push(now_us.saturating_sub(sent_us) as f64 / 1000.0);
        Ok(())
    }
}

struct Bot {
    index: usize,
    session: Session,
    sink: Arc<Mutex<PoseSink>>,
    neighbour: Option<String>,
}

fn watch_peers(bot: &mut Bot, sink_handle: &ubiq_core::ComponentHandle) {
    for ev in bot.session.take_events() {
        if let RoomEvent::PeerAdded(p) = ev {
            let addr = Address::new(p.sceneid, well_known::AVATAR);
            if !bot.session.peer.scene.context(addr).is_registered(addr) {
                let _ = bot.session.peer.scene.register(sink_handle.clone(), addr);
            }
        }
    }
}

/// Connects the fleet, joins one room, streams poses for the configured
/// duration and reports. Bots that fail to connect or join are reported with
/// their error and left out of the run.
pub async fn run_bots(config: &BotConfig) -> Result<FleetSummary, BotError> {
    config.validate()?;
    let mut summary = FleetSummary {
        bots: config.bots,
        pose_rate: config.pose_rate,
        payload_bytes: config.payload_bytes,
        duration_secs: config.duration.as_secs_f64(),
        ..FleetSummary::default()
    };
    if config.duration.is_zero() {
        return Ok(summary);
    }
    if let Some(dir) = &config.log_dir {
        std::fs::create_dir_all(dir)?;
    }
    let epoch = Instant::now();
    let registry = Arc::new(BlueprintRegistry::new());
    let mut rng = rand::rngs::StdRng::from_entropy();
    let mut bots: Vec<Bot> = Vec::new();
    let mut failed: Vec<BotSummary> = Vec::new();
    let mut code = match &config.room {
        RoomChoice::Code(c) => Some(c.clone()),
        RoomChoice::New => None,
    };

    for index in 0..config.bots {
        let attempt = async {
            let mut session = Session::connect(wire::generate_network_id(&mut rng), config.server.clone(), registry.clone(), config.setup_timeout).await?;
            let target = match &code {
                Some(c) => JoinTarget::Code(c.clone()),
                None => JoinTarget::New { name: "bots".into(), publish: true },
            };
            let room = session.join(target, config.setup_timeout).await?;
            Ok::<_, ClientError>((session, room))
        };
        match attempt.await {
            Ok((session, room)) => {
                code.get_or_insert(room.joincode);
                let sink = Arc::new(Mutex::new(PoseSink { epoch, recording: false, latencies_ms: Vec::new(), pose_bytes: 0, duplicates: 0, senders: BTreeMap::new() }));
                bots.push(Bot { index, session, sink, neighbour: None });
            }
            Err(e) => {
                tracing::error!(bot = index, error = %e, "bot failed to start");
                failed.push(BotSummary { index, error: Some(e.to_string()), ..BotSummary::default() });
            }
        }
    }
    summary.joincode = code;

    // Wait until everyone knows everyone, so no pose is sent to a stranger.
    let n = bots.len();
    let deadline = Instant::now() + config.setup_timeout;
    loop {
        let mut ready = true;
        for bot in bots.iter_mut() {
            bot.session.update().map_err(|e| BotError::Bot(bot.index, e))?;
            let handle: ubiq_core::ComponentHandle = bot.sink.clone();
            watch_peers(bot, &handle);
            ready &= bot.session.peer.rooms.lock().peers().len() + 1 >= n;
        }
        if ready {
            break;
        }
        if Instant::now() > deadline {
            tracing::warn!("not every bot saw the whole room before the deadline");
            break;
        }
        tokio::time::sleep(Duration::from_millis(2)).await;
    }

    // Each bot meters latency to the next one only, keeping probe fanout linear.
    let uuids: Vec<String> = bots.iter().map(|b| b.session.peer.uuid()).collect();
    for (i, bot) in bots.iter_mut().enumerate() {
        let next = &uuids[(i + 1) % n];
        let scene = bot.session.peer.rooms.lock().peers().get(next).map(|p| p.sceneid);
        let mut meter = bot.session.peer.latency.lock();
        for u in &uuids {
            meter.remove_peer(u);
        }
        if let Some(scene) = scene {
            meter.add_peer(next.clone(), scene);
            bot.neighbour = Some(next.clone());
        }
    }

    let start = Instant::now() + Duration::from_millis(50);
    let mut tasks = Vec::with_capacity(n);
    for bot in bots {
        let log = match &config.log_dir {
            Some(dir) => Some(BufWriter::new(File::create(dir.join(format!("bot-{:03}.jsonl", bot.index)))?)),
            None => None,
        };
        tasks.push(tokio::spawn(run_one(bot, config.clone(), epoch, start, log)));
    }
    let mut per_bot = Vec::with_capacity(config.bots);
    let mut sinks = Vec::new();
    for t in tasks {
        match t.await {
            Ok((s, senders)) => {
                sinks.push(senders);
                per_bot.push(s);
            }
            Err(e) => tracing::error!(error = %e, "bot task panicked"),
        }
    }

    // Expected deliveries: everything every other bot sent.
    let sent_by: BTreeMap<NetworkId, u64> = per_bot.iter().zip(&sinks).map(|(b, (id, _))| (*id, b.sent)).collect();
    let mut pooled = Vec::new();
    for (bot, (own, latencies)) in per_bot.iter_mut().zip(sinks) {
        bot.expected = sent_by.iter().filter(|(id, _)| **id != own).map(|(_, s)| s).sum();
        bot.lost = bot.expected.saturating_sub(bot.received);
        pooled.extend(latencies);
    }
    per_bot.extend(failed);
    per_bot.sort_by_key(|b| b.index);
    summary.sent = per_bot.iter().map(|b| b.sent).sum();
    summary.received = per_bot.iter().map(|b| b.received).sum();
    summary.expected = per_bot.iter().map(|b| b.expected).sum();
    summary.lost = per_bot.iter().map(|b| b.lost).sum();
    summary.latency = LatencyStats::from_samples(&pooled);
    summary.per_bot = per_bot;
    Ok(summary)
}

async fn run_one(mut bot: Bot, config: BotConfig, epoch: Instant, start: Instant, mut log: Option<BufWriter<File>>) -> (BotSummary, (NetworkId, Vec<f64>)) {
    if let Some(w) = log.take() {
        bot.session.peer.logger.lock().set_file(Box::new(w));
    }
    let own = bot.session.peer.id();
    let to = Address::new(own, well_known::AVATAR);
    let period = Duration::from_secs_f64(1.0 / config.pose_rate);
    let end = start + config.duration;
    let stop = end + config.drain;
    let mut next = start;
    let mut next_stats = start + Duration::from_secs(1);
    let mut seq = 0u64;
    let mut error = None;
    tokio::time::sleep_until(start.into()).await;
    bot.sink.lock().recording = true;
    bot.session.peer.stats.stats_sample(Instant::now());

    loop {
        let now = Instant::now();
        if now >= stop {
            break;
        }
        while now < end && now >= next {
            let sent_us = epoch.elapsed().as_micros() as u64;
            let pose = AvatarPose::synthetic(seq as f32 * 0.1);
            if let Err(e) = bot.session.peer.scene.send(to, stamp_payload(seq, sent_us, &pose, config.payload_bytes)) {
                error.get_or_insert(e.to_string());
            }
            seq += 1;
            next += period;
        }
        if let Err(e) = bot.session.update() {
            error.get_or_insert(e.to_string());
            break;
        }
        if now >= next_stats {
            next_stats += Duration::from_secs(1);
            let sample = bot.session.peer.stats.stats_sample(now);
            let mut logger = bot.session.peer.logger.lock();
            let _ = logger.log_event("stats", serde_json::to_value(&sample).unwrap_or_default());
            for s in bot.session.peer.latency.lock().take_samples() {
                let _ = logger.log_event("latency", json!({ "to": s.to, "ms": s.ms }));
            }
        }
        if bot.session.peer.scene.open_connections() == 0 {
            error.get_or_insert("connection closed".into());
            break;
        }
        let wake = if now < end { next.min(end) } else { stop };
        tokio::select! {
            _ = tokio::time::sleep_until(wake.into()) => {}
            _ = bot.session.peer.readable() => {}
        }
    }

    let sink = bot.sink.lock();
    let meter = bot.session.peer.latency.lock();
    let me = bot.session.peer.uuid();
    let half = bot.neighbour.as_ref().and_then(|n| meter.matrix().get(&me, n).copied());
    let sample = bot.session.peer.stats.stats_sample(Instant::now());
    let summary = BotSummary {
        index: bot.index,
        uuid: me,
        sent: seq,
        received: sink.senders.values().map(|t| t.received).sum(),
        duplicates: sink.duplicates,
        latency: LatencyStats::from_samples(&sink.latencies_ms),
        meter_half_rtt_ms: half.map(|s| s.mean),
        meter_samples: half.map_or(0, |s| s.count as usize),
        bytes_in: sample.bytes_in,
        bytes_out: sample.bytes_out,
        inbound_pose_bytes_per_sec: if config.duration.is_zero() { 0.0 } else { sink.pose_bytes as f64 / config.duration.as_secs_f64() },
        error,
        ..BotSummary::default()
    };
    let latencies = sink.latencies_ms.clone();
    drop(meter);
    drop(sink);
    bot.session.peer.shutdown();
    (summary, (own, latencies))
}
