use std::net::SocketAddr;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use bytes::Bytes;
use parking_lot::Mutex;
use ubiq_core::admin::{Health, ServerStats};
use ubiq_core::rooms::{JoinTarget, RoomClient, RoomEvent, RoomRecord, RoomSummary};
use ubiq_core::scene::fn_component;
use ubiq_core::transport::{self, ConnectionSpec, TransportEvent};
use ubiq_core::wire::{well_known, Address, ComponentId, NetworkId, WireMessage};
use ubiq_core::PeerScene;
use ubiq_server::{RunningServer, ServerConfig, ServerError};

const ECHO: ComponentId = ComponentId::constant(40);

struct TestPeer {
    scene: PeerScene,
    rooms: Arc<Mutex<RoomClient>>,
    inbox: Arc<Mutex<Vec<WireMessage>>>,
}

impl TestPeer {
    fn new(id: u64, spec: ConnectionSpec) -> Self {
        let mut scene = PeerScene::new(NetworkId::new(id).unwrap());
        scene.connect(spec).unwrap();
        let rooms = RoomClient::attach(&scene).unwrap();
        let inbox = Arc::new(Mutex::new(Vec::new()));
        let sink = inbox.clone();
        scene
            .register(fn_component(move |_, m: &WireMessage| {
                sink.lock().push(m.clone());
                Ok(())
            }), Address::new(scene.id(), ECHO))
            .unwrap();
        Self { scene, rooms, inbox }
    }

    async fn joined(&mut self, target: JoinTarget) -> RoomRecord {
        self.rooms.lock().join(target).unwrap();
        let deadline = Instant::now() + Duration::from_secs(5);
        loop {
            self.scene.dispatch();
            for ev in self.rooms.lock().take_events() {
                match ev {
                    RoomEvent::JoinedRoom(r) => return r,
                    RoomEvent::Rejected(why) => panic!("join rejected: {why}"),
                    _ => {}
                }
            }
            assert!(Instant::now() < deadline, "join timed out");
            tokio::time::sleep(Duration::from_millis(2)).await;
        }
    }
}

async fn pump_until(peers: &mut [&mut TestPeer], mut done: impl FnMut(&[&mut TestPeer]) -> bool) {
    let deadline = Instant::now() + Duration::from_secs(10);
    while !done(peers) {
        assert!(Instant::now() < deadline, "condition not reached");
        for p in peers.iter_mut() {
            p.scene.dispatch();
        }
        tokio::time::sleep(Duration::from_millis(2)).await;
    }
}

async fn local() -> RunningServer {
    ubiq_server::start(ServerConfig::local()).await.unwrap()
}

fn tcp(addr: SocketAddr) -> ConnectionSpec {
    ConnectionSpec::tcp("127.0.0.1", addr.port())
}

fn ws(addr: SocketAddr) -> ConnectionSpec {
    ConnectionSpec::websocket("127.0.0.1", addr.port())
}

#[tokio::test]
async fn two_clients_in_one_room_exchange_messages() {
    let server = local().await;
    let mut a = TestPeer::new(1001, tcp(server.tcp_addr()));
    let mut b = TestPeer::new(1002, ws(server.ws_addr()));
    let room = a.joined(JoinTarget::New { name: "Hello World".into(), publish: true }).await;
    assert_eq!(room.joincode.len(), 3);
    assert!(room.joincode.bytes().all(|c| c.is_ascii_digit()));
    b.joined(JoinTarget::Code(room.joincode.clone())).await;

    let payload = Bytes::from_static(b"\x00\x01hello\xff");
    a.scene.send(Address::new(b.scene.id(), ECHO), payload.clone()).unwrap();
    pump_until(&mut [&mut a, &mut b], |p| !p[1].inbox.lock().is_empty()).await;
    let got = b.inbox.lock().clone();
    assert_eq!(got, vec![WireMessage::new(Address::new(b.scene.id(), ECHO), payload).unwrap()]);
    assert!(a.inbox.lock().is_empty());
    server.shutdown().await;
}

#[tokio::test]
async fn relayed_frames_are_byte_identical() {
    let server = local().await;
    let mut a = TestPeer::new(1001, tcp(server.tcp_addr()));
    let room = a.joined(JoinTarget::New { name: "capture".into(), publish: false }).await;

    // A raw connection joins by hand so it can see the frames exactly as relayed.
    let conn = transport::connect(tcp(server.tcp_addr())).await.unwrap();
    let (tx, mut rx) = conn.split();
    let join = serde_json::json!({"type":"Join","args":{"joincode":room.joincode,"peer":{"uuid":"raw","sceneid":2000,"properties":{}}},"sceneid":2000});
    tx.send(WireMessage::new(well_known::ROOM_SERVER_ADDRESS, serde_json::to_vec(&join).unwrap()).unwrap().encode().unwrap()).unwrap();

    let to = Address::new(NetworkId::new(2000).unwrap(), ECHO);
    let payloads: Vec<Vec<u8>> = (0..50u32).map(|i| i.to_le_bytes().repeat(i as usize)).collect();
    let sent: Vec<Bytes> = payloads.iter().map(|p| WireMessage::new(to, p.clone()).unwrap().encode().unwrap()).collect();
    // Wait until the raw peer is in the room before sending.
    pump_until(&mut [&mut a], |p| p[0].rooms.lock().peers().contains_key("raw")).await;
    for p in &payloads {
        a.scene.send(to, p.clone()).unwrap();
    }
    let mut got = Vec::new();
    while got.len() < sent.len() {
        match tokio::time::timeout(Duration::from_secs(5), rx.recv()).await.unwrap().unwrap() {
            TransportEvent::Frame(f) if f.address().component == ECHO => got.push(f.bytes().clone()),
            _ => {}
        }
    }
    assert_eq!(got, sent);
    server.shutdown().await;
}

#[tokio::test]
async fn sandboxed_traffic_goes_nowhere_and_join_still_works() {
    let server = local().await;
    let mut a = TestPeer::new(1001, tcp(server.tcp_addr()));
    let room = a.joined(JoinTarget::New { name: "sandbox".into(), publish: true }).await;

    let mut intruder = TestPeer::new(1003, tcp(server.tcp_addr()));
    for i in 0..1000u64 {
        intruder.scene.send(Address::new(NetworkId::new(1001).unwrap(), ECHO), i.to_le_bytes().to_vec()).unwrap();
    }
    intruder.joined(JoinTarget::Code(room.joincode)).await;
    // A marker sent after joining proves earlier traffic would have arrived by now.
    intruder.scene.send(Address::new(NetworkId::new(1001).unwrap(), ECHO), &b"marker"[..]).unwrap();
    pump_until(&mut [&mut a, &mut intruder], |p| !p[0].inbox.lock().is_empty()).await;
    assert_eq!(a.inbox.lock().len(), 1);
    assert_eq!(&a.inbox.lock()[0].payload[..], b"marker");
    assert_eq!(server.relay().stats().counters.discarded, 1000);
    server.shutdown().await;
}

#[tokio::test]
async fn admin_api_reports_rooms_and_stats() {
    let server = local().await;
    let mut a = TestPeer::new(1001, ws(server.ws_addr()));
    let room = a.joined(JoinTarget::New { name: "listed".into(), publish: true }).await;
    let http = reqwest::Client::new();
    let health: Health = http.get(format!("{}/api/health", server.http_url())).send().await.unwrap().json().await.unwrap();
    assert_eq!(health.status, "ok");
    let rooms: Vec<RoomSummary> = http.get(format!("{}/api/rooms", server.http_url())).send().await.unwrap().json().await.unwrap();
    assert_eq!(rooms, vec![RoomSummary { uuid: room.uuid, joincode: room.joincode, name: "listed".into(), peers: 1 }]);
    let stats: ServerStats = http.get(format!("{}/api/stats", server.http_url())).send().await.unwrap().json().await.unwrap();
    assert_eq!((stats.connections, stats.rooms), (1, 1));
    assert!(stats.counters.protocol >= 1);
    server.shutdown().await;
}

#[tokio::test]
async fn empty_rooms_are_evicted_and_codes_freed() {
    let server = ubiq_server::start(ServerConfig { idle_room_seconds: 1, ..ServerConfig::local() }).await.unwrap();
    let mut a = TestPeer::new(1001, tcp(server.tcp_addr()));
    a.joined(JoinTarget::New { name: "brief".into(), publish: true }).await;
    a.rooms.lock().leave().unwrap();
    a.scene.dispatch();
    let deadline = Instant::now() + Duration::from_secs(10);
    while server.relay().stats().rooms > 0 {
        assert!(Instant::now() < deadline, "room never evicted");
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
    assert!(server.relay().rooms().is_empty());
    server.shutdown().await;
}

#[tokio::test]
async fn occupied_port_is_a_bind_error() {
    let first = local().await;
    let taken = first.tcp_addr().port();
    let err = ubiq_server::start(ServerConfig { tcp_port: taken, ..ServerConfig::local() }).await.err().unwrap();
    assert!(matches!(err, ServerError::Bind(..)));
    assert_eq!(err.exit_code(), 2);
    let err = ubiq_server::start(ServerConfig { tcp_port: 9000, ws_port: 9000, ..ServerConfig::local() }).await.err().unwrap();
    assert_eq!(err.exit_code(), 3);
    first.shutdown().await;
}

#[tokio::test]
async fn shutdown_closes_client_connections() {
    let server = local().await;
    let conn = transport::connect(tcp(server.tcp_addr())).await.unwrap();
    let (_tx, mut rx) = conn.split();
    let addr = server.tcp_addr();
    server.shutdown().await;
    let closed = tokio::time::timeout(Duration::from_secs(5), async {
        while let Some(ev) = rx.recv().await {
            if matches!(ev, TransportEvent::Closed(_)) {
                return true;
            }
        }
        true
    })
    .await
    .unwrap();
    assert!(closed);
    assert!(transport::connect(tcp(addr)).await.is_err());
}

#[test]
fn cli_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_ubiq-server");
    let bad = Command::new(bin).args(["--tcp-port", "not-a-port"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(3));
    let same = Command::new(bin).args(["--bind", "127.0.0.1", "--tcp-port", "18011", "--ws-port", "18011"]).output().unwrap();
    assert_eq!(same.status.code(), Some(3));
    let holder = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = holder.local_addr().unwrap().port().to_string();
    let busy = Command::new(bin).args(["--bind", "127.0.0.1", "--tcp-port", &port, "--ws-port", "0"]).output().unwrap();
    assert_eq!(busy.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&busy.stderr).contains("cannot bind"));
}

#[test]
fn cli_stops_cleanly_on_sigterm_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("server.jsonl");
    let mut child = Command::new(env!("CARGO_BIN_EXE_ubiq-server"))
        .args(["--bind", "127.0.0.1", "--tcp-port", "0", "--ws-port", "0"])
        .env("UBIQ_SERVER_LOG", &log)
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(10);
    while std::fs::read_to_string(&log).map_or(true, |s| !s.contains("\"started\"")) {
        assert!(Instant::now() < deadline, "server never started");
        std::thread::sleep(Duration::from_millis(20));
    }
    Command::new("kill").args(["-TERM", &child.id().to_string()]).status().unwrap();
    let status = child.wait().unwrap();
    assert_eq!(status.code(), Some(0));
    let text = std::fs::read_to_string(&log).unwrap();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["peer"], "server");
    }
    assert!(text.lines().last().unwrap().contains("\"stopped\""));
}
