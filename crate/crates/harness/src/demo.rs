//! Two peers in one process, each found by walking up a scene graph, talking
//! through a relay: the smallest end-to-end check of the whole stack.

use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde_json::json;
use ubiq_client::{ClientError, Session};
use ubiq_core::rooms::JoinTarget;
use ubiq_core::scene::fn_component;
use ubiq_core::services::avatar::AvatarPose;
use ubiq_core::services::spawn::BlueprintRegistry;
use ubiq_core::transport::ConnectionSpec;
use ubiq_core::wire::{well_known, Address, ComponentId, NetworkId, WireMessage};
use ubiq_core::{Peer, SceneGraph};

use crate::local::LocalRelay;

const CUBE_BODY: ComponentId = ComponentId::constant(20);

#[derive(Debug, Clone, Default)]
pub struct DemoOptions {
    /// Use this relay instead of an in-process one.
    pub server: Option<ConnectionSpec>,
    /// Expect a pose that is never sent, so the demo must fail.
    pub sabotage: bool,
}

#[derive(Debug, thiserror::Error)]
#[error("check {check:?} failed: {detail}")]
pub struct DemoFailure {
    pub check: &'static str,
    pub detail: String,
}

fn fail(check: &'static str, detail: impl Into<String>) -> DemoFailure {
    DemoFailure { check, detail: detail.into() }
}

fn ensure(cond: bool, check: &'static str, detail: impl FnOnce() -> String) -> Result<(), DemoFailure> {
    if cond {
        Ok(())
    } else {
        Err(fail(check, detail()))
    }
}

const WAIT: Duration = Duration::from_secs(5);

async fn pump(peers: &mut [Session; 2], check: &'static str, mut done: impl FnMut(&mut [Session; 2]) -> bool) -> Result<(), DemoFailure> {
    let deadline = Instant::now() + WAIT;
    loop {
        for s in peers.iter_mut() {
            s.update().map_err(|e| fail(check, e.to_string()))?;
        }
        if done(peers) {
            return Ok(());
        }
        if Instant::now() > deadline {
            return Err(fail(check, "timed out"));
        }
        tokio::time::sleep(Duration::from_millis(1)).await;
    }
}

/// Runs every check in order and returns their names, or the first failure.
pub async fn loopback_demo(options: &DemoOptions) -> Result<Vec<&'static str>, DemoFailure> {
    let mut passed = Vec::new();

    let mut graph = SceneGraph::new();
    let world = graph.add_root("World");
    let mut avatars = Vec::new();
    for (i, name) in ["Peer A", "Peer B"].into_iter().enumerate() {
        let branch = graph.add_child(world, name).map_err(|e| fail("graph", e.to_string()))?;
        graph.attach_scene(branch, i).map_err(|e| fail("graph", e.to_string()))?;
        let avatar = graph.add_child(branch, "Avatar").map_err(|e| fail("graph", e.to_string()))?;
        graph.attach_component(avatar, "AvatarPose").map_err(|e| fail("graph", e.to_string()))?;
        avatars.push(avatar);
    }
    let resolved: Vec<usize> = avatars.iter().map(|n| graph.resolve_scene(*n)).collect::<Result<_, _>>().map_err(|e| fail("graph", e.to_string()))?;
    ensure(resolved == [0, 1], "graph", || format!("avatars resolved to {resolved:?}"))?;
    passed.push("graph");

    let cube_hits = Arc::new(Mutex::new(Vec::<usize>::new()));
    let make_registry = |who: usize| {
        let hits = cube_hits.clone();
        let mut r = BlueprintRegistry::new();
        r.insert("cube", move |_id| {
            let hits = hits.clone();
            vec![(CUBE_BODY, fn_component(move |_, _| {
                hits.lock().push(who);
                Ok(())
            }))]
        });
        Arc::new(r)
    };

    let local = options.server.is_none().then(LocalRelay::new);
    let mut peers = Vec::new();
    for i in 0..2 {
        let id = NetworkId::new(1001 + i as u64).expect("valid id");
        let session = match (&local, &options.server) {
            (Some(relay), _) => {
                let mut peer = Peer::new(id, make_registry(i)).map_err(|e| fail("connect", e.to_string()))?;
                peer.add_connection(relay.connect());
                Session::wrap(peer)
            }
            (None, Some(spec)) => Session::connect(id, spec.clone(), make_registry(i), WAIT).await.map_err(|e| fail("connect", e.to_string()))?,
            (None, None) => unreachable!(),
        };
        peers.push(session);
    }
    let mut peers: [Session; 2] = peers.try_into().map_err(|_| fail("connect", "expected two sessions"))?;
    passed.push("connect");

    let join_err = |e: ClientError| fail("room", e.to_string());
    let room = peers[0].join(JoinTarget::New { name: "Loopback".into(), publish: false }, WAIT).await.map_err(join_err)?;
    ensure(room.joincode.len() == 3 && room.joincode.bytes().all(|c| c.is_ascii_digit()), "room", || format!("join code {:?}", room.joincode))?;
    let joined = peers[1].join(JoinTarget::Code(room.joincode.clone()), WAIT).await.map_err(join_err)?;
    ensure(joined.uuid == room.uuid, "room", || "joined a different room".into())?;
    let uuids = [peers[0].peer.uuid(), peers[1].peer.uuid()];
    pump(&mut peers, "room", |p| p[0].peer.rooms.lock().peers().contains_key(&uuids[1]) && p[1].peer.rooms.lock().peers().contains_key(&uuids[0])).await?;
    passed.push("room");

    let cube = peers[0].peer.spawner.lock().spawn("cube").map_err(|e| fail("spawn", e.to_string()))?;
    pump(&mut peers, "spawn", |p| p[1].peer.spawner.lock().instances().contains_key(&cube)).await?;
    peers[1].peer.scene.send(Address::new(cube, CUBE_BODY), &b"poke"[..]).map_err(|e| fail("spawn", e.to_string()))?;
    pump(&mut peers, "spawn", |_| cube_hits.lock().contains(&0)).await?;
    passed.push("spawn");

    let received = Arc::new(Mutex::new(None::<WireMessage>));
    let slot = received.clone();
    let a_avatar = Address::new(peers[0].peer.id(), well_known::AVATAR);
    peers[1]
        .peer
        .scene
        .register(fn_component(move |_, m| {
            *slot.lock() = Some(m.clone());
            Ok(())
        }), a_avatar)
        .map_err(|e| fail("pose", e.to_string()))?;
    let pose = AvatarPose::synthetic(1.0);
    peers[0].peer.scene.send(a_avatar, pose.encode().to_vec()).map_err(|e| fail("pose", e.to_string()))?;
    pump(&mut peers, "pose", |_| received.lock().is_some()).await?;
    let got = AvatarPose::decode(&received.lock().as_ref().expect("set").payload).map_err(|e| fail("pose", e.to_string()))?;
    let expected = if options.sabotage { AvatarPose::synthetic(2.0) } else { pose };
    ensure(got == expected, "pose", || format!("received {got:?}, expected {expected:?}"))?;
    passed.push("pose");

    peers[1].peer.logger.lock().collector_start().map_err(|e| fail("log", e.to_string()))?;
    for i in 0..3 {
        peers[0].peer.logger.lock().log_event("demo", json!({ "i": i })).map_err(|e| fail("log", e.to_string()))?;
    }
    pump(&mut peers, "log", |p| p[1].peer.logger.lock().collected_count() >= 3).await?;
    passed.push("log");

    pump(&mut peers, "latency", |p| !p[0].peer.latency.lock().samples().is_empty()).await?;
    let ms = peers[0].peer.latency.lock().samples()[0].ms;
    ensure((0.0..1000.0).contains(&ms), "latency", || format!("{ms} ms"))?;
    passed.push("latency");

    for p in peers.iter_mut() {
        p.peer.shutdown();
    }
    Ok(passed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn demo_passes_in_process() {
        let checks = loopback_demo(&DemoOptions::default()).await.unwrap();
        assert_eq!(checks, ["graph", "connect", "room", "spawn", "pose", "log", "latency"]);
    }

    #[tokio::test]
    async fn sabotage_fails_the_pose_check() {
        let err = loopback_demo(&DemoOptions { sabotage: true, ..DemoOptions::default() }).await.unwrap_err();
        assert_eq!(err.check, "pose");
    }
}
