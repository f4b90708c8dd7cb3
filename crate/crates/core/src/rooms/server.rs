use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;
use std::time::{Duration, Instant};

use bytes::Bytes;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::{properties_size, reasons, JoinTarget, PeerRecord, Properties, Request, RequestEnvelope, Response, RoomRecord, RoomSummary, MAX_PROPERTIES_BYTES};
use crate::wire::{self, well_known, Address, Frame, NetworkId, WireMessage};

pub const DEFAULT_IDLE_ROOM_SECS: u64 = 60;
const CODE_SPACE: usize = 1000;

/// What the caller must do with a frame after the state machine has seen it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome<K> {
    /// Protocol replies and membership events, in order.
    Protocol(Vec<(K, Bytes)>),
    /// Forward the frame unchanged to these room members.
    Forward(Vec<K>),
    /// Sandboxed connection sent non-server traffic.
    Discarded,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ServerCounters {
    pub protocol: u64,
    pub forwarded: u64,
    pub discarded: u64,
    pub bad_requests: u64,
}

#[derive(Debug)]
struct Room<K> {
    record: RoomRecord,
    members: Vec<K>,
    empty_since: Option<Instant>,
}

#[derive(Debug)]
struct Member {
    room: String,
    peer: PeerRecord,
}

/// Draws a uniformly random code from those not in `used`.
pub fn allocate_code<R: Rng + ?Sized>(used: &dyn Fn(&str) -> bool, rng: &mut R) -> Option<String> {
    let free: Vec<String> = (0..CODE_SPACE).map(|n| format!("{n:03}")).filter(|c| !used(c)).collect();
    if free.is_empty() {
        None
    } else {
        Some(free[rng.gen_range(0..free.len())].clone())
    }
}

/// Rooms, their members and the join-code namespace. Keyed by whatever
/// identifies a connection to the caller. Single writer.
#[derive(Debug)]
pub struct RoomServerState<K> {
    rooms: HashMap<String, Room<K>>,
    codes: HashMap<String, String>,
    members: HashMap<K, Member>,
    reply_to: HashMap<K, NetworkId>,
    idle_after: Duration,
    rng: StdRng,
    counters: ServerCounters,
}

impl<K: Copy + Eq + Hash + Ord> RoomServerState<K> {
    pub fn new(idle_after: Duration) -> Self {
        Self::with_rng(idle_after, StdRng::from_entropy())
    }

    pub fn with_rng(idle_after: Duration, rng: StdRng) -> Self {
        Self {
            rooms: HashMap::new(),
            codes: HashMap::new(),
            members: HashMap::new(),
            reply_to: HashMap::new(),
            idle_after,
            rng,
            counters: ServerCounters::default(),
        }
    }

    pub fn counters(&self) -> ServerCounters {
        self.counters
    }

    pub fn room_count(&self) -> usize {
        self.rooms.len()
    }

    pub fn rooms(&self) -> Vec<RoomSummary> {
        let mut out: Vec<_> = self.rooms.values().map(summary).collect();
        out.sort_by(|a, b| a.joincode.cmp(&b.joincode));
        out
    }

    pub fn room_of(&self, conn: K) -> Option<&RoomRecord> {
        self.members.get(&conn).and_then(|m| self.rooms.get(&m.room)).map(|r| &r.record)
    }

    /// Peer records of a room's members in join order.
    pub fn members_of(&self, room_uuid: &str) -> Vec<PeerRecord> {
        self.rooms
            .get(room_uuid)
            .map(|r| r.members.iter().filter_map(|k| self.members.get(k)).map(|m| m.peer.clone()).collect())
            .unwrap_or_default()
    }

    pub fn allocate_code(&mut self) -> Option<String> {
        let codes = &self.codes;
        allocate_code(&|c| codes.contains_key(c), &mut self.rng)
    }

    /// Routes one frame received from `from`.
    pub fn handle(&mut self, from: K, frame: &Frame, now: Instant) -> Outcome<K> {
        if frame.address() == well_known::ROOM_SERVER_ADDRESS {
            self.counters.protocol += 1;
            return Outcome::Protocol(self.handle_request(from, &frame.payload(), now));
        }
        match self.members.get(&from).and_then(|m| self.rooms.get(&m.room)) {
            Some(room) => {
                self.counters.forwarded += 1;
                Outcome::Forward(room.members.iter().copied().filter(|k| *k != from).collect())
            }
            None => {
                self.counters.discarded += 1;
                Outcome::Discarded
            }
        }
    }

    fn handle_request(&mut self, from: K, payload: &[u8], now: Instant) -> Vec<(K, Bytes)> {
        let envelope: RequestEnvelope = match wire::from_text_object(payload) {
            Ok(env) => env,
            Err(e) => {
                tracing::debug!(error = %e, "bad room request");
                self.counters.bad_requests += 1;
                return vec![self.reply(from, &rejected(reasons::BAD_REQUEST))];
            }
        };
        if let Some(id) = envelope.sceneid {
            self.reply_to.insert(from, id);
        }
        match envelope.request {
            Request::Join(args) => {
                let (Some(target), Some(peer)) = (args.target(), args.peer) else {
                    self.counters.bad_requests += 1;
                    return vec![self.reply(from, &rejected(reasons::BAD_REQUEST))];
                };
                self.reply_to.insert(from, peer.sceneid);
                self.join(from, target, peer, now)
            }
            Request::Leave => self.leave(from, now),
            Request::UpdatePeerProperties(updates) => self.update_peer(from, updates),
            Request::UpdateRoomProperties(updates) => self.update_room(from, updates),
            Request::DiscoverRooms => {
                let rooms = self.rooms.values().filter(|r| r.record.publish).map(summary).collect();
                vec![self.reply(from, &Response::Rooms(rooms))]
            }
            Request::Ping { id } => vec![self.reply(from, &Response::Pong { id })],
        }
    }

    fn join(&mut self, from: K, target: JoinTarget, peer: PeerRecord, now: Instant) -> Vec<(K, Bytes)> {
        if properties_size(&peer.properties) > MAX_PROPERTIES_BYTES {
            return vec![self.reply(from, &rejected(reasons::PROPERTIES_TOO_LARGE))];
        }
        let room_uuid = match target {
            JoinTarget::Code(code) => match self.codes.get(&code) {
                Some(uuid) => uuid.clone(),
                None => return vec![self.reply(from, &rejected(reasons::NO_SUCH_ROOM))],
            },
            JoinTarget::Uuid(uuid) => {
                if !self.rooms.contains_key(&uuid) {
                    return vec![self.reply(from, &rejected(reasons::NO_SUCH_ROOM))];
                }
                uuid
            }
            JoinTarget::New { name, publish } => {
                let Some(joincode) = self.allocate_code() else {
                    return vec![self.reply(from, &rejected(reasons::SERVER_FULL))];
                };
                let uuid = uuid::Uuid::from_u128(self.rng.gen()).to_string();
                let record = RoomRecord { uuid: uuid.clone(), joincode: joincode.clone(), name, publish, properties: Properties::new() };
                self.codes.insert(joincode, uuid.clone());
                self.rooms.insert(uuid.clone(), Room { record, members: Vec::new(), empty_since: Some(now) });
                uuid
            }
        };

        let mut out = Vec::new();
        // Rejoining the same room only refreshes the peer record.
        let same_room = self.members.get(&from).is_some_and(|m| m.room == room_uuid);
        if !same_room && self.members.contains_key(&from) {
            out.extend(self.leave(from, now));
        }
        if !same_room {
            let room = self.rooms.get_mut(&room_uuid).expect("room exists");
            room.members.push(from);
            room.empty_since = None;
            for other in room.members.clone() {
                if other != from {
                    out.push(self.event(other, &Response::PeerAdded(peer.clone())));
                }
            }
        }
        self.members.insert(from, Member { room: room_uuid.clone(), peer });
        let room = &self.rooms[&room_uuid];
        let set_room = Response::SetRoom { room: room.record.clone(), peers: self.members_of(&room_uuid) };
        out.push(self.reply(from, &set_room));
        out
    }

    fn leave(&mut self, from: K, now: Instant) -> Vec<(K, Bytes)> {
        let Some(member) = self.members.remove(&from) else { return Vec::new() };
        let Some(room) = self.rooms.get_mut(&member.room) else { return Vec::new() };
        room.members.retain(|k| *k != from);
        if room.members.is_empty() {
            room.empty_since = Some(now);
        }
        let remaining = room.members.clone();
        remaining.into_iter().map(|k| self.event(k, &Response::PeerRemoved(member.peer.clone()))).collect()
    }

    /// The connection went away without saying goodbye.
    pub fn disconnect(&mut self, conn: K, now: Instant) -> Vec<(K, Bytes)> {
        self.reply_to.remove(&conn);
        self.leave(conn, now)
    }

    fn update_peer(&mut self, from: K, updates: Properties) -> Vec<(K, Bytes)> {
        let Some(member) = self.members.get(&from) else {
            return vec![self.reply(from, &rejected(reasons::NOT_IN_ROOM))];
        };
        if updates.is_empty() {
            return Vec::new();
        }
        let mut merged = member.peer.properties.clone();
        merged.extend(updates);
        if properties_size(&merged) > MAX_PROPERTIES_BYTES {
            return vec![self.reply(from, &rejected(reasons::PROPERTIES_TOO_LARGE))];
        }
        let member = self.members.get_mut(&from).expect("checked");
        member.peer.properties = merged;
        let peer = member.peer.clone();
        let room = member.room.clone();
        let others: Vec<K> = self.rooms[&room].members.iter().copied().filter(|k| *k != from).collect();
        others.into_iter().map(|k| self.event(k, &Response::PeerUpdated(peer.clone()))).collect()
    }

    fn update_room(&mut self, from: K, updates: Properties) -> Vec<(K, Bytes)> {
        let Some(member) = self.members.get(&from) else {
            return vec![self.reply(from, &rejected(reasons::NOT_IN_ROOM))];
        };
        if updates.is_empty() {
            return Vec::new();
        }
        let room_uuid = member.room.clone();
        let room = self.rooms.get_mut(&room_uuid).expect("member's room exists");
        let mut merged = room.record.properties.clone();
        merged.extend(updates);
        if properties_size(&merged) > MAX_PROPERTIES_BYTES {
            return vec![self.reply(from, &rejected(reasons::PROPERTIES_TOO_LARGE))];
        }
        room.record.properties = merged;
        let record = room.record.clone();
        let members = room.members.clone();
        members.into_iter().map(|k| self.event(k, &Response::RoomUpdated(record.clone()))).collect()
    }

    /// Removes rooms that have been empty for longer than the idle threshold.
    pub fn evict_idle(&mut self, now: Instant) -> Vec<String> {
        let expired: Vec<String> = self
            .rooms
            .iter()
            .filter(|(_, r)| r.members.is_empty() && r.empty_since.is_some_and(|t| now.saturating_duration_since(t) > self.idle_after))
            .map(|(uuid, _)| uuid.clone())
            .collect();
        for uuid in &expired {
            if let Some(room) = self.rooms.remove(uuid) {
                self.codes.remove(&room.record.joincode);
            }
        }
        expired
    }

    fn reply(&self, to: K, response: &Response) -> (K, Bytes) {
        let object = self.reply_to.get(&to).copied().unwrap_or(well_known::ANONYMOUS_CLIENT_OBJECT);
        (to, encode(Address::new(object, well_known::ROOM_CLIENT), response))
    }

    fn event(&self, to: K, response: &Response) -> (K, Bytes) {
        let object = self.members.get(&to).map(|m| m.peer.sceneid).or_else(|| self.reply_to.get(&to).copied()).unwrap_or(well_known::ANONYMOUS_CLIENT_OBJECT);
        (to, encode(Address::new(object, well_known::ROOM_CLIENT), response))
    }

    /// Room uuid → member connections, for inspection.
    pub fn membership(&self) -> BTreeMap<String, Vec<K>> {
        self.rooms.iter().map(|(u, r)| (u.clone(), r.members.clone())).collect()
    }
}

fn summary<K>(room: &Room<K>) -> RoomSummary {
    RoomSummary { uuid: room.record.uuid.clone(), joincode: room.record.joincode.clone(), name: room.record.name.clone(), peers: room.members.len() }
}

fn rejected(reason: &str) -> Response {
    Response::Rejected { reason: reason.to_string() }
}

fn encode(address: Address, response: &Response) -> Bytes {
    let payload = wire::to_text_object(response).expect("responses serialize");
    WireMessage::new(address, payload).and_then(|m| m.encode()).expect("responses fit in a message")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rooms::JoinArgs;
    use crate::wire::ComponentId;
    use rand_chacha::ChaCha8Rng;

    fn is_three_digits(s: &str) -> bool {
        s.len() == 3 && s.bytes().all(|b| b.is_ascii_digit())
    }

    fn frame(address: Address, payload: &[u8]) -> Frame {
        Frame::from_message(&WireMessage::new(address, payload.to_vec()).unwrap()).unwrap()
    }

    fn request(req: Request, scene: u64) -> Frame {
        let env = RequestEnvelope { request: req, sceneid: NetworkId::new(scene) };
        frame(well_known::ROOM_SERVER_ADDRESS, &serde_json::to_vec(&env).unwrap())
    }

    fn peer(scene: u64) -> PeerRecord {
        PeerRecord { uuid: format!("peer-{scene}"), sceneid: NetworkId::new(scene).unwrap(), properties: Properties::new() }
    }

    fn join(target: JoinTarget, scene: u64) -> Frame {
        request(Request::Join(JoinArgs::new(target, peer(scene))), scene)
    }

    fn decode(bytes: &Bytes) -> (Address, Response) {
        let f = Frame::parse(bytes.clone()).unwrap();
        (f.address(), wire::from_text_object(&f.payload()).unwrap())
    }

    fn protocol(outcome: Outcome<u32>) -> Vec<(u32, Response)> {
        match outcome {
            Outcome::Protocol(v) => v.into_iter().map(|(k, b)| (k, decode(&b).1)).collect(),
            other => panic!("expected protocol outcome, got {other:?}"),
        }
    }

    fn server() -> RoomServerState<u32> {
        RoomServerState::with_rng(Duration::from_secs(60), StdRng::seed_from_u64(5))
    }

    fn create(s: &mut RoomServerState<u32>, conn: u32, now: Instant) -> RoomRecord {
        let out = protocol(s.handle(conn, &join(JoinTarget::New { name: "Hello World".into(), publish: true }, 1000 + conn as u64), now));
        match out.last() {
            Some((_, Response::SetRoom { room, .. })) => room.clone(),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn seeded_code_allocation_is_pinned() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let code = allocate_code(&|_| false, &mut rng).unwrap();
        assert!(is_three_digits(&code));
        assert_eq!(code, allocate_code(&|_| false, &mut ChaCha8Rng::seed_from_u64(1)).unwrap());
        assert_eq!(code, SEED_ONE_CODE);
    }

    const SEED_ONE_CODE: &str = "402";

    #[test]
    fn last_free_code_and_exhaustion() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let code = allocate_code(&|c| c != "417", &mut rng).unwrap();
        assert_eq!(code, "417");
        assert_eq!(allocate_code(&|_| true, &mut rng), None);
    }

    #[test]
    fn server_full_after_a_thousand_rooms() {
        let mut s = server();
        let now = Instant::now();
        let mut codes = std::collections::HashSet::new();
        for conn in 0..1000 {
            codes.insert(create(&mut s, conn, now).joincode);
        }
        assert_eq!(codes.len(), 1000);
        let out = protocol(s.handle(5000, &join(JoinTarget::New { name: "x".into(), publish: false }, 99999), now));
        assert_eq!(out, vec![(5000, Response::Rejected { reason: "server full".into() })]);
    }

    #[test]
    fn create_then_join_by_code() {
        let mut s = server();
        let now = Instant::now();
        let room = create(&mut s, 1, now);
        assert!(is_three_digits(&room.joincode));
        let out = protocol(s.handle(2, &join(JoinTarget::Code(room.joincode.clone()), 1002), now));
        assert_eq!(out.len(), 2);
        assert_eq!(out[0], (1, Response::PeerAdded(peer(1002))));
        match &out[1] {
            (2, Response::SetRoom { room: r, peers }) => {
                assert_eq!(r.uuid, room.uuid);
                assert_eq!(peers, &vec![peer(1001), peer(1002)]);
            }
            other => panic!("{other:?}"),
        }
        // Joining by uuid works too.
        let out = protocol(s.handle(3, &join(JoinTarget::Uuid(room.uuid.clone()), 1003), now));
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn unknown_code_is_rejected() {
        let mut s = server();
        let out = protocol(s.handle(1, &join(JoinTarget::Code("999".into()), 1001), Instant::now()));
        assert_eq!(out, vec![(1, Response::Rejected { reason: "no such room".into() })]);
    }

    #[test]
    fn replies_go_to_the_client_component() {
        let mut s = server();
        let Outcome::Protocol(out) = s.handle(1, &request(Request::Ping { id: 4 }, 4242), Instant::now()) else { panic!() };
        let (addr, resp) = decode(&out[0].1);
        assert_eq!(addr, Address::new(NetworkId::new(4242).unwrap(), well_known::ROOM_CLIENT));
        assert_eq!(resp, Response::Pong { id: 4 });
    }

    #[test]
    fn malformed_request_gets_bad_request() {
        let mut s = server();
        let Outcome::Protocol(out) = s.handle(1, &frame(well_known::ROOM_SERVER_ADDRESS, b"{nope"), Instant::now()) else { panic!() };
        let (addr, resp) = decode(&out[0].1);
        assert_eq!(addr, well_known::ANONYMOUS_CLIENT_ADDRESS);
        assert_eq!(resp, Response::Rejected { reason: "bad request".into() });
        // A join without a peer record is malformed too.
        let bare = frame(well_known::ROOM_SERVER_ADDRESS, br#"{"type":"Join","args":{"joincode":"042"}}"#);
        assert_eq!(protocol(s.handle(1, &bare, Instant::now())), vec![(1, Response::Rejected { reason: "bad request".into() })]);
        assert_eq!(s.counters().bad_requests, 2);
    }

    #[test]
    fn sandboxed_traffic_is_discarded() {
        let mut s = server();
        let other = Address::new(NetworkId::new(12345).unwrap(), ComponentId::new(7).unwrap());
        assert_eq!(s.handle(1, &frame(other, b"hi"), Instant::now()), Outcome::Discarded);
        assert_eq!(s.counters().discarded, 1);
    }

    #[test]
    fn in_room_traffic_is_forwarded_to_the_others() {
        let mut s = server();
        let now = Instant::now();
        let room = create(&mut s, 1, now);
        s.handle(2, &join(JoinTarget::Code(room.joincode.clone()), 1002), now);
        s.handle(3, &join(JoinTarget::Code(room.joincode), 1003), now);
        let other = Address::new(NetworkId::new(12345).unwrap(), ComponentId::new(7).unwrap());
        assert_eq!(s.handle(2, &frame(other, b"hi"), now), Outcome::Forward(vec![1, 3]));
    }

    #[test]
    fn leave_and_disconnect_notify_remaining_members() {
        let mut s = server();
        let now = Instant::now();
        let room = create(&mut s, 1, now);
        s.handle(2, &join(JoinTarget::Code(room.joincode.clone()), 1002), now);
        s.handle(3, &join(JoinTarget::Code(room.joincode.clone()), 1003), now);
        assert_eq!(protocol(s.handle(3, &request(Request::Leave, 1003), now)), vec![(1, Response::PeerRemoved(peer(1003))), (2, Response::PeerRemoved(peer(1003)))]);
        assert!(protocol(s.handle(3, &request(Request::Leave, 1003), now)).is_empty());
        let out: Vec<_> = s.disconnect(2, now).iter().map(|(k, b)| (*k, decode(b).1)).collect();
        assert_eq!(out, vec![(1, Response::PeerRemoved(peer(1002)))]);
    }

    #[test]
    fn joining_another_room_leaves_the_first() {
        let mut s = server();
        let now = Instant::now();
        let a = create(&mut s, 1, now);
        let b = create(&mut s, 2, now);
        s.handle(3, &join(JoinTarget::Code(a.joincode.clone()), 1003), now);
        let out = protocol(s.handle(3, &join(JoinTarget::Code(b.joincode.clone()), 1003), now));
        assert_eq!(out[0], (1, Response::PeerRemoved(peer(1003))));
        assert_eq!(out[1], (2, Response::PeerAdded(peer(1003))));
        assert_eq!(s.members_of(&a.uuid).len(), 1);
        assert_eq!(s.members_of(&b.uuid).len(), 2);
    }

    #[test]
    fn property_updates() {
        let mut s = server();
        let now = Instant::now();
        let room = create(&mut s, 1, now);
        s.handle(2, &join(JoinTarget::Code(room.joincode.clone()), 1002), now);
        let props: Properties = [("ubiq.avatar.blueprint".to_string(), "floating".to_string())].into();
        let out = protocol(s.handle(1, &request(Request::UpdatePeerProperties(props.clone()), 1001), now));
        let mut expected = peer(1001);
        expected.properties = props.clone();
        assert_eq!(out, vec![(2, Response::PeerUpdated(expected))]);
        assert!(protocol(s.handle(1, &request(Request::UpdatePeerProperties(Properties::new()), 1001), now)).is_empty());

        let scene: Properties = [("scene".to_string(), "hello-world".to_string())].into();
        let out = protocol(s.handle(2, &request(Request::UpdateRoomProperties(scene.clone()), 1002), now));
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|(_, r)| matches!(r, Response::RoomUpdated(rec) if rec.properties == scene)));

        let huge: Properties = [("k".to_string(), "v".repeat(9000))].into();
        assert_eq!(
            protocol(s.handle(1, &request(Request::UpdateRoomProperties(huge), 1001), now)),
            vec![(1, Response::Rejected { reason: "properties too large".into() })]
        );
        assert_eq!(
            protocol(s.handle(9, &request(Request::UpdatePeerProperties(scene), 1009), now)),
            vec![(9, Response::Rejected { reason: "not in a room".into() })]
        );
    }

    #[test]
    fn discovery_lists_published_rooms_only() {
        let mut s = server();
        let now = Instant::now();
        assert_eq!(protocol(s.handle(9, &request(Request::DiscoverRooms, 1009), now)), vec![(9, Response::Rooms(vec![]))]);
        create(&mut s, 1, now);
        s.handle(2, &join(JoinTarget::New { name: "secret".into(), publish: false }, 1002), now);
        let out = protocol(s.handle(9, &request(Request::DiscoverRooms, 1009), now));
        match &out[0].1 {
            Response::Rooms(rooms) => {
                assert_eq!(rooms.len(), 1);
                assert_eq!(rooms[0].name, "Hello World");
                assert_eq!(rooms[0].peers, 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn idle_empty_rooms_are_evicted_and_codes_reused() {
        let mut s = server();
        let t0 = Instant::now();
        let a = create(&mut s, 1, t0);
        let b = create(&mut s, 2, t0);
        let busy = create(&mut s, 3, t0);
        s.handle(1, &request(Request::Leave, 1001), t0);
        s.disconnect(2, t0);
        assert!(s.evict_idle(t0 + Duration::from_secs(60)).is_empty());
        let mut evicted = s.evict_idle(t0 + Duration::from_secs(61));
        evicted.sort();
        let mut expected = vec![a.uuid.clone(), b.uuid.clone()];
        expected.sort();
        assert_eq!(evicted, expected);
        // Occupied rooms are never evicted.
        assert!(s.evict_idle(t0 + Duration::from_secs(3600)).is_empty());
        assert_eq!(s.room_count(), 1);
        assert_eq!(s.rooms()[0].uuid, busy.uuid);
        let out = protocol(s.handle(4, &join(JoinTarget::Code(a.joincode.clone()), 1004), t0));
        assert_eq!(out, vec![(4, Response::Rejected { reason: "no such room".into() })]);
        // Freed codes go back into the pool.
        let used: Vec<String> = s.rooms().into_iter().map(|r| r.joincode).collect();
        let code = allocate_code(&|c| used.iter().any(|u| u == c), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(!used.contains(&code));
    }
}
