//! Distributed flocking.
//!
//! Each peer owns a disjoint set of boids, steps them against the inertia
//! (centroid and mean velocity) of the whole flock and broadcasts their new
//! states. Replicas are copied from those broadcasts, never re-simulated, so
//! every peer ends a step with the same bits.

use std::collections::BTreeMap;
use std::sync::Arc;

use bytes::{Buf, BufMut, Bytes, BytesMut};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::scene::{Component, ComponentError, NetworkContext, PeerScene, SceneError};
use crate::wire::{well_known, WireMessage};

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoidState {
    pub boid_id: u64,
    pub owner_peer: String,
    pub position: Vec3,
    pub velocity: Vec3,
}

impl BoidState {
    fn is_finite(&self) -> bool {
        self.position.iter().chain(&self.velocity).all(|x| x.is_finite())
    }

    /// Exact equality of every coordinate's bits.
    pub fn bit_eq(&self, other: &BoidState) -> bool {
        self.boid_id == other.boid_id
            && self.owner_peer == other.owner_peer
            && self.position.iter().chain(&self.velocity).zip(other.position.iter().chain(&other.velocity)).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlockParams {
    pub cohesion_w: f64,
    pub alignment_w: f64,
    pub separation_w: f64,
    pub neighbor_radius: f64,
    pub v_max: f64,
    pub dt: f64,
}

impl Default for FlockParams {
    fn default() -> Self {
        Self { cohesion_w: 0.02, alignment_w: 1.0, separation_w: 0.05, neighbor_radius: 1.0, v_max: 2.0, dt: 0.05 }
    }
}

impl FlockParams {
    pub fn validate(&self) -> Result<(), BoidsError> {
        let weights = [self.cohesion_w, self.alignment_w, self.separation_w];
        let valid = self.dt > 0.0 && weights.iter().all(|w| *w >= 0.0) && self.v_max > 0.0 && self.neighbor_radius >= 0.0;
        if !valid {
            return Err(BoidsError::BadParams(*self));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BoidsError {
    #[error("flock is empty")]
    EmptyFlock,
    #[error("simulation fault: boid {0} is not finite")]
    SimulationFault(u64),
    #[error("invalid flock parameters {0:?}")]
    BadParams(FlockParams),
    #[error("malformed boids message")]
    Malformed,
    #[error("broadcast failed: {0}")]
    Send(String),
}

/// Mean position and mean velocity, summed in ascending boid id.
pub fn flock_inertia<'a>(states: impl IntoIterator<Item = &'a BoidState>) -> Result<(Vec3, Vec3), BoidsError> {
    let mut sorted: Vec<&BoidState> = states.into_iter().collect();
    if sorted.is_empty() {
        return Err(BoidsError::EmptyFlock);
    }
    sorted.sort_by_key(|b| b.boid_id);
    let mut p = [0.0; 3];
    let mut v = [0.0; 3];
    for b in &sorted {
        for k in 0..3 {
            p[k] += b.position[k];
            v[k] += b.velocity[k];
        }
    }
    let n = sorted.len() as f64;
    Ok((p.map(|x| x / n), v.map(|x| x / n)))
}

/// One step for `boid` against the given flock (ascending id) and inertia.
pub fn step_boid(boid: &BoidState, flock: &[&BoidState], inertia: (Vec3, Vec3), params: &FlockParams) -> BoidState {
    let (centroid, mean_v) = inertia;
    let mut sep = [0.0; 3];
    let r2 = params.neighbor_radius * params.neighbor_radius;
    for other in flock.iter().filter(|o| o.boid_id != boid.boid_id) {
        let d = [0, 1, 2].map(|k| boid.position[k] - other.position[k]);
        let d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        if d2 > 0.0 && d2 <= r2 {
            for k in 0..3 {
                sep[k] += d[k] / d2;
            }
        }
    }
    let mut v = [0.0; 3];
    for k in 0..3 {
        let a = params.cohesion_w * (centroid[k] - boid.position[k]) + params.alignment_w * (mean_v[k] - boid.velocity[k]) + params.separation_w * sep[k];
        v[k] = boid.velocity[k] + a * params.dt;
    }
    let speed = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if speed > params.v_max {
        v = v.map(|x| x * params.v_max / speed);
    }
    let position = [0, 1, 2].map(|k| boid.position[k] + v[k] * params.dt);
    BoidState { boid_id: boid.boid_id, owner_peer: boid.owner_peer.clone(), position, velocity: v }
}

/// Binary broadcast: owner (u16 length + UTF-8), count (u32), then per boid
/// id (u64) and six f64, all little-endian.
pub fn encode_states(owner: &str, states: &[BoidState]) -> Bytes {
    let mut out = BytesMut::with_capacity(6 + owner.len() + states.len() * 56);
    out.put_u16_le(owner.len() as u16);
    out.put_slice(owner.as_bytes());
    out.put_u32_le(states.len() as u32);
    for s in states {
        out.put_u64_le(s.boid_id);
        for x in s.position.iter().chain(&s.velocity) {
            out.put_f64_le(*x);
        }
    }
    out.freeze()
}

pub fn decode_states(mut buf: &[u8]) -> Result<Vec<BoidState>, BoidsError> {
    if buf.remaining() < 2 {
        return Err(BoidsError::Malformed);
    }
    let len = buf.get_u16_le() as usize;
    if buf.remaining() < len + 4 {
        return Err(BoidsError::Malformed);
    }
    let owner = std::str::from_utf8(&buf[..len]).map_err(|_| BoidsError::Malformed)?.to_string();
    buf.advance(len);
    let count = buf.get_u32_le() as usize;
    if buf.remaining() != count * 56 {
        return Err(BoidsError::Malformed);
    }
    Ok((0..count)
        .map(|_| {
            let boid_id = buf.get_u64_le();
            let f: [f64; 6] = std::array::from_fn(|_| buf.get_f64_le());
            BoidState { boid_id, owner_peer: owner.clone(), position: [f[0], f[1], f[2]], velocity: [f[3], f[4], f[5]] }
        })
        .collect())
}

/// One peer's share of the flock. Registered at the shared boids address.
pub struct BoidsManager {
    ctx: NetworkContext,
    owner: String,
    owned: BTreeMap<u64, BoidState>,
    replicas: BTreeMap<u64, BoidState>,
    malformed: u64,
}

impl BoidsManager {
    pub fn attach(scene: &PeerScene, owner: impl Into<String>, owned: Vec<BoidState>) -> Result<Arc<Mutex<BoidsManager>>, SceneError> {
        let manager = Arc::new(Mutex::new(BoidsManager {
            ctx: scene.context(well_known::BOIDS_ADDRESS),
            owner: owner.into(),
            owned: owned.into_iter().map(|b| (b.boid_id, b)).collect(),
            replicas: BTreeMap::new(),
            malformed: 0,
        }));
        scene.register(manager.clone(), well_known::BOIDS_ADDRESS)?;
        Ok(manager)
    }

    pub fn owner(&self) -> &str {
        &self.owner
    }

    pub fn owned(&self) -> impl Iterator<Item = &BoidState> {
        self.owned.values()
    }

    pub fn replicas(&self) -> impl Iterator<Item = &BoidState> {
        self.replicas.values()
    }

    pub fn malformed(&self) -> u64 {
        self.malformed
    }

    /// Owned and replicated boids, ascending id.
    pub fn flock(&self) -> Vec<&BoidState> {
        let mut all: Vec<&BoidState> = self.owned.values().chain(self.replicas.values()).collect();
        all.sort_by_key(|b| b.boid_id);
        all
    }

    /// Sends the owned states without stepping.
    pub fn broadcast(&self) -> Result<(), SceneError> {
        let states: Vec<BoidState> = self.owned.values().cloned().collect();
        self.ctx.send(well_known::BOIDS_ADDRESS, encode_states(&self.owner, &states))
    }

    /// Steps every owned boid against the whole flock, then broadcasts them.
    pub fn flock_step(&mut self, params: &FlockParams) -> Result<Vec<BoidState>, BoidsError> {
        params.validate()?;
        let next: Vec<BoidState> = {
            let flock = self.flock();
            let inertia = flock_inertia(flock.iter().copied())?;
            self.owned.values().map(|b| step_boid(b, &flock, inertia, params)).collect()
        };
        if let Some(bad) = next.iter().find(|b| !b.is_finite()) {
            return Err(BoidsError::SimulationFault(bad.boid_id));
        }
        for b in &next {
            self.owned.insert(b.boid_id, b.clone());
        }
        self.ctx.send(well_known::BOIDS_ADDRESS, encode_states(&self.owner, &next)).map_err(|e| BoidsError::Send(e.to_string()))?;
        Ok(next)
    }
}

impl Component for BoidsManager {
    fn receive(&mut self, _ctx: &NetworkContext, msg: &WireMessage) -> Result<(), ComponentError> {
        let states = match decode_states(&msg.payload) {
            Ok(s) => s,
            Err(e) => {
                self.malformed += 1;
                return Err(e.into());
            }
        };
        for s in states {
            if !self.owned.contains_key(&s.boid_id) {
                self.replicas.insert(s.boid_id, s);
            }
        }
        Ok(())
    }
}

/// Mean squared deviation of velocities from their mean.
pub fn velocity_variance<'a>(states: impl IntoIterator<Item = &'a BoidState>) -> f64 {
    let states: Vec<&BoidState> = states.into_iter().collect();
    let Ok((_, mean_v)) = flock_inertia(states.iter().copied()) else { return 0.0 };
    let sum: f64 = states.iter().map(|b| (0..3).map(|k| (b.velocity[k] - mean_v[k]).powi(2)).sum::<f64>()).sum();
    sum / states.len() as f64
}
