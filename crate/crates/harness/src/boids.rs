//! Step-synchronized distributed flock over in-process connections.

use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::Arc;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ubiq_core::services::boids::{flock_inertia, velocity_variance, BoidState, BoidsError, BoidsManager, FlockParams};
use ubiq_core::transport::loopback_pair;
use ubiq_core::{NetworkId, PeerScene};

#[derive(Debug, Clone, PartialEq)]
pub struct BoidsConfig {
    pub peers: usize,
    pub boids_per_peer: usize,
    pub steps: usize,
    pub seed: u64,
    pub params: FlockParams,
}

impl Default for BoidsConfig {
    fn default() -> Self {
        Self { peers: 3, boids_per_peer: 10, steps: 1000, seed: 1, params: FlockParams::default() }
    }
}

/// What every exchange point looked like.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Hash of the full flock's bits as seen by peer 0.
    pub digest: u64,
    pub velocity_variance: f64,
    pub centroid: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoidsRun {
    pub steps: Vec<StepRecord>,
    /// First exchange point where some peer's flock differed from peer 0's.
    pub first_divergence: Option<usize>,
    pub final_flock: Vec<BoidState>,
}

impl BoidsRun {
    pub fn consistent(&self) -> bool {
        self.first_divergence.is_none()
    }

    pub fn trajectory(&self) -> Vec<u64> {
        self.steps.iter().map(|s| s.digest).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,digest,velocity_variance,cx,cy,cz\n");
        for s in &self.steps {
            out.push_str(&format!("{},{:016x},{},{},{},{}\n", s.step, s.digest, s.velocity_variance, s.centroid[0], s.centroid[1], s.centroid[2]));
        }
        out
    }
}

/// Seeded initial flock, ids partitioned by owning peer.
pub fn initial_flock(config: &BoidsConfig) -> Vec<Vec<BoidState>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.peers)
        .map(|p| {
            (0..config.boids_per_peer)
                .map(|i| {
                    let position = [0; 3].map(|_| rng.gen_range(-10.0..10.0));
                    let mut velocity = [0; 3].map(|_| rng.gen_range(-1.0..1.0));
                    let speed = velocity.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
                    if speed > config.params.v_max {
                        velocity = velocity.map(|x| x * config.params.v_max / speed);
                    }
                    BoidState { boid_id: (p * config.boids_per_peer + i) as u64, owner_peer: owner(p), position, velocity }
                })
                .collect()
        })
        .collect()
}

fn owner(peer: usize) -> String {
    format!("peer-{peer}")
}

fn digest(flock: &[&BoidState]) -> u64 {
    let mut h = DefaultHasher::new();
    for b in flock {
        b.boid_id.hash(&mut h);
        b.owner_peer.hash(&mut h);
        for x in b.position.iter().chain(&b.velocity) {
            x.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

fn same_bits(a: &[&BoidState], b: &[&BoidState]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.bit_eq(y))
}

/// Runs the flock on `config.peers` fully meshed peers. Every step, each peer
/// steps its own boids and broadcasts them, then every peer drains its
/// connections before the next step begins.
pub fn run_boids(config: &BoidsConfig) -> Result<BoidsRun, BoidsError> {
    config.params.validate()?;
    let mut scenes: Vec<PeerScene> = (0..config.peers).map(|i| PeerScene::new(NetworkId::new(1000 + i as u64).expect("valid id"))).collect();
    for i in 0..config.peers {
        for j in i + 1..config.peers {
            let (a, b) = loopback_pair();
            scenes[i].add_connection(a);
            scenes[j].add_connection(b);
        }
    }
    let managers: Vec<Arc<Mutex<BoidsManager>>> = initial_flock(config)
        .into_iter()
        .enumerate()
        .map(|(i, owned)| BoidsManager::attach(&scenes[i], owner(i), owned).expect("fresh scene"))
        .collect();

    for m in &managers {
        m.lock().broadcast().map_err(|e| BoidsError::Send(e.to_string()))?;
    }
    for s in scenes.iter_mut() {
        s.dispatch();
    }

    let mut run = BoidsRun { steps: Vec::with_capacity(config.steps + 1), first_divergence: None, final_flock: Vec::new() };
    for step in 0..=config.steps {
        if step > 0 {
            for m in &managers {
                m.lock().flock_step(&config.params)?;
            }
            for s in scenes.iter_mut() {
                s.dispatch();
            }
        }
        let guards: Vec<_> = managers.iter().map(|m| m.lock()).collect();
        let reference = guards[0].flock();
        if run.first_divergence.is_none() && guards[1..].iter().any(|g| !same_bits(&reference, &g.flock())) {
            run.first_divergence = Some(step);
        }
        let (centroid, _) = flock_inertia(reference.iter().copied())?;
        run.steps.push(StepRecord { step, digest: digest(&reference), velocity_variance: velocity_variance(reference.iter().copied()), centroid });
        if step == config.steps {
            run.final_flock = reference.into_iter().cloned().collect();
        }
    }
    Ok(run)
}

/// Mean velocity variance over consecutive windows of `window` steps.
pub fn windowed_variance(run: &BoidsRun, window: usize) -> Vec<f64> {
    run.steps.chunks(window).map(|c| c.iter().map(|s| s.velocity_variance).sum::<f64>() / c.len() as f64).collect()
}
