use ubiq_core::services::boids::FlockParams;
use ubiq_harness::boids::{initial_flock, run_boids, windowed_variance, BoidsConfig};

#[test]
fn velocity_variance_settles_for_several_seeds() {
    for seed in [1, 2, 3] {
        let config = BoidsConfig { peers: 3, boids_per_peer: 10, steps: 1000, seed, ..BoidsConfig::default() };
        let run = run_boids(&config).unwrap();
        assert!(run.consistent(), "seed {seed} diverged at {:?}", run.first_divergence);
        let windows = windowed_variance(&run, 100);
        for pair in windows.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "seed {seed}: variance rose {windows:?}");
        }
    }
}

#[test]
fn ownership_is_partitioned() {
    let config = BoidsConfig { peers: 4, boids_per_peer: 5, ..BoidsConfig::default() };
    let flocks = initial_flock(&config);
    assert_eq!(flocks.len(), 4);
    let mut ids: Vec<u64> = flocks.iter().flatten().map(|b| b.boid_id).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 20);
    for owned in &flocks {
        let owner = &owned[0].owner_peer;
        assert!(owned.iter().all(|b| &b.owner_peer == owner));
    }
}

#[test]
fn csv_has_one_row_per_exchange() {
    let config = BoidsConfig { steps: 20, ..BoidsConfig::default() };
    let run = run_boids(&config).unwrap();
    let csv = run.to_csv();
    assert_eq!(csv.lines().count(), 1 + 21);
}

#[test]
fn invalid_params_are_rejected() {
    let params = FlockParams { dt: 0.0, ..FlockParams::default() };
    let config = BoidsConfig { params, steps: 5, ..BoidsConfig::default() };
    assert!(run_boids(&config).is_err());
}
