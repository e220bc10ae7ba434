use subcrit::exploration::{algorithm1, ExplorationConfig, ExplorationOutcome, SuccessModel, VertexGraph};
use subcrit::rng::{derive_seed, rng_from_seed};
use subcrit::ModelParams;

// calibrated for tilde_beta = 0.09, b = 1/2 (tests/fixtures/calibration.json)
const EPSILON: f64 = 0.08;
const A: f64 = 2.5;

#[test]
fn single_target_success_frequency_exceeds_epsilon() {
    let p = ModelParams::new(0.25, 0.1).unwrap();
    let m = 1u64 << 40;
    let runs = 2000u64;
    for u in [0.05, 1e-3] {
        let cfg = ExplorationConfig::new(&p, u, 0.5, EPSILON, A, 0.09, m).unwrap();
        let model = SuccessModel::estimate(0.25, &cfg, 5, 4000, 17).unwrap();
        let um = u * m as f64;
        for frac in [0.51, 0.7, 0.99] {
            let target = (frac * um) as u64;
            let graph = VertexGraph::from_vertices([target]);
            let mut successes = 0u64;
            let mut offset = 0.0;
            for i in 0..runs {
                let mut rng = rng_from_seed(derive_seed(5, "success-frequency", i));
                let r = algorithm1(&p, &cfg, &graph, &[target], &mut rng).unwrap();
                offset = r.start_offsets[0];
                successes += (r.outcomes[0] == ExplorationOutcome::Success) as u64;
            }
            let freq = successes as f64 / runs as f64;
            assert!(freq >= EPSILON, "u = {u}, target = {target}: {freq}");
            // without collisions the exploration matches the success model
            let q = model.probability(offset);
            let sigma = (q * (1.0 - q) / runs as f64).sqrt() + (q * (1.0 - q) / 4000.0).sqrt();
            assert!((freq - q).abs() <= 4.0 * sigma, "u = {u}, offset {offset}: {freq} vs {q}");
        }
    }
}
