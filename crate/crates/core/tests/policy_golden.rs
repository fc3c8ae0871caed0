use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use catchbench::blackbox::{Policy, PolicyArchitecture};
use catchbench::kinematics::JointVector;
use catchbench::sim::{Env, EnvConfig, Observation, ThrowerConfig};

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct Golden {
    observation: Observation,
    output: Vec<f64>,
}

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/policy_golden.json")
}

fn compute() -> Golden {
    let env = EnvConfig::default();
    let arch = PolicyArchitecture::default();
    let theta: Vec<f64> = arch.init(&mut ChaCha8Rng::seed_from_u64(7)).iter().map(|v| 5.0 * v).collect();
    let policy = Policy::new(arch, theta).unwrap();
    let (mut sim, mut obs) = Env::reset(&env, &ThrowerConfig::default(), 3).unwrap();
    for k in 0..20 {
        let cmd = JointVector::from_fn(|i, _| 0.3 * ((k + i) as f64 * 0.4).sin());
        obs = sim.step(&cmd).unwrap().0;
    }
    let output = policy.forward(&obs, &env.limits).unwrap().iter().copied().collect();
    Golden { observation: obs, output }
}

/// Set `CATCHBENCH_BLESS=1` to regenerate the fixture.
#[test]
fn policy_output_matches_frozen_vector() {
    let now = compute();
    if std::env::var_os("CATCHBENCH_BLESS").is_some() {
        std::fs::write(fixture(), serde_json::to_string_pretty(&now).unwrap()).unwrap();
    }
    let frozen: Golden = serde_json::from_str(&std::fs::read_to_string(fixture()).unwrap()).unwrap();
    assert_eq!(frozen.observation, now.observation);
    for (a, b) in frozen.output.iter().zip(&now.output) {
        assert_eq!(a.to_bits(), b.to_bits(), "{a} vs {b}");
    }
}

#[test]
fn output_from_frozen_observation_is_stable() {
    let frozen: Golden = serde_json::from_str(&std::fs::read_to_string(fixture()).unwrap()).unwrap();
    let arch = PolicyArchitecture::default();
    let theta: Vec<f64> = arch.init(&mut ChaCha8Rng::seed_from_u64(7)).iter().map(|v| 5.0 * v).collect();
    let out = Policy::new(arch, theta).unwrap().forward(&frozen.observation, &EnvConfig::default().limits).unwrap();
    assert_eq!(out.iter().copied().collect::<Vec<_>>(), frozen.output);
}
