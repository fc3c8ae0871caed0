use catchbench::agent::{run_episode, SqpAgent, SqpAgentConfig};
use catchbench::harness::{parse_rows_csv, rows_csv, run_eval, Config, EvalLog, ExperimentSpec};
use catchbench::kinematics::JointVector;
use catchbench::sim::{Env, EnvConfig, EpisodeLog, ThrowerConfig};

#[test]
fn episode_log_round_trips() {
    let env = EnvConfig { record_trace: true, ..EnvConfig::default() };
    let (mut sim, _) = Env::reset(&env, &ThrowerConfig::default(), 12).unwrap();
    while !sim.is_done() {
        sim.step(&JointVector::zeros()).unwrap();
    }
    let log = sim.episode_log();
    assert!(log.result.trace.as_ref().is_some_and(|t| !t.is_empty()));
    let back: EpisodeLog = serde_json::from_str(&serde_json::to_string(&log).unwrap()).unwrap();
    assert_eq!(back, log);
}

#[test]
fn eval_outputs_round_trip() {
    let spec = ExperimentSpec {
        condition: "training".into(),
        agent: "sqp".into(),
        env: EnvConfig::default(),
        thrower: ThrowerConfig::default(),
        sqp: SqpAgentConfig::default(),
        policy: None,
        episodes: 4,
        seed: 77,
    };
    let out = run_eval(&spec, &Default::default()).unwrap();
    let csv = rows_csv(std::slice::from_ref(&out.row));
    let rows = parse_rows_csv(&csv).unwrap();
    assert_eq!(rows_csv(&rows), csv);
    let back = EvalLog::from_json(&out.log.to_json()).unwrap();
    assert_eq!(back.to_json(), out.log.to_json());
    let r = &rows[0];
    assert!(0.0 <= r.ci_lo && r.ci_lo <= r.rate && r.rate <= r.ci_hi && r.ci_hi <= 1.0);
    assert_eq!(r.left_catches + r.right_catches, r.successes);
}

#[test]
fn eval_episode_matches_direct_run() {
    let env = EnvConfig::default();
    let spec = ExperimentSpec {
        condition: "c".into(),
        agent: "sqp".into(),
        env: env.clone(),
        thrower: ThrowerConfig::default(),
        sqp: SqpAgentConfig::default(),
        policy: None,
        episodes: 2,
        seed: 5,
    };
    let out = run_eval(&spec, &Default::default()).unwrap();
    let first = &out.log.episodes[1];
    let mut agent = SqpAgent::new(SqpAgentConfig::default(), &env);
    let direct = run_episode(&env, &spec.thrower, first.seed, &mut agent).unwrap();
    assert_eq!(direct, first.result);
}

#[test]
fn config_file_documents_every_section() {
    let text = Config::default().to_toml();
    for section in ["[env]", "[thrower]", "[sqp]", "[policy]", "[bgs]", "[finetune]"] {
        assert!(text.contains(section), "{section} missing");
    }
}
