use std::process::{Command, Output};

fn catchbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_catchbench")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn ci_prints_interval() {
    let out = catchbench(&["ci", "0", "10"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("ci_hi=0.308497"), "{}", stdout(&out));
}

#[test]
fn config_errors_exit_2() {
    assert_eq!(catchbench(&["ci", "11", "10"]).status.code(), Some(2));
    assert_eq!(catchbench(&["eval", "--episodes", "0"]).status.code(), Some(2));
    assert_eq!(catchbench(&["eval", "--set", "no_such_key=1"]).status.code(), Some(2));
    assert_eq!(catchbench(&["suite", "nonexistent"]).status.code(), Some(2));
    assert_eq!(catchbench(&["--config", "/nonexistent/cfg.toml", "eval"]).status.code(), Some(2));
}

#[test]
fn missing_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(catchbench(&["eval", "--agent", "bb", "--episodes", "1", "--output-dir", d]).status.code(), Some(3));
    assert_eq!(catchbench(&["suite", "speed_shift", "--episodes", "1", "--output-dir", d]).status.code(), Some(3));
    assert_eq!(catchbench(&["finetune", "--checkpoint", "/nonexistent/ckpt.json"]).status.code(), Some(3));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "episodes = 7\n[thrower]\nspeed_mean = 4.1\n").unwrap();
    let out = catchbench(&["--config", cfg.to_str().unwrap(), "--episodes", "3", "--set", "thrower.right_bias=0.5", "--print-config", "ci", "1", "1"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("episodes = 3"));
    assert!(text.contains("speed_mean = 4.1"));
    assert!(text.contains("right_bias = 0.5"));
}

#[test]
fn eval_is_byte_reproducible() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_str().unwrap();
        let out = catchbench(&["eval", "--episodes", "3", "--seed", "9", "--output-dir", d]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let csv = std::fs::read(dir.path().join("eval_training_sqp.csv")).unwrap();
        let json = std::fs::read(dir.path().join("eval_training_sqp.json")).unwrap();
        (csv, json)
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert!(String::from_utf8(a.0).unwrap().starts_with("condition,agent,successes,trials,rate,ci_lo,ci_hi,mean_min_dist,left_catches,right_catches\n"));
}

#[test]
fn train_then_eval_and_suite() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let train = catchbench(&[
        "train",
        "--output-dir",
        d,
        "--set",
        "bgs.iterations=2",
        "--set",
        "bgs.perturbations_per_step=4",
        "--set",
        "bgs.eval_episodes=2",
    ]);
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    assert!(stdout(&train).starts_with("iteration,mean_reward,reward_std,wall_time\n"));
    let ckpt = dir.path().join("train/latest.json");
    assert!(ckpt.exists());
    let c = ckpt.to_str().unwrap();
    let eval = catchbench(&["eval", "--agent", "bb", "--checkpoint", c, "--episodes", "2", "--output-dir", d]);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let suite = catchbench(&["suite", "multimodality", "--checkpoint", c, "--episodes", "2", "--output-dir", d]);
    assert!(suite.status.success(), "{}", String::from_utf8_lossy(&suite.stderr));
    assert!(stdout(&suite).contains("thrower_left_fraction"));
    assert!(dir.path().join("multimodality.csv").exists());
    assert!(dir.path().join("multimodality/training_bb.json").exists());
}

#[test]
fn solve_dumps_a_plan() {
    let out = catchbench(&["solve", "--throw-seed", "1", "--yaw", "-3.0"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["solution"]["status"], "Solved");
    assert_eq!(v["throw"]["yaw_deg"], -3.0);
}

#[test]
fn shipped_config_matches_defaults() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.toml");
    let with_file = catchbench(&["--config", path, "--print-config", "ci", "1", "1"]);
    let bare = catchbench(&["--print-config", "ci", "1", "1"]);
    assert!(with_file.status.success());
    assert_eq!(stdout(&with_file), stdout(&bare));
}
