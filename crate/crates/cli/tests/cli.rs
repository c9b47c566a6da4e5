use std::path::Path;
use std::process::{Command, Output};

fn juggler(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_juggler")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = juggler(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn learn(dir: &Path) {
    let out = dir.to_str().unwrap();
    ok(&["learn", "--out", out, "--set", "episodes=3", "--set", "rollouts=6", "--set", "seed=5", "--workers", "2"]);
}

#[test]
fn default_config_parses_back() {
    let json = ok(&["default-config"]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, json).unwrap();
    let out = dir.path().join("run");
    ok(&["learn", "--config", path.to_str().unwrap(), "--set", "episodes=1", "--set", "rollouts=4", "--out", out.to_str().unwrap()]);
    assert!(out.join("policy_ep1.json").exists());
}

#[test]
fn learn_eval_and_replay_chain() {
    let dir = tempfile::tempdir().unwrap();
    learn(dir.path());
    for name in ["run.json", "episodes.csv", "rollouts.csv", "policy_ep0.json", "policy_ep3.json"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let ckpt = dir.path().join("policy_ep3.json");
    let report = ok(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--repetitions", "3", "--max-duration", "5"]);
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(report["durations"].as_array().unwrap().len(), 3);

    let trace = dir.path().join("trace.csv");
    let rollouts = dir.path().join("rollouts.csv");
    let msg = ok(&[
        "replay", "--rollouts", rollouts.to_str().unwrap(), "--episode", "2", "--rollout", "1", "--out",
        trace.to_str().unwrap(),
    ]);
    assert!(msg.contains("reward"));
    assert!(std::fs::read_to_string(&trace).unwrap().lines().count() > 1);

    let trace2 = dir.path().join("mean.csv");
    ok(&["replay", "--checkpoint", ckpt.to_str().unwrap(), "--out", trace2.to_str().unwrap()]);
    assert!(trace2.exists());
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for args in [
        vec!["learn", "--out", out, "--set", "ereps.epsilom=1"],
        vec!["learn", "--out", out, "--set", "rollouts=1"],
        vec!["learn", "--out", out, "--workers", "0"],
        vec!["eval", "--checkpoint", "/nonexistent/policy.json"],
    ] {
        let o = juggler(&args);
        assert!(!o.status.success(), "{args:?}");
        assert!(!o.stderr.is_empty());
    }
}
