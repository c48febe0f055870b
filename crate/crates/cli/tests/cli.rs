use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
[train]
epochs = 400

[sweep]
trials = 2
horizon = 120
fixed_betas = [1000.0]
";

fn latassist(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latassist")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = latassist(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn train_without_demos_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = latassist(dir.path(), &["train", "--out", "run"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("run gen-demos first"));
    assert!(!dir.path().join("run/model.json").exists());
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "[controller]\nalfa = 0.5\n").unwrap();
    let out = latassist(dir.path(), &["--config", "c.toml", "gen-demos"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("alfa"));
}

#[test]
fn printed_config_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), &["--seed", "17", "config"]);
    assert!(text.contains("seed = 17"));
    fs::write(dir.path().join("c.toml"), &text).unwrap();
    assert_eq!(ok(dir.path(), &["--config", "c.toml", "config"]), text);
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("c.toml"), SMALL).unwrap();
    let cfg = ["--config", "c.toml", "--out", "run"];
    let with = |extra: &[&'static str]| -> Vec<&str> { cfg.iter().copied().chain(extra.iter().copied()).collect() };

    ok(d, &with(&["gen-demos"]));
    ok(d, &with(&["train"]));
    let sim = ok(d, &with(&["simulate"]));
    assert!(sim.contains("success true"), "{sim}");
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("run/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["success"], true);
    let rollout = fs::read_to_string(d.join("run/rollout.csv")).unwrap();
    assert_eq!(rollout.lines().count(), 301);

    ok(d, &with(&["sweep", "--kind", "fixed_beta"]));
    let summary = fs::read_to_string(d.join("run/sweep_fixed_beta_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 6, "{summary}");

    for stage in ["gen-demos", "train", "simulate", "sweep"] {
        let m: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(d.join(format!("run/{stage}.manifest.json"))).unwrap()).unwrap();
        assert_eq!(m["stage"], stage);
        assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
        assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    }

    // A different scene cannot reuse these artifacts.
    fs::write(d.join("other.toml"), format!("{SMALL}\n[scene]\ncups = [[-2.0, 2.8], [2.4, 2.6]]\n")).unwrap();
    let out = latassist(d, &["--config", "other.toml", "--out", "run", "simulate"]);
    assert!(!out.status.success());
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("pipeline error"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = latassist(d, &["--config", "other.toml", "--out", "run", "train"]);
    assert!(!out.status.success());

    // Serving on a busy port fails at startup.
    let busy = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = busy.local_addr().unwrap().port().to_string();
    let out = latassist(d, &["--config", "c.toml", "--out", "run", "serve", "--port", &port]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot listen"));
}
