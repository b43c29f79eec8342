use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CONFIG: &str = r#"
manifest = "corpus/manifest.toml"
out = "run"
seed = 4
plan = "plan.toml"

[oracle]
train_users = 2
test_users = 1
scenes_per_class = 1
generic_scenes = 3
scene_duration = 4.0
generic_duration = 4.0

[regression.topology]
widths = [8, 8]
dilations = [1, 2]

[regression.train]
max_epochs = 2
patience = 1
batch_size = 64
seed = 0

[classifier.shape]
kernel_width = 3
widths = [8, 8]
dilations = [1, 2]
dropout = 0.1

[classifier.train]
max_epochs = 3
patience = 2
batch_size = 8
seed = 0

[har]
mix = { kind = "sim_plus_real", real_users = 1 }
k = 2
"#;

const PLAN: &str = r#"
seeds = [1]
[[mixes]]
mix = { kind = "real" }
k = [1]
[classifier.shape]
kernel_width = 3
widths = [4]
dilations = [1]
dropout = 0.0
[classifier.train]
max_epochs = 2
patience = 1
batch_size = 8
seed = 0
"#;

fn pose2imu(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pose2imu"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = pose2imu(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(files_under(&path));
        } else {
            out.push(path);
        }
    }
    out.sort();
    out
}

fn train_chain(dir: &Path, out: &str) {
    for cmd in ["train-regression", "simulate", "train-har", "evaluate"] {
        ok(dir, &[cmd, "--config", "config.toml", "--out", out]);
    }
}

#[test]
fn oracle_chain_runs_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("config.toml"), CONFIG).unwrap();
    std::fs::write(dir.join("plan.toml"), PLAN).unwrap();

    ok(dir, &["synth-gen", "--config", "config.toml", "--out", "corpus"]);
    assert!(dir.join("corpus/manifest.toml").is_file());
    train_chain(dir, "run");
    train_chain(dir, "run2");

    let report = std::fs::read_to_string(dir.join("run/evaluation/report.csv")).unwrap();
    assert_eq!(report.lines().count(), 2, "{report}");
    assert!(dir.join("run/har/classifier.ckpt").is_file());
    assert_eq!(files_under(&dir.join("run/regressors")).len(), 5);

    let first = dir.join("run");
    let second = dir.join("run2");
    let a = files_under(&first);
    let b = files_under(&second);
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.strip_prefix(&first).unwrap(), y.strip_prefix(&second).unwrap());
        if x.file_name().unwrap() == "config.resolved.toml" {
            continue;
        }
        assert!(std::fs::read(x).unwrap() == std::fs::read(y).unwrap(), "{} differs", x.display());
    }

    let listing = ok(dir, &["sweep", "--config", "config.toml", "--dry-run"]);
    assert!(listing.starts_with("real/k1/acc_norm/none/scaled/s1\t"), "{listing}");
    ok(dir, &["sweep", "--config", "config.toml"]);
    let sweep = std::fs::read_to_string(dir.join("run/sweep/report.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 2, "{sweep}");
    // a second run reuses the stored cell
    ok(dir, &["sweep", "--config", "config.toml"]);
    assert_eq!(std::fs::read_to_string(dir.join("run/sweep/report.csv")).unwrap(), sweep);

    let overlay = ok(
        dir,
        &["compare-signals", "--config", "config.toml", "--session", "train0-march-0", "--slot", "left_wrist.acc_norm"],
    );
    assert!(overlay.contains("\"mse\""), "{overlay}");
    assert!(dir.join("run/overlays/train0-march-0.left_wrist.acc_norm.svg").is_file());
}

#[test]
fn evaluate_without_test_sessions_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let config = CONFIG.replace("test_users = 1", "test_users = 1\nscene_duration_unused = 0");
    std::fs::write(dir.join("bad.toml"), &config).unwrap();
    let out = pose2imu(dir, &["synth-gen", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(5));
    let line = String::from_utf8(out.stderr).unwrap();
    let err: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(err["error"]["kind"], "config");

    std::fs::write(dir.join("config.toml"), CONFIG).unwrap();
    ok(dir, &["synth-gen", "--config", "config.toml", "--out", "corpus"]);
    let manifest = dir.join("corpus/manifest.toml");
    let text = std::fs::read_to_string(&manifest).unwrap();
    let mut doc: toml::Table = text.parse().unwrap();
    doc["sessions"]
        .as_array_mut()
        .unwrap()
        .retain(|s| s["role"].as_str() != Some("test"));
    std::fs::write(&manifest, toml::to_string(&doc).unwrap()).unwrap();
    train_chain_until_har(dir);

    let out = pose2imu(dir, &["evaluate", "--config", "config.toml"]);
    assert_eq!(out.status.code(), Some(6));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("sessions.role"), "{stderr}");
}

fn train_chain_until_har(dir: &Path) {
    for cmd in ["train-regression", "simulate", "train-har"] {
        ok(dir, &[cmd, "--config", "config.toml"]);
    }
}

#[test]
fn bad_inputs_exit_with_documented_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let missing = pose2imu(dir, &["ingest-imu", "nope.csv", "--placement", "left_wrist", "--out", "x"]);
    assert_eq!(missing.status.code(), Some(3));
    std::fs::write(dir.join("bad.csv"), "t,ax\n0,1\n0,2\n").unwrap();
    let parse = pose2imu(dir, &["ingest-imu", "bad.csv", "--placement", "left_wrist", "--out", "x"]);
    assert_eq!(parse.status.code(), Some(4));
    let help = pose2imu(dir, &["--help"]);
    assert!(String::from_utf8(help.stdout).unwrap().contains("Exit codes"));
}
