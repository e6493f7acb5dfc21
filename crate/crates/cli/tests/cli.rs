use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tmnlab::data::{load_pairs, Strictness};
use tmnlab::trainer::EpochReport;

fn tmnlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tmnlab"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, name: &str, count: usize) {
    let o = tmnlab(dir, &["synth", "--seed", "5", "--count", &count.to_string(), "--out", name]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn synth_writes_valid_deterministic_file() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "a.jsonl", 30);
    synth(dir.path(), "b.jsonl", 30);
    let a = fs::read(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.jsonl")).unwrap());
    let pairs = load_pairs(dir.path().join("a.jsonl"), Strictness::MAX).unwrap();
    assert_eq!(pairs.len(), 30);
}

#[test]
fn synth_rejects_small_dims_as_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = tmnlab(dir.path(), &["synth", "--count", "3", "--node-dim", "3", "--out", "x.jsonl"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn unwritable_output_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = tmnlab(dir.path(), &["synth", "--count", "3", "--out", "missing/dir/x.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_negative_control_fails() {
    let dir = tempfile::tempdir().unwrap();
    let ok = tmnlab(dir.path(), &["gradcheck"]);
    assert!(ok.status.success(), "{}{}", stdout(&ok), stderr(&ok));
    assert!(stdout(&ok).contains("PASS"));
    assert!(stdout(&ok).contains(" at "), "worst parameter named: {}", stdout(&ok));

    let bad = tmnlab(dir.path(), &["gradcheck", "--corrupt-backward", "tanh"]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(stdout(&bad).contains("FAIL"));

    let big = tmnlab(dir.path(), &["gradcheck", "--node-state-dim", "128"]);
    assert_eq!(big.status.code(), Some(1));
}

const CONFIG: &str = r#"
output_dir = "out"
seed = 2
[data]
train = "pairs.jsonl"
val = "pairs.jsonl"
[phase2]
max_epochs = 2
batch_size = 8
max_batches_per_epoch = 3
[phase3]
max_epochs = 3
batch_size = 8
max_batches_per_epoch = 3
"#;

fn reports(dir: &Path) -> Vec<EpochReport> {
    fs::read_to_string(dir.join("out/metrics.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "pairs.jsonl", 24);
    fs::write(dir.path().join("run.toml"), CONFIG).unwrap();

    let refused = tmnlab(dir.path(), &["train", "--config", "run.toml", "--phase", "2,3"]);
    assert_eq!(refused.status.code(), Some(1));
    assert!(stderr(&refused).contains("protocol"), "{}", stderr(&refused));

    let o = tmnlab(dir.path(), &["train", "--config", "run.toml", "--phase", "2,3", "--skip-pretrain"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = reports(dir.path());
    assert_eq!(log.iter().filter(|r| r.phase == 2).count(), 2);
    assert_eq!(log.iter().filter(|r| r.phase == 3).count(), 3);
    let last = log.last().unwrap();

    let e = tmnlab(
        dir.path(),
        &["eval", "--checkpoint", "out/phase3/last.json", "--data", "pairs.jsonl", "--report", "report.json"],
    );
    assert!(e.status.success(), "{}", stderr(&e));
    assert!(stdout(&e).contains("true \\ pred"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let accuracy = report["accuracy"].as_f64().unwrap();
    assert!((accuracy - last.val_accuracy.unwrap()).abs() < 1e-9);
    assert_eq!(report["thresholds"], serde_json::json!([-0.33, 0.33]));
    let confusion = report["confusion"].as_array().unwrap();
    assert_eq!(confusion.len(), 3);
    assert!(confusion.iter().all(|r| r.as_array().unwrap().len() == 3));

    let i = tmnlab(dir.path(), &["inspect", "out/phase3/last.json"]);
    assert!(stdout(&i).contains("21376 parameters"), "{}", stdout(&i));
}

#[test]
fn embedding_mode_flag_trains_embedding_network() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "pairs.jsonl", 16);
    fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    let o = tmnlab(
        dir.path(),
        &["train", "--config", "run.toml", "--phase", "2", "--skip-pretrain", "--mode", "embedding", "--max-epochs", "1"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let i = tmnlab(dir.path(), &["inspect", "--json", "out/phase2/last.json"]);
    let summary: serde_json::Value = serde_json::from_str(&stdout(&i)).unwrap();
    assert_eq!(summary["model"]["mode"], "embedding");
}

#[test]
fn eval_rejects_mismatched_feature_width() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "pairs.jsonl", 16);
    fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    let o = tmnlab(dir.path(), &["train", "--config", "run.toml", "--phase", "3", "--skip-pretrain", "--max-epochs", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let narrow = tmnlab(dir.path(), &["synth", "--count", "3", "--node-dim", "10", "--out", "narrow.jsonl"]);
    assert!(narrow.status.success());
    let e = tmnlab(dir.path(), &["eval", "--checkpoint", "out/phase3/last.json", "--data", "narrow.jsonl"]);
    assert_eq!(e.status.code(), Some(1));
    assert!(stderr(&e).contains("node features"), "{}", stderr(&e));
}

#[test]
fn malformed_data_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("pairs.jsonl"), "{not json}\n").unwrap();
    fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    let o = tmnlab(dir.path(), &["train", "--config", "run.toml", "--phase", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
}
