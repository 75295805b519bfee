//! Behaviour of the `vnafford` binary: exit codes, artifacts and determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use nalgebra::Matrix3;
use serde_json::Value;
use vnafford::geometry::{random_rotation, Vec3};
use vnafford::sim::{specs_from_toml, specs_to_toml};
use vnafford::{RigidTransform, Rotation};

const TINY: &str = "epochs_a = 2
epochs_b = 1
online_after_epoch = 1
online_per_epoch = 8
online_budget = 8
hidden = 16

[encoder]
k_nn = 8
d = 6
d_i = 8
depth = 2
";

fn vnafford(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vnafford")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = vnafford(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A dataset and a small trained checkpoint shared by the tests.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    fn checkpoint(&self) -> PathBuf {
        self.root.join("train/checkpoint.bin")
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let cfg = root.join("tiny.toml");
        std::fs::write(&cfg, TINY).unwrap();
        let data = root.join("data");
        ok(&["--seed", "2", "collect", "--n", "300", "--objects", "8", "--points", "256", "--out", s(&data)]);
        ok(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&root.join("train"))]);
        Fixture { _dir: dir, root }
    })
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn collect_writes_a_dataset_and_run_manifest() {
    let f = fixture();
    let m = read_json(&f.data().join("manifest.json"));
    assert_eq!(m["n_records"], 300);
    let run = read_json(&f.data().join("run.json"));
    assert_eq!(run["command"], "collect");
    assert_eq!(run["seed"], 2);
}

#[test]
fn train_writes_metrics_and_summary() {
    let f = fixture();
    let train = f.root.join("train");
    let metrics = std::fs::read_to_string(train.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,stage,"));
    assert_eq!(metrics.lines().count(), 1 + 2 + 1);
    let summary = read_json(&train.join("summary.json"));
    assert_eq!(summary["n_records"], 300);
    assert!(train.join("train_config.toml").exists());
}

#[test]
fn predict_returns_a_valid_rotation_and_heatmap() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let specs = dir.path().join("specs");
    ok(&["--seed", "1", "gen-specs", "--n", "1", "--out", s(&specs)]);
    let out = dir.path().join("predict");
    ok(&["predict", "--checkpoint", s(&f.checkpoint()), "--object-spec", s(&specs.join("specs.toml")), "--points", "256", "--k", "8", "--out", s(&out)]);
    let a = read_json(&out.join("action.json"));
    let rows: Vec<f64> = a["rotation"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap().iter().map(|x| x.as_f64().unwrap())).collect();
    let m = Matrix3::from_row_slice(&rows);
    assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-6);
    assert!((m.determinant() - 1.0).abs() < 1e-6);
    assert!(a["point_index"].as_u64().unwrap() < 256);
    assert!(std::fs::read_to_string(out.join("heatmap.ply")).unwrap().starts_with("ply"));
}

#[test]
fn predict_follows_a_rotated_object() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let specs = dir.path().join("specs");
    ok(&["--seed", "5", "gen-specs", "--n", "1", "--out", s(&specs)]);
    let spec = specs_from_toml(&std::fs::read_to_string(specs.join("specs.toml")).unwrap()).unwrap()[0];
    let mut rng = vnafford::datagen::stream_rng(77, 0, 0);
    let t = RigidTransform::new(random_rotation(&mut rng), Vec3::new(0.4, -0.2, 0.1));
    let moved_path = dir.path().join("moved.toml");
    std::fs::write(&moved_path, specs_to_toml(&[spec.with_base_pose(t.compose(&spec.base_pose))])).unwrap();

    let predict = |spec_file: &Path, tag: &str| {
        let out = dir.path().join(tag);
        ok(&["predict", "--checkpoint", s(&f.checkpoint()), "--object-spec", s(spec_file), "--points", "256", "--k", "8", "--out", s(&out)]);
        read_json(&out.join("action.json"))
    };
    let a = predict(&specs.join("specs.toml"), "a");
    let b = predict(&moved_path, "b");
    assert_eq!(a["point_index"], b["point_index"]);
    let rot = |v: &Value| {
        let rows: Vec<f64> = v["rotation"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap().iter().map(|x| x.as_f64().unwrap())).collect();
        Rotation::new(Matrix3::from_row_slice(&rows)).unwrap()
    };
    let d = vnafford::geometry::geodesic_distance(&t.rotation.compose(&rot(&a)), &rot(&b)).unwrap();
    assert!(d < 1e-3, "proposal rotated by {d} rad");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let out = dir.path().join(tag);
        ok(&["--workers", "2", "--seed", "9", "collect", "--family", "door", "--n", "120", "--objects", "4", "--points", "128", "--out", s(&out)]);
        (std::fs::read(out.join("records.csv")).unwrap(), std::fs::read(out.join("manifest.json")).unwrap())
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn usage_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    assert_eq!(vnafford(&["collect", "--online", "--out", out]).status.code(), Some(2));
    assert_eq!(vnafford(&["train", "--data", "/nonexistent/data", "--out", out]).status.code(), Some(2));
    assert_eq!(vnafford(&["eval", "--checkpoint", "x", "--setting", "identity", "--out", out]).status.code(), Some(2));
    assert_eq!(vnafford(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn corrupt_checkpoint_exits_with_code_4() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("bad.bin");
    std::fs::write(&ckpt, b"not a checkpoint").unwrap();
    let out = vnafford(&["eval", "--checkpoint", s(&ckpt), "--setting", "z", "--out", s(&dir.path().join("e"))]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn single_class_data_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    // push on drawers from far away almost never succeeds; keep only the negatives
    ok(&["collect", "--n", "40", "--objects", "2", "--points", "128", "--out", s(&data)]);
    let csv_path = data.join("records.csv");
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let col = header.split(',').position(|h| h == "result").unwrap();
    let kept: Vec<&str> = lines.filter(|l| l.split(',').nth(col) != Some("1") && l.split(',').nth(col) != Some("true")).collect();
    std::fs::write(&csv_path, format!("{header}\n{}\n", kept.join("\n"))).unwrap();
    let mut m = read_json(&data.join("manifest.json"));
    m["n_records"] = kept.len().into();
    m["n_positive"] = 0.into();
    m["n_negative"] = kept.len().into();
    std::fs::write(data.join("manifest.json"), serde_json::to_string(&m).unwrap()).unwrap();
    let out = vnafford(&["train", "--data", s(&data), "--out", s(&dir.path().join("t"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
