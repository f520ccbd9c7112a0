use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use enprune::tensor::read_tensor;
use enprune::Tensor;
use enprune_cli::model::ModelFile;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_enprune"));
    cmd.env("RUST_LOG", "error");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }
    fn model(&self) -> PathBuf {
        self.root.join("model/model.json")
    }
}

/// A small trained model shared by the tests that only read it.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(&["train", "--per-class", "40", "--epochs", "4", "--out", s(&root)]);
        Fixture { _dir: dir, root }
    })
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

fn csv_column(csv: &str, row: &str, col: &str) -> f64 {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == col).unwrap();
    let line = lines.find(|l| l.split(',').next() == Some(row)).unwrap();
    line.split(',').nth(idx).unwrap().parse().unwrap()
}

#[test]
fn trained_model_round_trips() {
    let f = fixture();
    let model = ModelFile::load(&f.model()).unwrap();
    let net = model.load_network(&f.model()).unwrap();
    let again = tempfile::tempdir().unwrap();
    let path = ModelFile::save_network(&net, again.path(), None).unwrap();
    let back = ModelFile::load(&path).unwrap().load_network(&path).unwrap();
    for (a, b) in net.layers.iter().zip(&back.layers) {
        assert_eq!(a.bank, b.bank);
        assert_eq!(a.post, b.post);
    }
}

#[test]
fn estimate_writes_reports_and_bits_scale_computation() {
    let f = fixture();
    let out16 = tempfile::tempdir().unwrap();
    let out8 = tempfile::tempdir().unwrap();
    let m = f.model();
    let d = f.dataset();
    ok(&["estimate", "--model", s(&m), "--dataset", s(&d), "--out", s(out16.path())]);
    ok(&["estimate", "--model", s(&m), "--dataset", s(&d), "--bits", "8", "--out", s(out8.path())]);
    let a = fs::read_to_string(out16.path().join("energy.csv")).unwrap();
    let b = fs::read_to_string(out8.path().join("energy.csv")).unwrap();
    assert!(out16.path().join("energy.json").is_file());
    let (c16, c8) = (csv_column(&a, "total", "comp"), csv_column(&b, "total", "comp"));
    assert!((c8 / c16 - 0.25).abs() < 1e-4, "{c8} / {c16}");
    let (w16, w8) = (csv_column(&a, "total", "weights"), csv_column(&b, "total", "weights"));
    assert!((w8 / w16 - 0.5).abs() < 1e-4, "{w8} / {w16}");
}

#[test]
fn zero_budget_with_aggressive_schedule_keeps_the_model() {
    let f = fixture();
    let out = tempfile::tempdir().unwrap();
    let cfg = write_config(
        out.path(),
        "[schedule]\nincrements = [[0.99], [0.99], [0.99], [0.99], [0.99]]\n[prune]\naccuracy_drop_budget = 0.0\nfinetune_epochs = 0\n",
    );
    ok(&[
        "prune", "--model", s(&f.model()), "--dataset", s(&f.dataset()),
        "--config", s(&cfg), "--out", s(out.path()),
    ]);
    let log = fs::read_to_string(out.path().join("prune_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
    assert!(log.contains("\"accepted\":false"));
    let before = ModelFile::load(&f.model()).unwrap().load_network(&f.model()).unwrap();
    let p = out.path().join("pruned/model.json");
    let after = ModelFile::load(&p).unwrap().load_network(&p).unwrap();
    for (a, b) in before.layers.iter().zip(&after.layers) {
        assert_eq!(a.bank, b.bank);
    }
}

#[test]
fn summary_counts_match_written_masks() {
    let f = fixture();
    let out = tempfile::tempdir().unwrap();
    let cfg = write_config(
        out.path(),
        "[schedule]\nstep = 0.3\ncaps = [0.6]\n[prune]\naccuracy_drop_budget = 1.0\nfinetune_epochs = 0\n",
    );
    ok(&[
        "prune", "--model", s(&f.model()), "--dataset", s(&f.dataset()),
        "--config", s(&cfg), "--out", s(out.path()),
    ]);
    let summary = fs::read_to_string(out.path().join("summary.csv")).unwrap();
    let reported = csv_column(&summary, "pruned", "nonzero_weights") as usize;
    let p = out.path().join("pruned/model.json");
    let model = ModelFile::load(&p).unwrap();
    let mut popcount = 0;
    for entry in &model.layers {
        let mask: Tensor = read_tensor(out.path().join("pruned").join(entry.mask.as_ref().unwrap())).unwrap();
        popcount += mask.data().iter().filter(|&&v| v != 0.0).count();
    }
    assert_eq!(reported, popcount);
    let dense = csv_column(&summary, "dense", "nonzero_weights") as usize;
    assert!(popcount < dense);
    let net = model.load_network(&p).unwrap();
    assert!(net.layers.iter().all(|l| l.bank.mask_holds()));
}

#[test]
fn zero_epoch_training_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        ok(&["train", "--per-class", "5", "--epochs", "0", "--seed", "7", "--out", s(dir.path())]);
    }
    let load = |d: &Path| {
        let p = d.join("model/model.json");
        ModelFile::load(&p).unwrap().load_network(&p).unwrap()
    };
    let (x, y) = (load(a.path()), load(b.path()));
    for (l, m) in x.layers.iter().zip(&y.layers) {
        assert_eq!(l.bank, m.bank);
    }
}

#[test]
fn unknown_config_key_fails_before_work() {
    let f = fixture();
    let out = tempfile::tempdir().unwrap();
    let cfg = write_config(out.path(), "[prune]\nbudget = 0.01\n");
    let r = run(&[
        "prune", "--model", s(&f.model()), "--dataset", s(&f.dataset()),
        "--config", s(&cfg), "--out", s(out.path()),
    ]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("budget"));
    assert!(!out.path().join("pruned").exists());
}

#[test]
fn missing_dataset_fails_fast() {
    let f = fixture();
    let out = tempfile::tempdir().unwrap();
    let r = run(&[
        "prune", "--model", s(&f.model()), "--dataset", s(&out.path().join("nope")), "--out", s(out.path()),
    ]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("missing"));
}

#[test]
fn single_class_subset_rejected() {
    let f = fixture();
    let out = tempfile::tempdir().unwrap();
    let r = run(&[
        "experiment-classes", "--model", s(&f.model()), "--dataset", s(&f.dataset()),
        "--classes", "1", "--out", s(out.path()),
    ]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn divergent_training_exits_with_code_3() {
    let out = tempfile::tempdir().unwrap();
    let r = run(&["train", "--per-class", "5", "--epochs", "3", "--lr", "1e30", "--out", s(out.path())]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn untileable_profile_exits_with_code_4() {
    let out = tempfile::tempdir().unwrap();
    let profile = out.path().join("tiny.toml");
    fs::write(
        &profile,
        "mac_energy = 1.0\n[[level]]\nname = \"DRAM\"\nenergy = 200.0\n[[level]]\nname = \"rf\"\nenergy = 1.0\ncapacity = 2\n",
    )
    .unwrap();
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../manifests/alexnet.json");
    let r = run(&["report", "--manifest", s(&manifest), "--profile", s(&profile), "--out", s(out.path())]);
    assert_eq!(r.status.code(), Some(4), "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn report_writes_shares() {
    let out = tempfile::tempdir().unwrap();
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../manifests/alexnet.json");
    let stdout = ok(&["report", "--manifest", s(&manifest), "--json", "--out", s(out.path())]);
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let w = v["conv_weight_share"].as_f64().unwrap();
    let e = v["conv_energy_share"].as_f64().unwrap();
    assert!(w < 0.1 && e > 0.5);
    assert!(out.path().join("report.csv").is_file());
}
