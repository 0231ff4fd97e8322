use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svdcnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("json output")
}

#[test]
fn describe_svdcnn_29() {
    let o = run(&[
        "describe",
        "--family",
        "svdcnn",
        "--depth",
        "29",
        "--classes",
        "4",
        "--json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = json(&o);
    let total = v["enumerated"]["total"].as_f64().unwrap();
    let mb = v["closed_form"]["storage_mb"].as_f64().unwrap();
    assert!((total / 1.58e6 - 1.0).abs() < 0.05, "{total}");
    assert!((mb / 6.03 - 1.0).abs() < 0.05 && mb <= 6.1, "{mb}");
    assert_eq!(v["enumerated"], v["closed_form"]);
}

#[test]
fn describe_vdcnn_head() {
    let o = run(&["describe", "--family", "vdcnn", "--depth", "9"]);
    assert!(o.status.success());
    assert!(
        stdout(&o).contains("classifier weights without biases: 12591104"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn describe_rejects_unknown_depth() {
    let o = run(&["describe", "--depth", "13"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(["9", "17", "29", "49"].iter().all(|d| err.contains(d)), "{err}");
}

#[test]
fn verify_default_table() {
    let o = run(&["verify"]);
    let out = stdout(&o);
    assert!(o.status.success(), "{out}");
    assert!(out.contains("66.28%"));
    assert!(out.contains("FLAGGED"));
    assert!(!out.contains("FAIL "));
}

#[test]
fn verify_tampered_or_missing_table() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("golden.tsv");
    std::fs::write(&path, "svdcnn 9 0.71 0.02 0.95 2.80\n").unwrap();
    let o = run(&["verify", "--golden", path.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stdout(&o).contains("FAIL"));

    let missing = dir.path().join("absent.tsv");
    let o = run(&["verify", "--golden", missing.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("absent.tsv"));
}

fn train_synthetic(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("m.ckpt");
    let o = run(&[
        "train",
        "--synthetic",
        "--family",
        "svdcnn",
        "--depth",
        "9",
        "--s",
        "128",
        "--epochs",
        "4",
        "--lr",
        "0.0003",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn train_predict_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train_synthetic(dir.path());
    let history = std::fs::read_to_string(dir.path().join("m.ckpt.history.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = history.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 4);
    let last = records.last().unwrap()["val_accuracy"].as_f64().unwrap();
    assert!(last >= 0.90, "{history}");

    let ckpt = ckpt.to_str().unwrap();
    let text = "cats scratch the couch";
    let a = run(&["predict", "--checkpoint", ckpt, "--text", text, "--json"]);
    let b = run(&["predict", "--checkpoint", ckpt, "--text", text, "--json"]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let v = json(&a);
    let probs: Vec<f64> = v["probabilities"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p.as_f64().unwrap())
        .collect();
    assert_eq!(probs.len(), 4);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert!((1..=4).contains(&v["class"].as_u64().unwrap()));

    let empty = run(&["predict", "--checkpoint", ckpt, "--text", ""]);
    assert!(empty.status.success());
    assert!(stdout(&empty).starts_with("class "));
}

#[test]
fn train_echoes_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.ckpt");
    let o = run(&[
        "train",
        "--synthetic",
        "--s",
        "64",
        "--train-size",
        "8",
        "--val-size",
        "4",
        "--epochs",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        stdout(&o).contains("lr=0.01 momentum=0.9 wd=0.001 batch=64"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn train_missing_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("missing.csv");
    let out = dir.path().join("m.ckpt");
    let csv = csv.to_str().unwrap();
    let o = run(&["train", "--csv", csv, "--val", csv, "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("missing.csv"));
    assert!(!out.exists());
}

#[test]
fn train_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    let rows: String = (0..12)
        .map(|i| format!("{},\"sample {i}\",body text {i}\n", 1 + i % 2))
        .collect();
    std::fs::write(&csv, rows).unwrap();
    let out = dir.path().join("m.ckpt");
    let csv = csv.to_str().unwrap();
    let o = run(&[
        "train",
        "--csv",
        csv,
        "--val",
        csv,
        "--classes",
        "2",
        "--s",
        "64",
        "--batch",
        "4",
        "--epochs",
        "1",
        "--lr",
        "0.0003",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.exists());
}

#[test]
fn bench_rejects_single_rep() {
    let o = run(&["bench", "--reps", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for (path, depth) in [(&a, "9"), (&b, "17")] {
        let o = run(&[
            "bench",
            "--s",
            "64",
            "--depth",
            depth,
            "--reps",
            "5",
            "--warmup",
            "1",
            "--json",
            path.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains(&format!("svdcnn-{depth}")));
    }
    let stats: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&a).unwrap()).unwrap();
    assert_eq!(stats["reps"], 5);
    let o = run(&["bench", "--compare", b.to_str().unwrap(), a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let ratio = out.lines().last().unwrap().rsplit(' ').next().unwrap();
    assert_eq!(ratio.split('.').nth(1).map(str::len), Some(2), "{out}");
}
