use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn liftc(args: &[&str]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_liftc"));
    c.args(args).current_dir(root()).env_remove("LIFTC_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    liftc(args).output().expect("liftc runs")
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn lifting_naive_gemm_exits_zero_and_writes_artifacts() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&[
        "lift",
        "corpus/gemm/naive_rowmajor.ml",
        "--api",
        "specs/gemm_rowmajor.json",
        "--out-dir",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.path().join("naive_rowmajor.report.json"));
    let statuses: Vec<&str> = report["functions"].as_array().unwrap().iter().map(|f| f["status"].as_str().unwrap()).collect();
    assert_eq!(statuses.iter().filter(|s| **s == "Lifted").count(), 1);
    let manifest = read_json(&out.path().join("naive_rowmajor.manifest.json"));
    assert_eq!(manifest["lifted"][0]["api"], "gemm_rowmajor");
    let lifted = std::fs::read_to_string(out.path().join("naive_rowmajor.lifted.ml")).unwrap();
    assert!(lifted.contains("atc_dispatch_gemm("), "{lifted}");
}

#[test]
fn non_gemm_exits_two() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&[
        "lift",
        "corpus/other/bubblesort.ml",
        "--api",
        "specs/gemm_rowmajor.json",
        "--out-dir",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let report = read_json(&out.path().join("bubblesort.report.json"));
    for f in report["functions"].as_array().unwrap() {
        assert!(matches!(f["status"].as_str().unwrap(), "Misclassified" | "NoMatch"), "{f}");
    }
    assert!(!out.path().join("bubblesort.lifted.ml").exists());
}

#[test]
fn usage_errors_exit_one() {
    let o = run(&["lift", "corpus/does_not_exist.ml", "--api", "specs/gemm_rowmajor.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["train", "nothing"]).status.code(), Some(1));
    assert_eq!(run(&["lift"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn parse_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ml");
    std::fs::write(&bad, "fn broken(a: *f32 -> void { }").unwrap();
    let o = run(&["lift", bad.to_str().unwrap(), "--api", "specs/gemm_rowmajor.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn declined_rewrites_are_not_emitted() {
    let out = tempfile::tempdir().unwrap();
    let mut child = liftc(&[
        "lift",
        "corpus/gemm/naive_rowmajor.ml",
        "--api",
        "specs/gemm_rowmajor.json",
        "--require-confirm",
        "--out-dir",
        out.path().to_str().unwrap(),
    ])
    .stdin(Stdio::piped())
    .stdout(Stdio::piped())
    .stderr(Stdio::piped())
    .spawn()
    .unwrap();
    child.stdin.take().unwrap().write_all(b"n\n").unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("substitute"));
    assert!(!out.path().join("naive_rowmajor.lifted.ml").exists());
    let report = read_json(&out.path().join("naive_rowmajor.report.json"));
    assert!(report.to_string().contains("rewrite declined"));
}

#[test]
fn bench_on_empty_directory_writes_empty_tables() {
    let corpus = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let o = liftc(&[
        "bench",
        corpus.path().to_str().unwrap(),
        "--api",
        "specs/gemm_rowmajor.json",
        "--out-dir",
        out.path().to_str().unwrap(),
    ])
    .env("LIFTC_SEED", "9")
    .output()
    .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let bench = read_json(&out.path().join("bench.json"));
    assert_eq!(bench["seed"], 9);
    assert_eq!(bench["fixtures"].as_array().unwrap().len(), 0);
    let csv = std::fs::read_to_string(out.path().join("categories.csv")).unwrap();
    assert_eq!(csv.trim(), "label,category,total,lifted,rate");
}

#[test]
fn bench_reports_are_deterministic_modulo_timings() {
    let corpus = tempfile::tempdir().unwrap();
    for f in ["gemm/naive_colmajor.ml", "gemm/fail_alpha.ml", "other/gemv.ml"] {
        let dst = corpus.path().join(f);
        std::fs::create_dir_all(dst.parent().unwrap()).unwrap();
        std::fs::copy(root().join("corpus").join(f), dst).unwrap();
    }
    let mut masked = Vec::new();
    for _ in 0..2 {
        let out = tempfile::tempdir().unwrap();
        let o = run(&[
            "bench",
            corpus.path().to_str().unwrap(),
            "--api",
            "specs/gemm_rowmajor.json",
            "--api",
            "specs/gemm_colmajor.json",
            "--seed",
            "3",
            "--out-dir",
            out.path().to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0));
        let mut v = read_json(&out.path().join("bench.json"));
        liftc_core::pipeline::mask_timings(&mut v);
        masked.push(serde_json::to_string(&v).unwrap());
    }
    assert_eq!(masked[0], masked[1]);
    assert!(masked[0].contains("\"category\":\"gemm\""));
}

#[test]
fn classifier_training_writes_a_loadable_model() {
    let out = tempfile::tempdir().unwrap();
    let model = out.path().join("m.json");
    let o = run(&["train", "classifier", "corpus", "--out", model.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    liftc_core::classifier::ClassifierModel::load(&model).unwrap();
    // a corpus without labels cannot be trained on
    let empty = tempfile::tempdir().unwrap();
    assert_eq!(run(&["train", "classifier", empty.path().to_str().unwrap()]).status.code(), Some(1));
}
