//! End-to-end runs of the `wordaad` binary on a tiny cohort.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use wordaad::io::load_epochset;
use wordaad::Label;

const TINY: &str = r#"
seed = 11

[synth]
n_subjects = 3
counts = [[8, 16], [8, 16], [8, 16]]
attended_rejections = [0, 0, 0]
snr_db = [6.0, 6.0, 6.0]
trials_per_subject = 8

[model]
f1 = 2
k1 = 16
d = 1
f2 = 4
k2 = 4

[train]
passes = 2

[experiment]
scheme = "loso"
variants = ["original-trained", "augmented-trained"]
permutation_draws = 2000
"#;

fn wordaad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wordaad")).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = wordaad(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn tiny_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, format!("{TINY}{extra}")).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn chain(dir: &Path, cfg: &Path, jobs: &str) -> PathBuf {
    let data = dir.join("data");
    let report = dir.join("report");
    run_ok(&["--config", s(cfg), "--jobs", jobs, "synth", "--out", s(&data)]);
    run_ok(&[
        "--config",
        s(cfg),
        "--jobs",
        jobs,
        "train-eval",
        "--input",
        s(&data.join("original.eaad")),
        "--out",
        s(&report),
    ]);
    report
}

#[test]
fn rerunning_the_chain_reproduces_the_report_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    let first = chain(&tmp.path().join("a"), &cfg, "1");
    let second = chain(&tmp.path().join("b"), &cfg, "2");
    for name in ["results.csv", "curves.csv", "comparisons.csv", "summary.md", "report.json"] {
        let a = std::fs::read(first.join(name)).unwrap();
        let b = std::fs::read(second.join(name)).unwrap();
        assert!(!a.is_empty(), "{name} is empty");
        assert_eq!(a, b, "{name} differs between reruns");
    }
    let results = std::fs::read_to_string(first.join("results.csv")).unwrap();
    // 3 LOSO folds × 3 paradigms × 2 variants, plus the header.
    assert_eq!(results.lines().count(), 1 + 3 * 3 * 2);

    let prov: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(first.join("train-eval.provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["seed"], 11);
    assert_eq!(prov["inputs"].as_array().unwrap().len(), 1);
    let outputs = prov["outputs"].as_array().unwrap();
    assert!(outputs.iter().any(|o| o["path"].as_str().unwrap().ends_with("results.csv")));

    // compare and report consume the report.
    let cmp = tmp.path().join("cmp");
    let out = run_ok(&[
        "--config",
        s(&cfg),
        "compare",
        "--input",
        s(&first.join("report.json")),
        "--a",
        "augmented-trained",
        "--b",
        "original-trained",
        "--out",
        s(&cmp),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("augmented-trained>original-trained/all"));
    assert!(cmp.join("comparisons.csv").exists() && cmp.join("compare.provenance.json").exists());
    let rep = tmp.path().join("rep");
    run_ok(&[
        "--config",
        s(&cfg),
        "report",
        "--input",
        s(&first.join("report.json")),
        s(&second.join("report.json")),
        "--out",
        s(&rep),
    ]);
    let merged = std::fs::read_to_string(rep.join("results.csv")).unwrap();
    assert_eq!(merged.lines().count(), 1 + 2 * 18);
    assert_eq!(merged.lines().filter(|l| l.starts_with("scheme,")).count(), 1);
}

#[test]
fn augment_writes_one_file_per_origin() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    let data = tmp.path().join("data");
    run_ok(&["--config", s(&cfg), "synth", "--out", s(&data)]);
    let aug = tmp.path().join("aug");
    run_ok(&["--config", s(&cfg), "augment", "--input", s(&data.join("original.eaad")), "--out", s(&aug)]);
    for name in ["upsampled", "sim0dB", "sim3dB", "sim6dB"] {
        let set = load_epochset(aug.join(format!("{name}.eaad"))).unwrap();
        let att = set.iter().filter(|e| e.label == Label::Attended).count();
        // Each set holds 2 × 16 epochs per class for each of 3 subjects × 3 paradigms.
        assert_eq!((att, set.len() - att), (9 * 32, 9 * 32), "{name}");
        assert_eq!(set.attrs["stage"], "augmented");
    }
    // An augmented file is not an acceptable training input.
    let out = wordaad(&["--config", s(&cfg), "train-eval", "--input", s(&aug.join("sim0dB.eaad")), "--out", s(&aug)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage"));
}

#[test]
fn continuous_recordings_preprocess_into_original_epochs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    let data = tmp.path().join("data");
    run_ok(&["--config", s(&cfg), "synth", "--continuous", "--out", s(&data)]);
    let raw: Vec<_> = std::fs::read_dir(data.join("raw")).unwrap().collect();
    assert_eq!(raw.len(), 9);
    let pre = tmp.path().join("pre");
    run_ok(&["--config", s(&cfg), "preprocess", "--input", s(&data.join("raw")), "--out", s(&pre)]);
    let set = load_epochset(pre.join("original.eaad")).unwrap();
    assert_eq!(set.len(), 9 * 24);
    assert!(set.iter().all(|e| e.channels == 32 && e.samples == 307 && e.fs_hz == 256.0));
    assert_eq!(set.attrs["stage"], "original");
}

#[test]
fn exit_codes_follow_the_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let o = s(&out_dir);

    // Usage and configuration errors.
    assert_eq!(wordaad(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(wordaad(&["--out", o, "synth"]).status.code(), Some(2), "missing seed");
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\n[train]\nlearning_rate = 0.1\n").unwrap();
    assert_eq!(wordaad(&["--config", s(&bad), "--out", o, "synth"]).status.code(), Some(2));
    std::fs::write(&bad, "seed = 1\n[train]\npasses = 0\n").unwrap();
    assert_eq!(wordaad(&["--config", s(&bad), "--out", o, "synth"]).status.code(), Some(2));
    assert_eq!(
        wordaad(&["--config", s(&tmp.path().join("absent.toml")), "--out", o, "synth"]).status.code(),
        Some(2)
    );

    // Data errors.
    let cfg = tiny_config(tmp.path(), "");
    let missing = tmp.path().join("missing.eaad");
    assert_eq!(wordaad(&["--config", s(&cfg), "--out", o, "augment", "--input", s(&missing)]).status.code(), Some(3));
    let junk = tmp.path().join("junk.eaad");
    std::fs::write(&junk, b"not an epoch file").unwrap();
    assert_eq!(wordaad(&["--config", s(&cfg), "--out", o, "augment", "--input", s(&junk)]).status.code(), Some(3));
}

#[test]
fn divergent_training_exits_with_code_4() {
    let tmp = tempfile::tempdir().unwrap();
    // Steps of 1e30 overflow float32 activations within the first pass.
    let cfg = tiny_config(tmp.path(), "");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("passes = 2", "passes = 2\nlr = 1e30");
    std::fs::write(&cfg, text).unwrap();
    let data = tmp.path().join("data");
    run_ok(&["--config", s(&cfg), "synth", "--out", s(&data)]);
    let out = wordaad(&[
        "--config",
        s(&cfg),
        "--out",
        s(&tmp.path().join("te")),
        "train-eval",
        "--input",
        s(&data.join("original.eaad")),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}
