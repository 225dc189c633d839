use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dcac(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcac")).env("DCAC_OUT_DIR", out).env("RUST_LOG", "warn").args(args).output().unwrap()
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = dcac(out, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn synth(out: &Path, name: &str, domains: &str, per: &str) -> PathBuf {
    ok(out, &["synth", "--domains", domains, "--per-domain", per, "--size", "32", "--seed", "7", "--run-name", name]);
    out.join(name).join("data/manifest.json")
}

const TINY: &[&str] = &["--patch-size", "32", "--depth", "2", "--base-channels", "4", "--epochs", "1", "--minibatches", "2"];

#[test]
fn help_documents_flags_and_unknown_flags_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dcac(tmp.path(), &["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for sub in ["synth", "plan", "train", "crossval", "infer", "eval", "experiment", "--out-dir", "--run-name"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    let o = dcac(tmp.path(), &["crossval", "--help"]);
    let text = String::from_utf8(o.stdout).unwrap();
    for flag in ["--seed", "--preset", "--dcac", "--jobs", "--k", "--plan", "--manifest"] {
        assert!(text.contains(flag), "{flag} missing from crossval help");
    }
    let o = dcac(tmp.path(), &["synth", "--seed", "1", "--frobnicate"]);
    assert!(!o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stderr).trim().lines().count(), 1);
    assert!(!dcac(tmp.path(), &["synth"]).status.success(), "seed is required");
}

#[test]
fn synth_writes_a_forty_sample_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["synth", "--domains", "4", "--per-domain", "10", "--seed", "7", "--run-name", "s"]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("s/data/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["samples"].as_array().unwrap().len(), 40);
    assert_eq!(m["domains"].as_array().unwrap().len(), 4);
    assert!(tmp.path().join("s/config.resolved.json").exists());
    // Same name twice is refused rather than overwritten.
    assert!(!dcac(tmp.path(), &["synth", "--seed", "7", "--run-name", "s"]).status.success());
}

#[test]
fn timestamped_run_directories_do_not_collide() {
    let tmp = tempfile::tempdir().unwrap();
    for _ in 0..2 {
        ok(tmp.path(), &["synth", "--domains", "2", "--per-domain", "1", "--size", "32", "--seed", "1"]);
    }
    let dirs: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert_eq!(dirs.len(), 2);
    assert!(dirs.iter().all(|d| d.contains("-synth")));
}

#[test]
fn eval_of_ground_truth_scores_one() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), "data", "2", "3");
    let preds = tmp.path().join("preds");
    fs::create_dir(&preds).unwrap();
    for e in fs::read_dir(tmp.path().join("data/data/masks")).unwrap() {
        let e = e.unwrap();
        fs::copy(e.path(), preds.join(e.file_name())).unwrap();
    }
    let out =
        ok(tmp.path(), &["eval", "--manifest", manifest.to_str().unwrap(), "--predictions", preds.to_str().unwrap(), "--run-name", "ev"]);
    assert!(out.contains("seg_score 1.0000"), "{out}");
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("ev/report/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["mean"]["seg_score"], 1.0);
    assert_eq!(summary["count"], 6);

    fs::remove_file(preds.join("domain1_0002.png")).unwrap();
    let o = dcac(tmp.path(), &["eval", "--manifest", manifest.to_str().unwrap(), "--predictions", preds.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("domain1_0002.png") && err.trim().lines().count() == 1, "{err}");
}

#[test]
fn crossval_then_infer_and_plan_reuse() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), "data", "2", "5");
    let m = manifest.to_str().unwrap();
    let mut args = vec!["crossval", "--manifest", m, "--k", "5", "--seed", "3", "--dcac", "--run-name", "cv"];
    args.extend_from_slice(TINY);
    ok(tmp.path(), &args);
    let cv = tmp.path().join("cv/crossval");
    for f in 0..5 {
        assert!(cv.join(format!("fold_{f}/checkpoint_best.ckpt")).exists());
        assert!(cv.join(format!("fold_{f}/fold_report.json")).exists());
    }
    let resolved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("cv/config.resolved.json")).unwrap()).unwrap();
    assert_eq!(resolved["command"]["subcommand"], "crossval");
    assert_eq!(resolved["resolved"]["plan"]["patch_size"], 32);
    assert_eq!(resolved["resolved"]["plan"]["dcac_enabled"], true);

    let out =
        ok(tmp.path(), &["infer", "--crossval", cv.to_str().unwrap(), "--manifest", m, "--no-tta", "--save-probs", "--run-name", "inf"]);
    assert!(out.contains("10 images with a 5-model ensemble"), "{out}");
    let index: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("inf/predictions/predictions.json")).unwrap()).unwrap();
    assert_eq!(index.as_array().unwrap().len(), 10);
    assert!(index[0]["predicted_domain"].is_u64());
    assert!(tmp.path().join("inf/predictions/domain0_0000.probs.json").exists());

    let plan = tmp.path().join("cv/plan.json");
    let mut args = vec!["train", "--manifest", m, "--plan", plan.to_str().unwrap(), "--seed", "1", "--run-name", "tr"];
    ok(tmp.path(), &args);
    assert!(tmp.path().join("tr/checkpoint_best.ckpt").exists());
    assert!(tmp.path().join("tr/training_log.csv").exists());
    args.extend_from_slice(&["--epochs", "3"]);
    assert!(!dcac(tmp.path(), &args).status.success(), "--plan conflicts with overrides");

    let o = dcac(tmp.path(), &["infer", "--crossval", cv.to_str().unwrap(), "--manifest", m, "--threshold", "1.5"]);
    assert!(!o.status.success());
}

#[test]
fn experiment_rejects_overlapping_sets() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synth(tmp.path(), "data", "2", "2");
    let m = m.to_str().unwrap();
    let mut args = vec!["experiment", "--protocol", "cross-domain", "--source", m, "--eval", m, "--k", "2"];
    args.extend_from_slice(TINY);
    let o = dcac(tmp.path(), &args);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("overlap"));
    let o = dcac(tmp.path(), &["experiment", "--protocol", "cross-domain", "--source", m]);
    assert!(!o.status.success(), "--eval is required for cross-domain");
}

#[test]
fn experiment_full_train_reports_curves_only() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synth(tmp.path(), "data", "2", "2");
    let mut args = vec!["experiment", "--protocol", "full-train", "--manifest", m.to_str().unwrap(), "--k", "2", "--run-name", "ft"];
    args.extend_from_slice(TINY);
    ok(tmp.path(), &args);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("ft/report/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["count"], 0);
    assert_eq!(summary["metadata"]["kind"], "full_train");
    assert_eq!(summary["metadata"]["training_logs"].as_array().unwrap().len(), 2);
}
