use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.json")
}

fn advpocket(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advpocket"))
        .args(args)
        .arg("--out")
        .arg(out)
        .arg("-q")
        .env_remove("ADVPOCKET_OUT")
        .output()
        .expect("binary runs")
}

fn with_config<'a>(sub: &'a str, config: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![sub, "--config", config];
    v.extend_from_slice(extra);
    v
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = advpocket(&["evaluate"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--config"));
    let o = advpocket(&["train", "--config", "/nonexistent/plan.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = advpocket(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn overrides_must_name_existing_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let cfg = cfg.to_str().unwrap();
    let o = advpocket(&with_config("train", cfg, &["--set", "model.widht=3"]), dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("model.widht"));
}

#[test]
fn calibrate_then_detect_clean_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let cfg = cfg.to_str().unwrap();

    let o = advpocket(&with_config("calibrate", cfg, &[]), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 2);
    let file: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("thresholds.json")).unwrap()).unwrap();
    assert_eq!(file["thresholds"].as_array().unwrap().len(), 2);
    assert!(file["config"]["detector"].is_object());

    let o = advpocket(&with_config("detect", cfg, &[]), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("id\tdelta\tk_t\tk_u\tverdict\tfailed"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 12);
    for r in &rows {
        assert_eq!(r.len(), 6);
        assert_eq!(r[4] == "benign", r[5] == "-");
    }
    assert!(rows.iter().any(|r| r[4] == "benign"));
}

#[test]
fn stale_thresholds_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let cfg = cfg.to_str().unwrap();
    assert_eq!(advpocket(&with_config("calibrate", cfg, &[]), dir.path()).status.code(), Some(0));

    let o = advpocket(&with_config("detect", cfg, &["--set", "detector.n_noise=4"]), dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stale"));

    let o = advpocket(&with_config("detect", cfg, &["--set", "model.training.seed=9"]), dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stale"));
    assert!(o.stdout.is_empty());
}

#[test]
fn tiny_calibration_set_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let cfg = cfg.to_str().unwrap();
    let o = advpocket(&with_config("calibrate", cfg, &["--set", "plan.fprs=[0.001]"]), dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unidentifiable"));
}

#[test]
fn attack_writes_a_batch_that_detect_reads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let cfg = cfg.to_str().unwrap();
    let o = advpocket(&with_config("attack", cfg, &[]), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let successes = stdout(&o).lines().skip(1).filter(|l| l.split('\t').nth(4) == Some("true")).count();
    let batch = dir.path().join("adversarials.json");
    assert!(batch.exists());

    assert_eq!(advpocket(&with_config("calibrate", cfg, &[]), dir.path()).status.code(), Some(0));
    let o = advpocket(&["detect", batch.to_str().unwrap(), "--config", cfg], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), successes + 1);
}

#[test]
fn evaluate_is_reproducible_and_report_rerenders() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let cfg = cfg.to_str().unwrap();
    let first = advpocket(&with_config("evaluate", cfg, &["--jobs", "1", "--seed", "7"]), a.path());
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let second = advpocket(&with_config("evaluate", cfg, &["--jobs", "3", "--seed", "7"]), b.path());
    assert_eq!(second.status.code(), Some(0));
    for f in ["report.json", "tables.csv", "curves.csv", "trend.csv", "tables.txt"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 7);

    let o = advpocket(&["report"], a.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), stdout(&first));
}

#[test]
fn environment_overrides_the_output_flag() {
    let flag = tempfile::tempdir().unwrap();
    let env = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_advpocket"))
        .args(["train", "--config", smoke_config().to_str().unwrap(), "-q", "--out"])
        .arg(flag.path())
        .env("ADVPOCKET_OUT", env.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(env.path().join("model.json").exists());
    assert!(env.path().join("train.json").exists());
    assert!(!flag.path().join("model.json").exists());
}
