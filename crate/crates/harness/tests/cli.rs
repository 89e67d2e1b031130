use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn cogdrive(runs: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cogdrive"))
        .args(args)
        .env("COGDRIVE_RUNS", runs)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn last_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text
        .lines()
        .last()
        .unwrap_or_else(|| panic!("no output; stderr: {}", String::from_utf8_lossy(&out.stderr)));
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {line}"))
}

#[test]
fn run_writes_trajectory_and_metrics() {
    let runs = tempfile::tempdir().unwrap();
    let cfg = scenarios_dir().join("two_lane_obstacle.toml");
    let out = cogdrive(
        runs.path(),
        &["run", "--config", cfg.to_str().unwrap(), "--controller", "teacher"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let summary = last_json(&out);
    let dir = PathBuf::from(summary["dir"].as_str().unwrap());
    assert!(dir.starts_with(runs.path()));
    let csv = std::fs::read_to_string(dir.join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,x,y,psi,v,steering,accel,intention,phase,D_o,O_C,O_L,O_R,event\n"));
    let metrics: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["config_hash"], summary["config_hash"]);
    assert_eq!(metrics["metrics"]["changes_completed"], 1);
    assert_eq!(metrics["metrics"]["collided"], false);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["controller"], "teacher");

    let eval = cogdrive(
        runs.path(),
        &["eval", "--trajectory", dir.join("trajectory.csv").to_str().unwrap()],
    );
    assert!(eval.status.success());
    assert_eq!(last_json(&eval)["changes_completed"], 1);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let cfg = scenarios_dir().join("random_appearance.toml");
    let read = || {
        let runs = tempfile::tempdir().unwrap();
        let out = cogdrive(runs.path(), &["run", "--config", cfg.to_str().unwrap()]);
        assert!(out.status.success());
        let dir = PathBuf::from(last_json(&out)["dir"].as_str().unwrap());
        std::fs::read(dir.join("trajectory.csv")).unwrap()
    };
    assert_eq!(read(), read());
}

#[test]
fn missing_config_exits_with_error_record() {
    let runs = tempfile::tempdir().unwrap();
    let out = cogdrive(runs.path(), &["run", "--config", "no/such/file.toml"]);
    assert!(!out.status.success());
    let err = last_json(&out);
    assert_eq!(err["error"]["kind"], "io");
    assert!(err["error"]["message"].as_str().unwrap().contains("no/such/file.toml"));
}

#[test]
fn invalid_config_exits_with_error_record() {
    let runs = tempfile::tempdir().unwrap();
    let bad = runs.path().join("bad.toml");
    std::fs::write(
        &bad,
        "schema_version = 1\nhorizon = 10.0\n[road]\nnum_lanes = 2\nlane_width = 3.5\nlanes = 3\n",
    )
    .unwrap();
    let out = cogdrive(runs.path(), &["run", "--config", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert_eq!(last_json(&out)["error"]["kind"], "parse");
}

#[test]
fn gradcheck_reports_small_error() {
    let runs = tempfile::tempdir().unwrap();
    let out = cogdrive(runs.path(), &["gradcheck", "--seed", "7"]);
    assert!(out.status.success());
    let r = last_json(&out);
    assert!(r["max_rel_error"].as_f64().unwrap() < 1e-4, "{r}");
    assert!(r["coords_checked"].as_u64().unwrap() >= 200);
}

#[test]
fn gen_data_train_and_drive_with_checkpoint() {
    let runs = tempfile::tempdir().unwrap();
    let out = cogdrive(runs.path(), &["gen-data", "--scenarios", "5", "--stride", "40"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let gen = last_json(&out);
    assert_eq!(gen["episodes"], 10);
    let dataset = gen["dataset"].as_str().unwrap().to_string();

    let train = |seed: &str| {
        let out = cogdrive(
            runs.path(),
            &[
                "train",
                "--dataset",
                &dataset,
                "--epochs",
                "2",
                "--batch",
                "8",
                "--seed",
                seed,
            ],
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
        last_json(&out)
    };
    let a = train("3");
    let ckpt = a["checkpoint"].as_str().unwrap().to_string();
    let first = std::fs::read(&ckpt).unwrap();
    // Same inputs map to the same run directory; the rewrite must match.
    let b = train("3");
    assert_eq!(a["checkpoint"], b["checkpoint"]);
    assert_eq!(std::fs::read(&ckpt).unwrap(), first);
    assert!(Path::new(&ckpt).with_file_name("loss_curve.csv").is_file());

    let cfg = scenarios_dir().join("two_lane_obstacle.toml");
    let out = cogdrive(
        runs.path(),
        &[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--controller",
            "lstm",
            "--checkpoint",
            &ckpt,
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let dir = PathBuf::from(last_json(&out)["dir"].as_str().unwrap());
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["controller"], "lstm");
    assert_eq!(manifest["controller_checksum"].as_str().unwrap().len(), 64);
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let runs = tempfile::tempdir().unwrap();
    let path = runs.path().join("ckpt.json");
    let params = cogdrive_core::neuro::LstmParams::init(1);
    let text = cogdrive_core::neuro::write_checkpoint(&params, &Default::default());
    std::fs::write(&path, text.replacen("0.", "1.", 1)).unwrap();
    let cfg = scenarios_dir().join("two_lane_obstacle.toml");
    let out = cogdrive(
        runs.path(),
        &[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--controller",
            "lstm",
            "--checkpoint",
            path.to_str().unwrap(),
        ],
    );
    assert!(!out.status.success());
    assert_eq!(last_json(&out)["error"]["kind"], "neuro");
}

#[test]
fn unknown_criterion_is_a_usage_error() {
    let runs = tempfile::tempdir().unwrap();
    let out = cogdrive(runs.path(), &["paper-suite", "--only", "2,9"]);
    assert!(!out.status.success());
    assert_eq!(last_json(&out)["error"]["kind"], "usage");
}

#[test]
fn paper_suite_subset_prints_table() {
    let runs = tempfile::tempdir().unwrap();
    let out = cogdrive(runs.path(), &["paper-suite", "--only", "1,2,8"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("[PASS]")).count(), 3, "{text}");
    assert!(text.contains("3/3 criteria passed"));
}
