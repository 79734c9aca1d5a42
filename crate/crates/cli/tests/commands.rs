use std::fs;
use std::path::Path;
use std::process::Command;

use jointspace::obstacle_map::GridSpec;
use jointspace::planner::Space;
use jointspace_cli::config::{SceneSpec, EXPERIMENT_START};
use jointspace_cli::{cmd_calibrate, cmd_compare, cmd_map, cmd_plan, RunConfig};

fn small(dir: &Path) -> RunConfig {
    RunConfig {
        n_joint: 300,
        n_position: 300,
        n_boundary: 2000,
        sigma_q_deg: Some(3.0),
        seeds: vec![1],
        output_dir: dir.to_path_buf(),
        eval_samples: 50,
        ..RunConfig::default()
    }
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn map_hemisphere_accounts_for_every_grid_direction() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let written = cmd_map(&cfg).unwrap();
    assert_eq!(written.len(), 3);
    let side = json(&dir.path().join("boundary.json"));
    let mesh = &side["mesh"];
    let vertices = mesh["vertex_count"].as_u64().unwrap() as usize;
    let skipped = mesh["skipped_directions_deg"].as_array().unwrap().len();
    assert_eq!(vertices + skipped, GridSpec::new(30, 30).unwrap().vertex_count());
    let obj = fs::read_to_string(dir.path().join("boundary.obj")).unwrap();
    assert_eq!(obj.lines().filter(|l| l.starts_with("v ")).count(), vertices);
    let cloud = fs::read_to_string(dir.path().join("scene_samples.obj")).unwrap();
    assert_eq!(cloud.lines().filter(|l| l.starts_with("v ")).count(), 2000);
}

#[test]
fn map_cholecystectomy_writes_curvature() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.scene = SceneSpec::Cholecystectomy;
    cmd_map(&cfg).unwrap();
    let side = json(&dir.path().join("boundary.json"));
    assert_eq!(side["scene"], "cholecystectomy");
    let v = &side["mesh"]["vertices"][0];
    assert!(v["curvature"]["K"].is_number());
    assert!(v["curvature"]["nonconcave"].is_boolean());
}

#[test]
fn plan_both_spaces_produce_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    for space in [Space::Joint, Space::Position] {
        let written = cmd_plan(&cfg, space, None).unwrap();
        let csv = fs::read_to_string(&written[0]).unwrap();
        assert!(csv.starts_with("t,q1,q2,q3,q4,q5,x,y,z\n"));
        assert!(csv.lines().count() > 2);
        let metrics = json(&written[1]);
        assert!(metrics["metrics"]["path_length_mm"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn plan_with_equal_endpoints_is_a_single_pose() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.goal = EXPERIMENT_START;
    let written = cmd_plan(&cfg, Space::Joint, None).unwrap();
    let csv = fs::read_to_string(&written[0]).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let m = &json(&written[1])["metrics"];
    assert_eq!(m["path_length_mm"].as_f64(), Some(0.0));
    assert_eq!(m["dpsi_max_deg_per_mm"].as_f64(), Some(0.0));
}

#[test]
fn compare_one_seed_reports_calibrated_buffer() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.sigma_q_deg = None;
    cmd_compare(&cfg, None).unwrap();
    let text = fs::read_to_string(dir.path().join("comparison.txt")).unwrap();
    let rows: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("joint ") || l.starts_with("position "))
        .collect();
    assert_eq!(rows.len(), 2);
    let report = json(&dir.path().join("comparison.json"));
    assert_eq!(report["sigma_q_source"], "calibrated");
    let cal = report["calibration"]["sigma_q_deg"].as_f64().unwrap();
    assert!(cal > 0.0);
    assert!((report["report"]["sigma_q_deg"].as_f64().unwrap() - cal).abs() < 1e-12);
}

#[test]
fn calibrate_reports_zero_and_linearity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    cmd_calibrate(&cfg).unwrap();
    let c = json(&dir.path().join("calibration.json"));
    assert_eq!(c["zero"]["sigma_q"].as_f64(), Some(0.0));
    assert!(c["linearity_ratio"].as_f64().unwrap() > 1.0);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_jointspace");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"version\": 1,").unwrap();
    let status = Command::new(bin)
        .args(["--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap(), "map"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(!out.exists());

    let status = Command::new(bin)
        .args(["plan", "--space", "sideways"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // goal outside the cavity: the position planner rejects it
    let unreachable = dir.path().join("far.json");
    fs::write(
        &unreachable,
        r#"{"version": 1, "goal": [2000, 0, -300], "n_position": 50}"#,
    )
    .unwrap();
    let status = Command::new(bin)
        .args([
            "--config",
            unreachable.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .args(["plan", "--space", "position"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));
    assert!(!out.exists());
}
