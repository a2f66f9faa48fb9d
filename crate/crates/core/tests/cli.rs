mod common;

use std::fs;
use std::path::Path;

use viewplan::cli::{exit_code, main_with_args, EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE};
use viewplan::io::{load_ply, read_json, RunConfig, SceneSidecar};
use viewplan::scene::{generate_scene, Layout, SceneSpec};
use viewplan::Error;

use common::check_csv_bookkeeping;

/// JSON output with the (run-specific) output directory removed.
fn json_without_out_dir(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v["config"].as_object_mut().unwrap().remove("out_dir");
    v
}

fn run(args: &[&str], out: &Path) -> i32 {
    let mut full = vec!["viewplan"];
    full.extend_from_slice(args);
    full.extend(["--out", out.to_str().unwrap()]);
    main_with_args(full)
}

#[test]
fn generate_scene_writes_ply_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["generate-scene", "--points", "500", "--seed", "8"], dir.path()), EXIT_OK);
    let text = fs::read_to_string(dir.path().join("scene_single.ply")).unwrap();
    assert!(text.starts_with("ply\nformat ascii 1.0\nelement vertex 500\n"));
    let loaded = load_ply(&dir.path().join("scene_single.ply")).unwrap();
    let sidecar: SceneSidecar = read_json(&dir.path().join("scene_single.json")).unwrap();
    let regenerated = generate_scene(&sidecar.spec).unwrap();
    assert_eq!(loaded, regenerated.cloud);
    assert_eq!(sidecar.plants, regenerated.plants);

    assert_eq!(run(&["generate-scene", "--noisy", "--realization", "2", "--scene", "row3"], dir.path()), EXIT_OK);
    let noisy: SceneSidecar = read_json(&dir.path().join("scene_row3_r2.json")).unwrap();
    assert_eq!(noisy.realization, Some(2));
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["generate-scene", "--scene", "forest"], dir.path()), EXIT_USAGE);
    assert_eq!(run(&["plan", "--kernel", "linear"], dir.path()), EXIT_USAGE);
    assert_eq!(run(&["plan", "--cameras", "1"], dir.path()), EXIT_USAGE);
    assert_eq!(run(&["frobnicate"], dir.path()), EXIT_USAGE);
    assert_eq!(run(&["plan", "--config", "/nonexistent/cfg.json"], dir.path()), EXIT_IO);
}

#[test]
fn unwritable_output_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    assert_eq!(run(&["generate-scene"], &blocker.join("sub")), EXIT_IO);
}

#[test]
fn error_kinds_map_to_exit_codes() {
    assert_eq!(exit_code(&Error::Numerical { message: "x".into(), jitter: 1e-4 }), EXIT_NUMERICAL);
    assert_eq!(exit_code(&Error::Config("x".into())), EXIT_USAGE);
}

#[test]
fn plan_default_budget_and_repeatability() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        assert_eq!(run(&["plan", "--kernel", "matern25", "--seed", "5"], dir.path()), EXIT_OK);
    }
    let csv = fs::read_to_string(a.path().join("trace_single_matern25.csv")).unwrap();
    assert_eq!(check_csv_bookkeeping(&csv).unwrap(), 250);
    let name = "trace_single_matern25.csv";
    assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
    let name = "plan_single_matern25.json";
    assert_eq!(json_without_out_dir(&a.path().join(name)), json_without_out_dir(&b.path().join(name)));
    let plan: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join("plan_single_matern25.json")).unwrap()).unwrap();
    assert_eq!(plan["incomplete"], false);
    assert_eq!(plan["config"]["kernel"], "matern25");
    assert_eq!(plan["placement"]["cameras"].as_array().unwrap().len(), 4);
}

#[test]
fn plan_on_ply_input() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["generate-scene", "--scene", "row3"], dir.path()), EXIT_OK);
    let ply = dir.path().join("scene_row3.ply");
    assert_eq!(run(&["plan", "--smoke", "--ply", ply.to_str().unwrap(), "--cameras", "3"], dir.path()), EXIT_OK);
    let csv = fs::read_to_string(dir.path().join("trace_scene_row3_matern25.csv")).unwrap();
    assert_eq!(check_csv_bookkeeping(&csv).unwrap(), 40);
}

#[test]
fn baseline_json_lists_candidates() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["baseline", "--candidates", "50", "--seed", "3"], dir.path()), EXIT_OK);
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("baseline_single.json")).unwrap()).unwrap();
    let values: Vec<f64> = v["result"]["candidates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["value"].as_f64().unwrap())
        .collect();
    assert_eq!(values.len(), 50);
    assert_eq!(v["result"]["best_value"].as_f64().unwrap(), values.iter().cloned().fold(f64::MIN, f64::max));
}

#[test]
fn experiment_reports_are_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["experiment", "--smoke", "--scenes", "single,row3,grid9", "--realizations", "2", "--kernel", "matern25"];
    for dir in [&a, &b] {
        assert_eq!(run(&args, dir.path()), EXIT_OK);
    }
    for scene in ["single", "row3", "grid9"] {
        for name in [format!("report_{scene}.csv"), format!("mean_{scene}.csv")] {
            let x = fs::read(a.path().join(&name)).unwrap();
            assert_eq!(x, fs::read(b.path().join(&name)).unwrap(), "{name} differs");
        }
        let name = format!("summary_{scene}.json");
        assert_eq!(json_without_out_dir(&a.path().join(&name)), json_without_out_dir(&b.path().join(&name)));
        let csv = fs::read_to_string(a.path().join(format!("report_{scene}.csv"))).unwrap();
        // 2 realizations × (40 BO rows + 50 baseline rows)
        assert_eq!(check_csv_bookkeeping(&csv).unwrap(), 2 * (40 + 50));
    }
}

#[test]
fn config_file_round_trip_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(Layout::Row3, 11);
    cfg.n_iters = 3;
    cfg.n_init = 5;
    cfg.out_dir = dir.path().to_path_buf();
    let path = dir.path().join("cfg.json");
    viewplan::io::write_json(&path, &cfg).unwrap();
    assert_eq!(run(&["plan", "--config", path.to_str().unwrap(), "--iters", "4"], dir.path()), EXIT_OK);
    let plan: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("plan_row3_matern25.json")).unwrap()).unwrap();
    assert_eq!(plan["evaluations"], 9);
    assert_eq!(plan["config"]["scene"]["layout"], serde_json::to_value(SceneSpec::new(Layout::Row3, 0).layout).unwrap());
    assert!(plan["config"]["space"].is_object());
}
