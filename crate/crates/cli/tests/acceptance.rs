//! CLI acceptance: byte determinism of every subcommand (criterion 11)
//! plus the exit-code and file-format contracts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_ipp")
}

fn run(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(bin());
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ipp_accept_{tag}_{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("cfg.json");
    fs::write(&path, body).unwrap();
    path
}

fn base_config() -> String {
    r#"{
  "environment": {"lower": [0.0, 0.0], "upper": [1.0, 1.0]},
  "kernel": {"variance": 1.0, "lengthscales": [0.25, 0.25]},
  "noise_variance": 0.01,
  "seed": 9,
  "robots": 2,
  "waypoints": 5,
  "train_samples": 200,
  "optimizer": {"max_iters": 120},
  "field_resolution": [12, 12]
}"#
    .to_string()
}

fn read_bytes(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
}

/// Criterion 11: every subcommand is byte-identical across two runs with
/// the same config and seed.
#[test]
fn criterion_11_cli_determinism() {
    let root = tmp_dir("det");
    let cfg = write_config(&root, &base_config());
    let cfg_s = cfg.to_str().unwrap();

    let mut identical = Vec::new();
    for file in [
        "field.csv",
        "field.meta.json",
        "paths.json",
        "trace.csv",
        "report.json",
        "plot.svg",
    ] {
        let out_a = root.join("a");
        let out_b = root.join("b");
        let _ = (fs::create_dir_all(&out_a), fs::create_dir_all(&out_b));
        let (a, b) = (out_a.to_str().unwrap(), out_b.to_str().unwrap());

        match file {
            "field.csv" | "field.meta.json" => {
                for dir in [a, b] {
                    let st = run(&["gen-data", "-c", cfg_s, "-o", dir], &[]);
                    assert!(st.status.success(), "gen-data failed: {st:?}");
                }
            }
            "paths.json" | "trace.csv" => {
                for dir in [a, b] {
                    let st = run(&["plan", "-c", cfg_s, "-o", dir], &[]);
                    assert!(st.status.success(), "plan failed: {st:?}");
                }
            }
            "report.json" => {
                for dir in [a, b] {
                    let field = format!("{dir}/field.csv");
                    let paths = format!("{dir}/paths.json");
                    let st = run(
                        &["eval", "--paths", &paths, "--field", &field, "-o", dir],
                        &[],
                    );
                    assert!(st.status.success(), "eval failed: {st:?}");
                }
            }
            _ => {
                for dir in [a, b] {
                    let field = format!("{dir}/field.csv");
                    let paths = format!("{dir}/paths.json");
                    let st = run(
                        &["plot", "--paths", &paths, "--field", &field, "-o", dir],
                        &[],
                    );
                    assert!(st.status.success(), "plot failed: {st:?}");
                }
            }
        }
        let bytes_a = read_bytes(&out_a.join(file));
        let bytes_b = read_bytes(&out_b.join(file));
        assert_eq!(
            bytes_a, bytes_b,
            "criterion 11 FAIL: {file} differs between runs"
        );
        identical.push(file);
    }
    println!("criterion 11 PASS: byte-identical outputs: {identical:?}");
    let _ = fs::remove_dir_all(&root);
}

#[test]
fn restarts_are_deterministic_and_merged_by_best() {
    let root = tmp_dir("restarts");
    let cfg = write_config(&root, &base_config());
    let cfg_s = cfg.to_str().unwrap();
    let (a, b) = (root.join("a"), root.join("b"));
    fs::create_dir_all(&a).unwrap();
    fs::create_dir_all(&b).unwrap();
    for dir in [&a, &b] {
        let st = run(
            &[
                "plan",
                "-c",
                cfg_s,
                "-o",
                dir.to_str().unwrap(),
                "--restarts",
                "3",
            ],
            &[("IPP_THREADS", "2")],
        );
        assert!(st.status.success());
    }
    assert_eq!(
        read_bytes(&a.join("paths.json")),
        read_bytes(&b.join("paths.json")),
        "restarted plan not deterministic"
    );

    // best-of-3 is at least as good as the single run
    let single_dir = root.join("single");
    fs::create_dir_all(&single_dir).unwrap();
    let st = run(
        &["plan", "-c", cfg_s, "-o", single_dir.to_str().unwrap()],
        &[],
    );
    assert!(st.status.success());
    let obj = |p: &Path| -> f64 {
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(p.join("paths.json")).unwrap()).unwrap();
        v["objective"].as_f64().unwrap()
    };
    assert!(obj(&a) >= obj(&single_dir) - 1e-9);
    let _ = fs::remove_dir_all(&root);
}

#[test]
fn missing_kernel_variance_exits_2_naming_the_key() {
    let root = tmp_dir("missing_key");
    let cfg = write_config(
        &root,
        r#"{
  "environment": {"lower": [0.0], "upper": [1.0]},
  "kernel": {"lengthscales": [0.2]},
  "noise_variance": 0.01,
  "seed": 1
}"#,
    );
    let out = run(
        &[
            "gen-data",
            "-c",
            cfg.to_str().unwrap(),
            "-o",
            root.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("variance"),
        "diagnostic does not name the missing key: {stderr}"
    );
    let _ = fs::remove_dir_all(&root);
}

#[test]
fn unknown_config_key_exits_2() {
    let root = tmp_dir("unknown_key");
    let mut cfg_body: serde_json::Value = serde_json::from_str(&base_config()).unwrap();
    cfg_body["not_a_real_key"] = serde_json::json!(1);
    let cfg = write_config(&root, &cfg_body.to_string());
    let out = run(
        &[
            "gen-data",
            "-c",
            cfg.to_str().unwrap(),
            "-o",
            root.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_a_real_key"));
    let _ = fs::remove_dir_all(&root);
}

#[test]
fn oversized_grid_exits_3() {
    let root = tmp_dir("oversize");
    let mut cfg_body: serde_json::Value = serde_json::from_str(&base_config()).unwrap();
    cfg_body["field_resolution"] = serde_json::json!([101, 101]);
    let cfg = write_config(&root, &cfg_body.to_string());
    let out = run(
        &[
            "gen-data",
            "-c",
            cfg.to_str().unwrap(),
            "-o",
            root.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(3));
    let _ = fs::remove_dir_all(&root);
}

#[test]
fn infeasible_budget_exits_4() {
    let root = tmp_dir("infeasible");
    let mut cfg_body: serde_json::Value = serde_json::from_str(&base_config()).unwrap();
    cfg_body["robots"] = serde_json::json!(1);
    cfg_body["fixed_start"] = serde_json::json!([0.0, 0.0]);
    cfg_body["fixed_end"] = serde_json::json!([1.0, 1.0]);
    cfg_body["penalties"] = serde_json::json!({"distance_budget": 0.5});
    let cfg = write_config(&root, &cfg_body.to_string());
    let out = run(
        &[
            "plan",
            "-c",
            cfg.to_str().unwrap(),
            "-o",
            root.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(4));
    let _ = fs::remove_dir_all(&root);
}

#[test]
fn eval_out_of_bounds_waypoint_exits_4_naming_robot() {
    let root = tmp_dir("oob");
    let cfg = write_config(&root, &base_config());
    let dir = root.to_str().unwrap();
    assert!(
        run(&["gen-data", "-c", cfg.to_str().unwrap(), "-o", dir], &[])
            .status
            .success()
    );

    let paths = root.join("bad_paths.json");
    fs::write(
        &paths,
        r#"{"robots":[{"id":3,"waypoints":[[0.5,0.5],[2.5,0.5]],"length_m":2.0}],"objective":0.0,"seed":1,"warning":null}"#,
    )
    .unwrap();
    let field = root.join("field.csv");
    let out = run(
        &[
            "eval",
            "--paths",
            paths.to_str().unwrap(),
            "--field",
            field.to_str().unwrap(),
            "-o",
            dir,
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("robot 3") && stderr.contains("waypoint 1"),
        "{stderr}"
    );
    let _ = fs::remove_dir_all(&root);
}

#[test]
fn eval_missing_field_exits_2() {
    let root = tmp_dir("nofield");
    let paths = root.join("paths.json");
    fs::write(
        &paths,
        r#"{"robots":[{"id":0,"waypoints":[[0.5,0.5]],"length_m":0.0}],"objective":0.0,"seed":1,"warning":null}"#,
    )
    .unwrap();
    let out = run(
        &[
            "eval",
            "--paths",
            paths.to_str().unwrap(),
            "--field",
            root.join("does_not_exist.csv").to_str().unwrap(),
            "-o",
            root.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    let _ = fs::remove_dir_all(&root);
}

#[test]
fn plan_writes_r_robots_times_s_waypoints() {
    let root = tmp_dir("shape");
    let mut cfg_body: serde_json::Value = serde_json::from_str(&base_config()).unwrap();
    cfg_body["robots"] = serde_json::json!(2);
    cfg_body["waypoints"] = serde_json::json!(10);
    let cfg = write_config(&root, &cfg_body.to_string());
    let dir = root.to_str().unwrap();
    assert!(run(&["plan", "-c", cfg.to_str().unwrap(), "-o", dir], &[])
        .status
        .success());
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("paths.json")).unwrap()).unwrap();
    let robots = v["robots"].as_array().unwrap();
    assert_eq!(robots.len(), 2);
    for r in robots {
        assert_eq!(r["waypoints"].as_array().unwrap().len(), 10);
    }
    let _ = fs::remove_dir_all(&root);
}

#[test]
fn budget_config_reports_length_within_budget() {
    let root = tmp_dir("budget");
    let cfg = write_config(
        &root,
        r#"{
  "environment": {"lower": [0.0, 0.0], "upper": [50.0, 50.0]},
  "kernel": {"variance": 1.0, "lengthscales": [7.0, 7.0]},
  "noise_variance": 0.01,
  "seed": 3,
  "robots": 1,
  "waypoints": 10,
  "train_samples": 400,
  "penalties": {"distance_budget": 20.0, "weight": 500.0},
  "optimizer": {"max_iters": 1200}
}"#,
    );
    let dir = root.to_str().unwrap();
    let out = run(&["plan", "-c", cfg.to_str().unwrap(), "-o", dir], &[]);
    assert!(out.status.success());
    let line: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stdout).trim()).unwrap();
    let len = line["lengths"][0].as_f64().unwrap();
    assert!(len <= 20.2, "reported length {len} exceeds 20.2");
    let _ = fs::remove_dir_all(&root);
}

#[test]
fn full_grid_dummy_path_reconstructs_the_field() {
    let root = tmp_dir("fullgrid");
    let mut cfg_body: serde_json::Value = serde_json::from_str(&base_config()).unwrap();
    cfg_body["noise_variance"] = serde_json::json!(1e-8);
    cfg_body["field_resolution"] = serde_json::json!([10, 10]);
    let cfg = write_config(&root, &cfg_body.to_string());
    let dir = root.to_str().unwrap();
    assert!(
        run(&["gen-data", "-c", cfg.to_str().unwrap(), "-o", dir], &[])
            .status
            .success()
    );

    // dummy path visiting every grid point
    let mut waypoints = Vec::new();
    for i in 0..10 {
        for j in 0..10 {
            waypoints.push(vec![i as f64 / 9.0, j as f64 / 9.0]);
        }
    }
    let paths = serde_json::json!({
        "robots": [{"id": 0, "waypoints": waypoints, "length_m": 0.0}],
        "objective": 0.0,
        "seed": 1,
        "warning": null
    });
    let paths_file = root.join("grid_paths.json");
    fs::write(&paths_file, paths.to_string()).unwrap();

    let field = root.join("field.csv");
    let out = run(
        &[
            "eval",
            "--paths",
            paths_file.to_str().unwrap(),
            "--field",
            field.to_str().unwrap(),
            "-o",
            dir,
        ],
        &[],
    );
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("report.json")).unwrap()).unwrap();
    let rmse = report["rmse"].as_f64().unwrap();
    // sigma = 1, so the interpolation limit is 1e-3
    assert!(rmse < 1e-3, "full-grid reconstruction rmse {rmse}");
    let _ = fs::remove_dir_all(&root);
}

#[test]
fn continuous_sensing_step_is_honored() {
    let root = tmp_dir("step");
    let cfg = write_config(&root, &base_config());
    let dir = root.to_str().unwrap();
    assert!(
        run(&["gen-data", "-c", cfg.to_str().unwrap(), "-o", dir], &[])
            .status
            .success()
    );
    assert!(run(&["plan", "-c", cfg.to_str().unwrap(), "-o", dir], &[])
        .status
        .success());
    let field = root.join("field.csv");
    let paths = root.join("paths.json");
    let out = run(
        &[
            "eval",
            "--paths",
            paths.to_str().unwrap(),
            "--field",
            field.to_str().unwrap(),
            "--sensing",
            "continuous",
            "--step",
            "0.05",
            "-o",
            dir,
        ],
        &[],
    );
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("report.json")).unwrap()).unwrap();
    let total_len: f64 = report["per_robot_lengths"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .sum();
    let robots = report["per_robot_lengths"].as_array().unwrap().len() as i64;
    let expected = (total_len / 0.05).round() as i64 + robots;
    let got = report["observation_count"].as_i64().unwrap();
    assert!(
        (got - expected).abs() <= robots,
        "observation count {got} vs arc length / step {expected} (+- {robots})"
    );
    let _ = fs::remove_dir_all(&root);
}

/// Minimal XML well-formedness check: every open tag is closed in order.
fn xml_well_formed(text: &str) -> bool {
    let mut stack: Vec<String> = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find('<') {
        rest = &rest[start + 1..];
        let Some(end) = rest.find('>') else {
            return false;
        };
        let tag = &rest[..end];
        rest = &rest[end + 1..];
        if tag.starts_with('!') || tag.starts_with('?') {
            continue;
        }
        if let Some(name) = tag.strip_prefix('/') {
            match stack.pop() {
                Some(open) if open == name.trim() => {}
                _ => return false,
            }
        } else if !tag.ends_with('/') {
            let name: String = tag
                .split_whitespace()
                .next()
                .unwrap_or("")
                .chars()
                .take_while(|c| c.is_alphanumeric())
                .collect();
            stack.push(name);
        }
    }
    stack.is_empty()
}

#[test]
fn plot_is_well_formed_svg_with_one_polyline_per_robot() {
    let root = tmp_dir("plot");
    let cfg = write_config(&root, &base_config());
    let dir = root.to_str().unwrap();
    assert!(
        run(&["gen-data", "-c", cfg.to_str().unwrap(), "-o", dir], &[])
            .status
            .success()
    );
    assert!(run(&["plan", "-c", cfg.to_str().unwrap(), "-o", dir], &[])
        .status
        .success());
    let field = root.join("field.csv");
    let paths = root.join("paths.json");
    assert!(run(
        &[
            "plot",
            "--paths",
            paths.to_str().unwrap(),
            "--field",
            field.to_str().unwrap(),
            "-o",
            dir
        ],
        &[],
    )
    .status
    .success());
    let svg = fs::read_to_string(root.join("plot.svg")).unwrap();
    assert!(xml_well_formed(&svg), "plot.svg is not well-formed XML");
    let polylines = svg.matches("<path ").count();
    assert_eq!(polylines, 2, "expected one polyline per robot");
    // heatmap layer present when a field is given
    assert!(svg.contains("<rect "));
    let _ = fs::remove_dir_all(&root);
}

#[test]
fn plot_encodes_time_as_marker_color_ramp() {
    let root = tmp_dir("ramp");
    // hand-written spatio-temporal paths; ramp endpoints are min/max time
    let paths = root.join("paths.json");
    fs::write(
        &paths,
        r#"{"robots":[{"id":0,"waypoints":[[0.1,0.1,0.0],[0.5,0.5,10.0],[0.9,0.9,20.0]],"length_m":2.26}],"objective":0.0,"seed":1,"warning":null}"#,
    )
    .unwrap();
    let dir = root.to_str().unwrap();
    assert!(run(
        &["plot", "--paths", paths.to_str().unwrap(), "-o", dir],
        &[]
    )
    .status
    .success());
    let svg = fs::read_to_string(root.join("plot.svg")).unwrap();
    // ramp(0) and ramp(1) fills for the min- and max-time markers
    assert!(svg.contains("#0040ff"), "min-time ramp endpoint missing");
    assert!(svg.contains("#ff4000"), "max-time ramp endpoint missing");
    let _ = fs::remove_dir_all(&root);
}

#[test]
fn help_lists_config_keys_with_units() {
    for sub in ["gen-data", "plan", "eval"] {
        let out = run(&[sub, "--help"], &[]);
        assert!(out.status.success());
        let text = String::from_utf8_lossy(&out.stdout);
        for key in [
            "environment.lower",
            "kernel.variance",
            "noise_variance",
            "penalties.distance_budget",
            "optimizer.learning_rate",
            "train_samples",
            "field_resolution",
        ] {
            assert!(text.contains(key), "{sub} --help missing key {key}");
        }
        assert!(
            text.contains("[m]") && text.contains("[min]"),
            "{sub} --help missing units"
        );
    }
}
