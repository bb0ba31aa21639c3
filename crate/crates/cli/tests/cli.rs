use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn maxnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maxnet"))
        .args(args)
        .current_dir(dir)
        .env("MAXNET_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn construct_depth3_prints_stats_and_writes_manifest() {
    let dir = TempDir::new().unwrap();
    let o = maxnet(dir.path(), &["construct", "depth3", "--d", "4", "--alpha", "1e4"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("depth=3 width=20"), "{}", stdout(&o));
    let net = dir.path().join("depth3_d4.json");
    assert!(net.exists());
    let m = read_json(&dir.path().join("depth3_d4.json.manifest.json"));
    assert_eq!(m["command"], "construct");
    assert_eq!(m["outputs"][0], "depth3_d4.json");
    assert_eq!(m["params"]["alpha"], 1e4);
    assert!(m["timestamp"].is_string());
}

#[test]
fn construct_deep_and_tree_shapes() {
    let dir = TempDir::new().unwrap();
    let o = maxnet(
        dir.path(),
        &["construct", "deep", "--d", "256", "--k", "2", "--alpha", "1e6", "--out", "deep.json"],
    );
    assert_eq!(o.status.code(), Some(0));
    let line = stdout(&o);
    let width: usize = line
        .split_whitespace()
        .find_map(|t| t.strip_prefix("width="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(line.starts_with("depth=5 "));
    assert!(width <= 20480);

    let o = maxnet(dir.path(), &["construct", "exact-tree", "--d", "7", "--out", "t.json"]);
    assert!(stdout(&o).starts_with("depth=4 "));
}

#[test]
fn construct_requires_a_weight_scale() {
    let dir = TempDir::new().unwrap();
    let o = maxnet(dir.path(), &["construct", "depth3", "--d", "4"]);
    assert_eq!(o.status.code(), Some(64));
    let o = maxnet(dir.path(), &["construct", "depth3", "--d", "1", "--alpha", "10"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn error_rows_append_with_one_header() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    maxnet(p, &["construct", "exact-tree", "--d", "5", "--out", "t.json"]);
    for seed in ["1", "2"] {
        let o = maxnet(p, &["error", "t.json", "--n", "20000", "--seed", seed, "--out", "e.csv"]);
        assert_eq!(o.status.code(), Some(0));
    }
    let csv = fs::read_to_string(p.join("e.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("d,depth,width,alpha,dist,n,mse"));
    for l in &lines[1..] {
        // the dist label is quoted and holds a comma, so count from the end
        let mse: f64 = l.rsplit(',').nth(3).unwrap().parse().unwrap();
        assert!(mse < 1e-28, "{l}");
    }
}

#[test]
fn error_meets_target_accuracy() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    maxnet(p, &["construct", "depth3", "--d", "4", "--epsilon", "1e-3", "--out", "n.json"]);
    let o = maxnet(p, &["error", "n.json", "--n", "1000000", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let row = out.lines().nth(1).unwrap();
    let mse: f64 = row.rsplit(',').nth(3).unwrap().parse().unwrap();
    assert!(mse <= 1e-3);
}

#[test]
fn input_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    maxnet(p, &["construct", "exact-tree", "--d", "3", "--out", "t.json"]);
    let o = maxnet(p, &["error", "t.json", "--d", "4", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
    fs::write(p.join("bad.json"), "{\"input_dim\": 2,").unwrap();
    let o = maxnet(p, &["error", "bad.json", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = maxnet(p, &["error", "missing.json", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = maxnet(p, &["error", "t.json", "--R=-1", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_64() {
    let dir = TempDir::new().unwrap();
    let o = maxnet(dir.path(), &["spectral", "--grid", "0:1:0.5"]);
    assert_eq!(o.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = maxnet(dir.path(), &["spectral", "--d", "2", "--grid", "0:1"]);
    assert_eq!(o.status.code(), Some(64));
    let o = maxnet(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(64));
    let o = maxnet(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

const FIGURE_NET: &str = r#"{
  "input_dim": 4,
  "activation": "relu",
  "layers": [
    {"weights": [[0, 0, 1, -1], [0, -1, 0, 1], [0, 1, 0, -1]], "biases": [0, 0, 0], "apply_activation": true},
    {"weights": [[1, 1, 1]], "biases": [0], "apply_activation": false}
  ],
  "metadata": "figure"
}"#;

#[test]
fn analyze_weight_graph_of_figure_example() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    fs::write(p.join("fig.json"), FIGURE_NET).unwrap();
    let o = maxnet(p, &["analyze", "fig.json", "weight-graph", "--out", "g.json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&p.join("g.json"));
    let removed: Vec<Value> = r["removed"].as_array().unwrap().iter().map(|e| e["edge"].clone()).collect();
    assert_eq!(removed, vec![serde_json::json!([2, 4]), serde_json::json!([3, 4])]);
    assert_eq!(r["edge_count"], 4);
    assert!(p.join("g.json.manifest.json").exists());
}

#[test]
fn analyze_depth3_weight_graph_runs() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    maxnet(p, &["construct", "depth3", "--d", "4", "--alpha", "100", "--out", "n.json"]);
    let o = maxnet(p, &["analyze", "n.json", "weight-graph"]);
    assert_eq!(o.status.code(), Some(0));
    let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(r.get("triangle").is_some());
}

#[test]
fn analyze_kernel_floor() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    let one = r#"{"input_dim": 3, "activation": "relu", "layers": [
        {"weights": [[1, 2, -1]], "biases": [0.1], "apply_activation": true},
        {"weights": [[1]], "biases": [0], "apply_activation": false}], "metadata": ""}"#;
    fs::write(p.join("one.json"), one).unwrap();
    let o = maxnet(p, &["analyze", "one.json", "kernel-floor", "--n", "100000", "--seed", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let floor = r["floor"].as_f64().unwrap();
    let expected = 1.0 / (120.0 * 3f64.powf(4.5));
    assert!((floor - expected).abs() <= 1e-15 * expected);
    assert_eq!(r["constant_along_kernel"], true);
    assert_eq!(r["floor_holds"], true);

    maxnet(p, &["construct", "depth3", "--d", "4", "--alpha", "100", "--out", "n.json"]);
    let o = maxnet(p, &["analyze", "n.json", "kernel-floor", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn spectral_grid_rows_and_bound() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    let o = maxnet(p, &["spectral", "--d", "2", "--grid", "0:20:0.5", "--out", "s.csv"]);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(p.join("s.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1681);
    let bound = 2.0 * std::f64::consts::PI.sqrt();
    for r in rows {
        let abs: f64 = r.split(',').nth(4).unwrap().parse().unwrap();
        assert!(abs <= bound * (1.0 + 1e-12));
    }
}

#[test]
fn sweep_row_count_and_determinism() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    let args = |out: &'static str| {
        [
            "sweep", "--depth", "2", "--d", "8", "--widths", "2,4,8,16", "--steps", "300",
            "--restarts", "2", "--seed", "9", "--out", out,
        ]
    };
    assert_eq!(maxnet(p, &args("a.csv")).status.code(), Some(0));
    assert_eq!(maxnet(p, &args("b.csv")).status.code(), Some(0));
    let a = fs::read_to_string(p.join("a.csv")).unwrap();
    assert_eq!(a.lines().count(), 5);
    assert_eq!(a, fs::read_to_string(p.join("b.csv")).unwrap());
    let mut ma = read_json(&p.join("a.csv.manifest.json"));
    let mut mb = read_json(&p.join("b.csv.manifest.json"));
    for m in [&mut ma, &mut mb] {
        let obj = m.as_object_mut().unwrap();
        obj.remove("timestamp");
        obj.remove("outputs");
        obj["params"].as_object_mut().unwrap().remove("out");
    }
    assert_eq!(ma, mb);
}

#[test]
fn error_csv_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    maxnet(p, &["construct", "depth3", "--d", "3", "--alpha", "50", "--out", "n.json"]);
    let run = |dist: &str| {
        stdout(&maxnet(p, &["error", "n.json", "--dist", dist, "--n", "50000", "--seed", "11"]))
    };
    for dist in ["uniform", "gauss", "noise"] {
        let first = run(dist);
        assert_eq!(first.lines().count(), 2);
        assert_eq!(first, run(dist));
    }
}

#[test]
fn bad_thread_count_is_rejected() {
    let dir = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_maxnet"))
        .args(["spectral", "--d", "1", "--grid", "0:1:0.5"])
        .current_dir(dir.path())
        .env("MAXNET_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
