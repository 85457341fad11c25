use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tangency::config::ExperimentConfig;

fn small() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.run.orbit.steps = 500;
    c.run.recurrence.n_sequences = 16;
    c.run.recurrence.horizon = 5000;
    c.run.recurrence.burn_in = 100;
    c.run.measures.resolutions = vec![24, 48];
    c.run.measures.samples_per_cell = 16;
    c.run.basin.resolution = 24;
    c.run.basin.samples_per_cell = 16;
    c.run.basin.n_sequences = 200;
    c.run.basin.horizon = 2000;
    c.run.geometry.n_samples = 300;
    c.run.geometry.disk_resolution = 11;
    c.run.ball.points.truncate(1);
    c.run.ball.epsilons = vec![0.01];
    c.run.ball.n_sequences = 20_000;
    c
}

fn write_config(dir: &Path, c: &ExperimentConfig) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, c.to_toml()).unwrap();
    p
}

fn tangency(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tangency"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn validate_accepts_shipped_config() {
    let tmp = tempfile::tempdir().unwrap();
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    let o = tangency(&shipped, tmp.path(), &["validate"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(&tmp.path().join("validate.json"));
    assert_eq!(v["result"]["passed"], true);
    assert_eq!(v["provenance"]["config_hash"], ExperimentConfig::default().hash());
}

#[test]
fn validate_names_equal_contraction_rates() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small();
    c.model.lambda1 = c.model.lambda2;
    let o = tangency(&write_config(tmp.path(), &c), tmp.path(), &["validate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("FAIL least_contracting"), "{}", stderr(&o));
}

#[test]
fn validate_names_overlapping_u_and_q() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small();
    c.model.regions.u_box.hi = [1.6, 1.0, 1.0];
    let o = tangency(&write_config(tmp.path(), &c), tmp.path(), &["validate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("FAIL u_q_disjoint"), "{}", stderr(&o));
}

#[test]
fn every_command_refuses_an_invalid_model() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small();
    c.model.sigma = 0.5;
    let cfg = write_config(tmp.path(), &c);
    for cmd in ["orbit", "measures", "ball"] {
        let o = tangency(&cfg, tmp.path(), &[cmd]);
        assert_eq!(o.status.code(), Some(2), "{cmd}");
        assert!(stderr(&o).contains("expanding"));
    }
}

#[test]
fn config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bad.toml");
    fs::write(&p, "[run.orbit]\nsteps = 10\nstride = 2\n").unwrap();
    let o = tangency(&p, tmp.path(), &["orbit"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown field"), "{}", stderr(&o));
    let o = tangency(&tmp.path().join("missing.toml"), tmp.path(), &["orbit"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn orbit_csv_has_documented_columns_and_provenance() {
    let tmp = tempfile::tempdir().unwrap();
    let c = small();
    let o = tangency(&write_config(tmp.path(), &c), tmp.path(), &["orbit", "--seed", "9"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(tmp.path().join("orbit.csv")).unwrap();
    let mut seeded = c.clone();
    seeded.noise.seed = 9;
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[1], format!("# config_hash={}", seeded.hash()));
    assert_eq!(lines[2], "# seed=9");
    assert_eq!(lines[3], "step,z,x1,x2,label,t_used");
    assert!(lines[4].starts_with("0,") && lines[4].ends_with(",InQ,"), "{}", lines[4]);
    assert_eq!(lines.len(), 4 + 501);
    let last_t: f64 = lines.last().unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!((0.045..=0.065).contains(&last_t));
}

#[test]
fn returns_from_the_saddle_are_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small();
    c.run.start = [0.0, 0.0, 0.0];
    let o = tangency(&write_config(tmp.path(), &c), tmp.path(), &["returns"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = json(&tmp.path().join("returns.json"));
    assert_eq!(r["result"]["times"], serde_json::json!([]));
    assert_eq!(r["result"]["truncated"], true);
}

#[test]
fn shipped_start_is_recurrent() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tangency(&write_config(tmp.path(), &small()), tmp.path(), &["recurrence"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = &json(&tmp.path().join("recurrence.json"))["result"];
    assert!(r["fraction_recurrent"].as_f64().unwrap() > 0.0);
    assert!(r["max_return_gap"].as_u64().is_some());
}

#[test]
fn measures_count_is_resolution_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tangency(&write_config(tmp.path(), &small()), tmp.path(), &["measures"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = &json(&tmp.path().join("measures.json"))["result"];
    assert_eq!(r["count_l_stable"], true);
    assert_eq!(r["levels"][0]["count_l"], 1);
    assert!(tmp.path().join("components_48.csv").exists());
}

#[test]
fn operator_dump_is_opt_in() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small();
    c.run.measures.resolutions = vec![12];
    c.run.measures.samples_per_cell = 4;
    c.run.measures.write_operator = true;
    let o = tangency(&write_config(tmp.path(), &c), tmp.path(), &["measures"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(tmp.path().join("operator_12.coo")).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("# config_hash="));
    assert!(text.contains("# row col prob"));
}

#[test]
fn basin_weights_sum_to_one() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tangency(&write_config(tmp.path(), &small()), tmp.path(), &["basin"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = &json(&tmp.path().join("basin.json"))["result"];
    let alpha: f64 = r["alpha"].as_array().unwrap().iter().map(|a| a.as_f64().unwrap()).sum();
    let total = alpha + r["unassigned"].as_f64().unwrap();
    assert!((total - 1.0).abs() < 1e-12, "{total}");
    assert!(r["unassigned"].as_f64().unwrap() <= 0.05);
}

#[test]
fn geometry_passes_with_shipped_cones() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tangency(&write_config(tmp.path(), &small()), tmp.path(), &["geometry"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = &json(&tmp.path().join("geometry.json"))["result"];
    assert_eq!(r["cones"]["pass_fraction_all"], 1.0);
    assert_eq!(r["disk_pass"], true);
}

#[test]
fn ball_reports_runtime_failure_for_irregular_point() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small();
    c.run.ball.points = vec![[0.0, 0.0, 0.0]];
    let o = tangency(&write_config(tmp.path(), &c), tmp.path(), &["ball"]);
    assert_eq!(o.status.code(), Some(3));
    let r = &json(&tmp.path().join("ball.json"))["result"];
    assert!(r[0]["runs"][0]["Err"].as_str().is_some());
}

#[test]
fn ball_measures_positive_radius() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tangency(&write_config(tmp.path(), &small()), tmp.path(), &["ball"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = &json(&tmp.path().join("ball.json"))["result"][0]["runs"][0]["Ok"];
    assert_eq!(r["return_iterates"], serde_json::json!([6, 11, 16]));
    assert!(r["submersion"]["margin_digits"].as_f64().unwrap() >= 3.0);
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "config.toml")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn outputs_are_byte_identical_across_reruns_and_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small();
    c.run.measures.resolutions = vec![12, 24];
    c.run.basin.resolution = 12;
    let cfg = write_config(tmp.path(), &c);
    for cmd in ["validate", "orbit", "returns", "recurrence", "measures", "basin", "geometry", "ball"] {
        let runs: Vec<_> = [("a", "1"), ("b", "8"), ("c", "8")]
            .iter()
            .map(|(name, threads)| {
                let out = tmp.path().join(cmd).join(name);
                let o = tangency(&cfg, &out, &[cmd, "--threads", threads]);
                assert!(o.status.success(), "{cmd}: {}", stderr(&o));
                snapshot(&out)
            })
            .collect();
        assert!(!runs[0].is_empty(), "{cmd}");
        assert_eq!(runs[0], runs[1], "{cmd}: --threads 1 vs 8");
        assert_eq!(runs[1], runs[2], "{cmd}: rerun");
    }
}
