use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn hodges(args: &[&str], config: Option<&str>, dir: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hodges"));
    cmd.args(args).arg("--out").arg(dir.join("out"));
    if let Some(text) = config {
        let path = dir.join("run.toml");
        fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Table {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(path)
            .unwrap();
        let header = r.headers().unwrap().iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.unwrap().iter().map(String::from).collect())
            .collect();
        Table { header, rows }
    }

    fn col(&self, name: &str) -> usize {
        self.header
            .iter()
            .position(|h| h == name)
            .unwrap_or_else(|| panic!("no column {name}"))
    }

    fn floats(&self, name: &str, estimator: &str) -> Vec<f64> {
        let (c, e) = (self.col(name), self.col("estimator_id"));
        self.rows
            .iter()
            .filter(|r| r[e] == estimator)
            .map(|r| r[c].parse().unwrap())
            .collect()
    }
}

const SMALL_FIG1: &str = "reps = 400\n[grid]\nstart = -1.0\nstop = 1.0\nstep = 0.25\n";

#[test]
fn fig1_writes_four_csv_files_with_the_risk_schema() {
    let dir = TempDir::new().unwrap();
    let out = hodges(&["fig1", "--seed", "11"], Some(SMALL_FIG1), dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out_dir = dir.path().join("out");
    let mut names: Vec<String> = fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "fig1_combined.csv",
            "fig1_n5.csv",
            "fig1_n50.csv",
            "fig1_n500.csv"
        ]
    );
    let expected = [
        "estimator_id",
        "loss_id",
        "n",
        "theta_1",
        "risk",
        "std_error",
        "reps",
        "seed",
    ];
    let t = Table::read(&out_dir.join("fig1_n50.csv"));
    assert_eq!(t.header, expected);
    assert_eq!(t.rows.len(), 9);
    assert!(t
        .rows
        .iter()
        .all(|r| r[2] == "50" && r[6] == "400" && r[7] == "11"));
    let combined = Table::read(&out_dir.join("fig1_combined.csv"));
    assert_eq!(combined.rows.len(), 6 * 9);
    assert_eq!(
        combined
            .floats("risk", "closed_form_classical_hodges")
            .len(),
        3 * 9
    );

    // The preamble carries the resolved configuration, seed included.
    let text = fs::read_to_string(out_dir.join("fig1_n5.csv")).unwrap();
    let preamble: String = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .map(|l| format!("{}\n", &l[2.min(l.len())..]))
        .collect();
    assert!(
        preamble.contains("seed = 11")
            && preamble.contains("reps = 400")
            && preamble.contains("step = 0.25")
    );
}

#[test]
fn reruns_are_byte_identical_for_any_worker_count() {
    let dir = TempDir::new().unwrap();
    let read_all = |dir: &Path| {
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir.join("out"))
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().into_string().unwrap(),
                    fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        files.sort();
        files
    };
    assert_eq!(
        code(&hodges(
            &["fig1", "--workers", "1"],
            Some(SMALL_FIG1),
            dir.path()
        )),
        0
    );
    let first = read_all(dir.path());
    assert_eq!(
        code(&hodges(
            &["fig1", "--workers", "3"],
            Some(SMALL_FIG1),
            dir.path()
        )),
        0
    );
    assert_eq!(first, read_all(dir.path()));
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let dir = TempDir::new().unwrap();
    let out = hodges(&["fig1"], Some("[grid]\nstep = 0.0\n"), dir.path());
    assert_eq!(code(&out), 2);
    assert!(
        stderr(&out).contains("grid step must be positive"),
        "{}",
        stderr(&out)
    );
    assert_eq!(
        code(&hodges(&["fig1"], Some("[bounds]\nk = 1.0\n"), dir.path())),
        2
    );
    assert_eq!(code(&hodges(&["fig1"], Some("reps = [1\n"), dir.path())), 2);
    assert_eq!(
        code(&hodges(&["fig1", "--workers", "0"], None, dir.path())),
        2
    );
}

#[test]
fn verify_bounds_reports_no_violations() {
    let dir = TempDir::new().unwrap();
    let cfg = "[bounds]\npoints = 5\nrealizations_per_point = 20000\n";
    let out = hodges(&["verify-bounds"], Some(cfg), dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for theorem in ["classical", "oracle"] {
        let path = dir
            .path()
            .join("out")
            .join(format!("bounds_{theorem}.json"));
        let json: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        for key in [
            "theorem",
            "region",
            "n",
            "k",
            "points_checked",
            "realizations_per_point",
            "violations",
            "bound_values",
        ] {
            assert!(json.get(key).is_some(), "{theorem}: missing {key}");
        }
        assert_eq!(json["theorem"], theorem);
        assert_eq!(json["violations"].as_array().unwrap().len(), 0);
        assert_eq!(json["n"], 500);
        assert_eq!(json["points_checked"], 5);
        assert!(json["bound_values"]
            .as_array()
            .unwrap()
            .iter()
            .all(|v| v.as_f64().unwrap() >= 1.0));
        // r_n a_n = n^{1/4} > 2k from n = 17 on.
        assert_eq!(json["min_sample_size"], 17);
        assert_eq!(json["config"]["bounds"]["realizations_per_point"], 20000);
        assert_eq!(json["passed"], true);
    }
}

#[test]
fn verify_bounds_rejects_an_empty_region() {
    let dir = TempDir::new().unwrap();
    // n^{1/4} = 4.73 at n = 500, below 2k = 6.
    let out = hodges(&["verify-bounds"], Some("[bounds]\nk = 3.0\n"), dir.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("schedule error"), "{}", stderr(&out));
    assert!(stderr(&out).contains("n ≥ 1297"), "{}", stderr(&out));
}

#[test]
fn oracle_check_on_the_normal_mean() {
    let dir = TempDir::new().unwrap();
    let out = hodges(&["oracle-check"], None, dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let json: Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("out/oracle_check.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(json["passed"], true);
    let sel = json["selection"].as_array().unwrap();
    assert_eq!(sel.len(), 4);
    assert!(sel[3]["per_coordinate"][1]["p"].as_f64().unwrap() >= 0.95);
    let cov = &json["scaled_cov"];
    assert!((cov["oracle_cov"][0][0].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert!((cov["base_cov"][0][0].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    let t = Table::read(&dir.path().join("out/oracle_check.csv"));
    assert_eq!(
        t.header,
        [
            "n",
            "coordinate",
            "theta",
            "center",
            "threshold",
            "selected",
            "std_error",
            "expected"
        ]
    );
    assert_eq!(t.rows.len(), 8);
}

#[test]
fn oracle_check_on_the_linear_model() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"
reps = 2000
theta = [3.0, 1.5, 0.0, 0.0]
center = [0.0, 0.0, 0.0, 0.0]
[dgp]
model = "linear_model"
sigma2 = 1.0
design = { kind = "orthonormal", seed = 3 }
[schedule]
rate = { scale = 1.0, growth = 0.5 }
thresholds = [
  { scale = 1.0, decay = 0.25 }, { scale = 1.0, decay = 0.25 },
  { scale = 1.0, decay = 0.25 }, { scale = 1.0, decay = 0.25 },
]
"#;
    let out = hodges(&["oracle-check"], Some(cfg), dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let json: Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("out/oracle_check.json")).unwrap(),
    )
    .unwrap();
    let last = &json["selection"][3];
    assert_eq!(last["n"], 6400);
    for j in [2, 3] {
        assert!(last["per_coordinate"][j]["p"].as_f64().unwrap() >= 0.95);
    }
    assert!(json["scaled_cov"].is_null());
}

#[test]
fn oracle_check_runs_on_the_uniform_box() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"
reps = 2000
theta = [1.0, 2.0]
center = [1.0, 0.5]
[dgp]
model = "uniform_box"
[schedule]
rate = { scale = 1.0, growth = 1.0 }
thresholds = [{ scale = 1.0, decay = 0.5 }, { scale = 1.0, decay = 0.5 }]
"#;
    let out = hodges(&["oracle-check"], Some(cfg), dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("not Gaussian"), "{stdout}");
}

#[test]
fn failed_oracle_checks_exit_with_code_one() {
    let dir = TempDir::new().unwrap();
    // θ₁ = 0.3 sits inside the threshold at n = 100, so it is often dropped.
    let cfg =
        "reps = 2000\nn_values = [100, 400]\ntheta = [0.3, 0.0]\n[oracle]\nmin_selection = 1.0\n";
    let out = hodges(&["oracle-check"], Some(cfg), dir.path());
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
    let json: Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("out/oracle_check.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(json["passed"], false);
}

#[test]
fn unpenalized_soft_thresholding_matches_least_squares() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"
reps = 300
[grid]
start = -0.5
stop = 0.5
step = 0.25
axis = 2
base = [3.0, 1.5, 0.0, 0.0]
[[estimators]]
kind = "base"
[[estimators]]
kind = "threshold"
penalty = { kind = "soft", lambda = 0.0 }
"#;
    let out = hodges(&["baseline-compare"], Some(cfg), dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let t = Table::read(&dir.path().join("out/baseline_compare.csv"));
    let base = t.floats("risk", "base");
    let soft = t.floats("risk", "soft_lambda0");
    assert_eq!(base.len(), 5);
    for (b, s) in base.iter().zip(&soft) {
        assert!((b - s).abs() <= 1e-9 * b, "{b} vs {s}");
    }
}

#[test]
fn baseline_compare_shares_draws_across_estimators() {
    let dir = TempDir::new().unwrap();
    // Every coordinate far from c: both Hodges estimators keep the full model.
    let cfg = "reps = 500\n[grid]\nstart = 1.0\nstop = 2.0\nstep = 0.5\naxis = 2\nbase = [3.0, 1.5, 0.0, 1.0]\n";
    let out = hodges(&["baseline-compare"], Some(cfg), dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let t = Table::read(&dir.path().join("out/baseline_compare.csv"));
    let ids: Vec<&str> = {
        let e = t.col("estimator_id");
        let mut v: Vec<&str> = t.rows.iter().map(|r| r[e].as_str()).collect();
        v.dedup();
        v
    };
    assert_eq!(ids.len(), 6);
    assert!(
        ids[3].starts_with("hard_lambda")
            && ids[4].starts_with("soft_lambda")
            && ids[5].starts_with("scad_lambda")
    );
    let base = t.floats("risk", "base");
    let se = t.floats("std_error", "base");
    let oracle = t.floats("risk", "oracle_hodges");
    for i in 0..base.len() {
        assert!(
            (oracle[i] - base[i]).abs() <= 3.0 * se[i],
            "{} vs {}",
            oracle[i],
            base[i]
        );
    }
    // Common draws: the classical estimator never collapses here, so its
    // curve is the base curve exactly.
    assert_eq!(t.floats("risk", "classical_hodges"), base);
}

#[test]
fn risk_sweep_writes_one_curve_per_estimator_and_loss() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"
reps = 200
n_values = [50, 200]
[[losses]]
family = "scaled_mse"
[[losses]]
family = "indicator"
z = 1.0
[grid]
start = 0.0
stop = 0.5
step = 0.25
base = [0.0, 0.0]
"#;
    let out = hodges(&["risk-sweep"], Some(cfg), dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let t = Table::read(&dir.path().join("out/risk_sweep.csv"));
    assert!(t.header.contains(&"theta_2".to_string()));
    assert_eq!(t.rows.len(), 2 * 3 * 2 * 3);
    let base = t.floats("risk", "base");
    assert_eq!(base.len(), 2 * 2 * 3);
}

#[test]
fn simulate_writes_data_and_the_base_estimate() {
    let dir = TempDir::new().unwrap();
    let out = hodges(
        &["simulate", "--seed", "4"],
        Some("n = 250\ntheta = [1.0, -2.0]\n"),
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let t = Table::read(&dir.path().join("out/simulate.csv"));
    assert_eq!(t.header, ["y1", "y2"]);
    assert_eq!(t.rows.len(), 250);
    let json: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/simulate.json")).unwrap())
            .unwrap();
    for j in 0..2 {
        let mean = t
            .rows
            .iter()
            .map(|r| r[j].parse::<f64>().unwrap())
            .sum::<f64>()
            / 250.0;
        assert!((json["theta_hat"][j].as_f64().unwrap() - mean).abs() < 1e-12);
    }
    assert_eq!(json["config"]["seed"], 4);
}
