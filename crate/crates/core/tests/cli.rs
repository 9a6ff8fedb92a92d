mod common;

use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use pategen::data::write_csv;

fn pategen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pategen"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn scalar(out: &str, key: &str) -> f64 {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no `{key}` in\n{out}"))
        .parse()
        .unwrap()
}

#[test]
fn derive_params_examples() {
    for (pate, b3, a1, a0, b2) in [
        ("-0.3", "-1", "4", -3.76, 0.14),
        ("-0.3", "0", "0", -1.39, -0.3),
        ("-0.3", "-0.6", "8", -6.62, -0.05),
    ] {
        let o = pategen(&["derive-params", "--pate", pate, "--beta3", b3, "--alpha1", a1, "--target-p", "0.2"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let out = stdout(&o);
        assert!((scalar(&out, "alpha0") - a0).abs() < 0.01, "{out}");
        assert!((scalar(&out, "beta2") - b2).abs() < 0.0051, "{out}");
        assert!(out.contains("E(X|S=0)") && out.contains("delta_p"));
    }
}

#[test]
fn estimate_on_generated_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("fixture.csv");
    write_csv(&data, &common::reference_sample(3000, 12)).unwrap();
    let stem = dir.path().join("out/est");
    let o = pategen(&[
        "estimate", "--data", path(&data), "--estimators", "IPW", "--variance", "MEST,WSB",
        "--bootstrap-reps", "100", "--seed", "9", "--out", path(&stem),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(stem.with_extension("csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3, "{csv}");
    assert!(rows[1].starts_with("IPW,MEST,") && rows[2].starts_with("IPW,WSB,"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json")).unwrap()).unwrap();
    let report = &json["reports"][0];
    let point = report["point"].as_f64().unwrap();
    // truth -0.3; three MC SDs of slack
    assert!((point + 0.3).abs() < 0.45, "{point}");
    for e in report["entries"].as_array().unwrap() {
        let (lo, hi, se) = (e["ci_low"].as_f64().unwrap(), e["ci_high"].as_f64().unwrap(), e["se"].as_f64().unwrap());
        assert!(lo < point && point < hi && se > 0.05 && se < 0.3, "{e}");
    }
    assert!(json["metadata"]["delta_p"].as_f64().unwrap() > 0.0);
    assert!(json["weights"]["effective_n"].as_f64().unwrap() > 0.0);
    assert_eq!(json["request"]["seed"], 9);
}

#[test]
fn estimate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let no_control = dir.path().join("no_control.csv");
    std::fs::write(&no_control, "s,t,y,x\n1,1,2.0,0.1\n1,1,3.0,0.5\n0,,,0.3\n0,,,0.7\n").unwrap();
    let o = pategen(&["estimate", "--data", path(&no_control), "--out", path(&dir.path().join("a"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("empty control arm"), "{}", stderr(&o));

    let missing = dir.path().join("nope.csv");
    let o = pategen(&["estimate", "--data", path(&missing), "--out", path(&dir.path().join("b"))]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));

    // trial and population perfectly separated by x
    let separated = dir.path().join("sep.csv");
    std::fs::write(
        &separated,
        "s,t,y,x\n1,1,1,0.6\n1,0,2,0.7\n1,1,1,0.8\n1,0,2,0.9\n0,,,0.1\n0,,,0.2\n0,,,0.3\n",
    )
    .unwrap();
    let o = pategen(&["estimate", "--data", path(&separated), "--out", path(&dir.path().join("c"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    let ok = dir.path().join("ok.csv");
    write_csv(&ok, &common::reference_sample(600, 1)).unwrap();
    let o = pategen(&["estimate", "--data", path(&ok), "--variance", "RB", "--out", path(&dir.path().join("d"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
    let o = pategen(&["estimate", "--data", path(&ok), "--estimators", "OLS", "--variance", "MEST", "--out", path(&dir.path().join("e"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

const SMOKE: &str = r#"
[run]
reps = 2
seed = 4
bootstrap_reps = 10
variance = ["MEST", "SURVEY_LIN", "LINCOMB", "WSB", "RB"]

[defaults]
alpha1 = 4.0
target_p = 0.2
true_pate = -0.3
beta3 = -0.6
"#;

#[test]
fn simulate_smoke_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("smoke.toml");
    std::fs::write(&scenario, SMOKE).unwrap();
    let stem = dir.path().join("sim");
    let start = Instant::now();
    let o = pategen(&["simulate", "--scenario", path(&scenario), "--out", path(&stem)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(start.elapsed().as_secs_f64() < 10.0);
    let csv = std::fs::read_to_string(stem.with_extension("csv")).unwrap();
    // 8 estimators: 2 IPW-type x 4 methods + 6 model-based x 3 methods
    assert_eq!(csv.lines().count(), 1 + 8 + 18, "{csv}");
    let figure = std::fs::read_to_string(dir.path().join("sim_figure.csv")).unwrap();
    assert!(figure.starts_with("scenario,alpha1,beta3,n_total,sampling_fraction,estimator,method,metric,value"));
    assert!(figure.contains(",IPW,MEST,se_gap,"));

    let json_path = stem.with_extension("json");
    let first: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    let replay = dir.path().join("replay");
    let o = pategen(&["simulate", "--scenario", path(&json_path), "--out", path(&replay)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let second: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(replay.with_extension("json")).unwrap()).unwrap();
    assert_eq!(first["results"], second["results"]);
    assert_eq!(
        std::fs::read_to_string(stem.with_extension("csv")).unwrap(),
        std::fs::read_to_string(replay.with_extension("csv")).unwrap()
    );
}

#[test]
fn simulate_requires_seed() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.toml");
    std::fs::write(&scenario, SMOKE.replace("seed = 4\n", "")).unwrap();
    let o = pategen(&["simulate", "--scenario", path(&scenario), "--out", path(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"));
}

const SWEEP: &str = r#"
[run]
reps = 3
seed = 8
variance = ["MEST", "SURVEY_LIN", "LINCOMB"]

[defaults]
true_pate = -0.3
beta3 = -1.0
alpha1 = 4.0
alpha0 = -3.76

[[scenario]]
name = "13"
n_total = 1000

[[scenario]]
name = "14"
n_total = 500

[[scenario]]
name = "15"
n_total = 200

[[scenario]]
name = "16"
alpha0 = -1.5
alpha1 = 3.0
n_total = 500

[[scenario]]
name = "17"
alpha0 = 0.01
alpha1 = 4.5
n_total = 500

[[scenario]]
name = "18"
alpha0 = 0.56
alpha1 = 9.0
n_total = 500
"#;

#[test]
fn sweep_file_writes_one_row_per_setting() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("sweep.toml");
    std::fs::write(&scenario, SWEEP).unwrap();
    let stem = dir.path().join("sweep");
    let o = pategen(&["simulate", "--scenario", path(&scenario), "--estimators", "IPW", "--variance", "MEST", "--out", path(&stem)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(stem.with_extension("csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(csv.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 6);
    let n: Vec<&str> = rows.iter().map(|r| &r[col("n_total")]).collect();
    assert_eq!(n, ["1000", "500", "200", "500", "500", "500"]);
    let frac: Vec<f64> = rows.iter().map(|r| r[col("sampling_fraction")].parse().unwrap()).collect();
    for (f, want) in frac.iter().zip([0.2, 0.2, 0.2, 0.5, 0.85, 0.95]) {
        assert!((f - want).abs() < 0.01, "{f} vs {want}");
    }
}
