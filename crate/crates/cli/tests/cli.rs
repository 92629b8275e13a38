use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_poisson-field"))
}

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, name: &str, model: &str, seed: &str) -> PathBuf {
    let out = dir.join(name);
    let m = scenarios().join("cli").join(model);
    let o = run(&["simulate", "--model", s(&m), "--seed", seed, "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), "a.csv", "model_lambda5.json", "11");
    let b = simulate(dir.path(), "b.csv", "model_lambda5.json", "11");
    let c = simulate(dir.path(), "c.csv", "model_lambda5.json", "12");
    let (ta, tb) = (fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    assert_ne!(ta, fs::read(&c).unwrap());
    let text = String::from_utf8(ta).unwrap();
    assert!(text.starts_with("x,y,count\n"));
    assert_eq!(text.lines().count(), 226);
    let side: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("a.csv.json")).unwrap()).unwrap();
    assert_eq!(side["seed"], 11);
    assert_eq!(side["model"]["beta"][0], 5f64.ln());
}

#[test]
fn fit_predict_crossval_round() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d.csv", "model_lambda5.json", "5");
    let cfg = scenarios().join("cli/fit_gw4.json");
    let fit = dir.path().join("fit.json");
    let o = run(&["fit", "--data", s(&data), "--config", s(&cfg), "--method", "poisson-wpl", "--out", s(&fit)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let f: serde_json::Value = serde_json::from_slice(&fs::read(&fit).unwrap()).unwrap();
    assert_eq!(f["converged"], true);
    let b0 = f["estimate"]["beta"][0].as_f64().unwrap();
    let alpha = f["estimate"]["alpha"].as_f64().unwrap();
    assert!((b0 - 5f64.ln()).abs() < 0.3, "{b0}");
    assert!(alpha > 0.05 && alpha < 0.6, "{alpha}");

    let targets = dir.path().join("t.csv");
    fs::write(&targets, "x,y\n0.1,0.1\n0.33,0.27\n4,4\n").unwrap();
    let pred = dir.path().join("p.csv");
    let o = run(&["predict", "--fit", s(&fit), "--data", s(&data), "--targets", s(&targets), "--out", s(&pred)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&pred).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "x,y,predicted,mse");
    assert_eq!(rows.len(), 4);
    // far target: the fitted mean with full variance
    let far: Vec<f64> = rows[3].split(',').map(|v| v.parse().unwrap()).collect();
    assert!((far[2] - b0.exp()).abs() < 1e-9 && (far[3] - b0.exp()).abs() < 1e-9);

    let cv = dir.path().join("cv.csv");
    let summary = dir.path().join("cv.json");
    let o = run(&[
        "crossval", "--data", s(&data), "--config", s(&cfg), "--repeats", "3", "--seed", "2", "--out", s(&cv),
        "--summary", s(&summary),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&cv).unwrap();
    assert!(text.starts_with("repeat,rmse,baseline_rmse\n"));
    assert_eq!(text.lines().count(), 4);
    assert!(summary.exists());
}

#[test]
fn corr_table_reproduces_the_three_curves() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("curves.csv");
    let m = scenarios().join("cli/corr_curves.json");
    let o = run(&["corr-table", "--model", s(&m), "--distances", "0:1:0.01", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "lambda,distance,rho_underlying,rho_poisson,rho_lg,rho_gc");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 3 * 101);
    let mut lambdas: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    lambdas.dedup();
    assert_eq!(lambdas.len(), 3);
    for (l, want) in lambdas.iter().zip([1.69, 12.81, 99.48]) {
        assert!((l - want).abs() < 0.01, "{l} vs {want}");
    }
    for r in &rows {
        let (h, rho, rn, rlg, rgc) = (r[1], r[2], r[3], r[4], r[5]);
        if h == 0.0 {
            assert_eq!([rho, rn, rlg, rgc], [1.0; 4]);
            continue;
        }
        for v in [rho, rn, rlg, rgc] {
            assert!((0.0..=1.0).contains(&v));
        }
        assert!(rn <= rho * rho + 1e-12);
        if h >= 0.5 {
            assert_eq!([rho, rn, rlg, rgc], [0.0; 4]);
        }
    }
    // the log-Gaussian curve jumps at the origin, most at the smallest mean
    let first = |k: usize| rows[k * 101 + 1][4];
    assert!(first(0) < first(1) && first(1) < first(2));
    assert!(first(0) < 0.5);
}

#[test]
fn pmf_grid_covers_the_square() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.csv");
    let o = run(&["pmf-grid", "--lambda", "5", "--rho", "0.5", "--out", s(&out)]);
    assert!(o.status.success());
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1 + 13 * 13);
    for l in text.lines().skip(1) {
        let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
        assert!((v[2] - v[3] - v[4]).abs() < 1e-15);
    }
}

#[test]
fn study_writes_report_and_replicates() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("s.json");
    fs::write(
        &spec,
        r#"{"id":"tiny","beta":[1.0],"corr":{"family":"generalized_wendland4","alpha":0.2},
            "design":{"kind":"perturbed_grid","n_per_side":6,"spacing":0.05,"jitter":0.015},
            "replicates":2,"methods":["gaussian_wpl"],"weights":{"xi_s":0.1},"seed":1}"#,
    )
    .unwrap();
    let (rep, csv) = (dir.path().join("r.json"), dir.path().join("r.csv"));
    let o = run(&[
        "--threads", "1", "--log-json", "-v", "study", "--spec", s(&spec), "--out", s(&rep), "--replicates-csv", s(&csv),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let logs = String::from_utf8(o.stderr).unwrap();
    assert!(logs.lines().count() > 0);
    for l in logs.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(v["level"].is_string() && v["message"].is_string());
    }
    let r: serde_json::Value = serde_json::from_slice(&fs::read(&rep).unwrap()).unwrap();
    assert_eq!(r["id"], "tiny");
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 1 + 2 * 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d.csv", "model_lambda5.json", "3");
    let cfg = scenarios().join("cli/fit_gw4.json");
    let out = dir.path().join("f.json");
    let code = |o: Output| o.status.code().unwrap();

    assert_eq!(code(run(&["fit", "--data", s(&data)])), 1);
    assert_eq!(code(run(&["fit", "--data", s(&data), "--config", s(&cfg), "--method", "x", "--out", "f"])), 1);
    assert_eq!(code(run(&["corr-table", "--model", s(&cfg), "--distances", "1:0:0.1", "--out", "c"])), 2);
    assert_eq!(code(run(&["fit", "--data", "missing.csv", "--config", s(&cfg), "--out", s(&out)])), 2);

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "x,y,count\n0,0,-3\n").unwrap();
    assert_eq!(code(run(&["fit", "--data", s(&bad), "--config", s(&cfg), "--out", s(&out)])), 2);

    let starved = dir.path().join("starved.json");
    fs::write(&starved, r#"{"family":"generalized_wendland4","weights":{"xi_s":0.1},"optimizer":{"max_evals":5,"restarts":0}}"#).unwrap();
    let o = run(&["fit", "--data", s(&data), "--config", s(&starved), "--out", s(&out)]);
    assert_eq!(code(o), 4);
    let f: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(f["converged"], false);

    let truncated = dir.path().join("trunc.json");
    fs::write(&truncated, r#"{"family":"generalized_wendland4","weights":{"xi_s":0.1},"series":{"max_terms":1}}"#).unwrap();
    assert_eq!(code(run(&["fit", "--data", s(&data), "--config", s(&truncated), "--out", s(&out)])), 3);
}
