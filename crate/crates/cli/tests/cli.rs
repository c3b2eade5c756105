use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn lpstable(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpstable"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_csv(path: &Path) -> Vec<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(|x| x.parse().unwrap_or(f64::NAN)).collect())
        .collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn solve_manifold_on_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let o = lpstable(&["solve-manifold"], &configs().join("oracle.json"), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_csv(&dir.path().join("graph.csv"));
    let slice: Vec<&Vec<f64>> = rows.iter().filter(|r| r[0] == 0.0).collect();
    let i = slice.iter().position(|r| r[1] > 0.02).unwrap();
    let (a, b) = (slice[i - 1], slice[i]);
    let w = (0.02 - a[1]) / (b[1] - a[1]);
    let phi = a[2] + w * (b[2] - a[2]);
    assert!((phi / -2.0e-6 - 1.0).abs() < 1e-2, "{phi}");
    for r in &rows {
        if r[1] != 0.0 {
            assert!((r[2] + r[1].powi(3) / 4.0).abs() <= 1e-2 * r[1].abs().powi(3));
        }
    }
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["status"], "pass");
    assert_eq!(m["results"]["solve"]["delta"], 0.02);
    assert!(m["results"]["solve"]["t_cut"].as_f64().unwrap() > 10.0);
    assert_eq!(m["resolved_config"]["solver"]["nodes"], 41);
    assert!(dir.path().join("history.csv").exists());
}

#[test]
fn admissibility_on_exponential() {
    let dir = tempfile::tempdir().unwrap();
    let o = lpstable(&["admissibility"], &configs().join("exponential.json"), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let r = json(&dir.path().join("report-admissibility.json"));
    let b0 = r["report"]["beta_at_zero"].as_f64().unwrap();
    assert!((b0 - 1.378405).abs() < 1e-6, "{b0}");
    assert_eq!(r["report"]["beta_closed_form"], "exponential");
    let beta = read_csv(&dir.path().join("beta.csv"));
    assert!((beta[0][1] - 1.9f64.sqrt()).abs() < 1e-12);
}

#[test]
fn nonmonotone_rate_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = lpstable(&["check-rates"], &fixture("nonmonotone.json"), dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("monotonicity violated"), "{}", stderr(&o));
    let r = json(&dir.path().join("report-rates.json"));
    assert_eq!(r["pass"], false);
    assert!(r["mu"]["monotone_violation_at"].is_array());
    assert_eq!(r["nu"]["monotone_on_grid"], true);
    assert_eq!(json(&dir.path().join("manifest.json"))["status"], "fail");
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let base = fs::read_to_string(configs().join("oracle.json")).unwrap();

    let bad = base.replace("\"nodes\"", "\"nodez\"").replace("\"delta\": 0.02", "\"delta\": 0.02, \"nodez\": 3");
    let o = lpstable(&["solve-manifold"], &write_config(dir.path(), &bad), dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("solver"), "{}", stderr(&o));
    assert!(stderr(&o).contains("nodez"), "{}", stderr(&o));

    let bad = base.replace("\"coeff\": 1.0 },", "\"coeff\": \"one\" },");
    let o = lpstable(&["solve-manifold"], &write_config(dir.path(), &bad), dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("perturbation.coeff"), "{}", stderr(&o));

    let bad = base.replace("\"family\": \"exponential\" },\n    \"nu\"", "\"family\": \"log_poly\" },\n    \"nu\"");
    let o = lpstable(&["check-rates"], &write_config(dir.path(), &bad), dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lambda"), "{}", stderr(&o));

    let o = lpstable(&["check-rates"], &dir.path().join("missing.json"), dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = lpstable(&["perturb-compare"], &configs().join("exponential.json"), dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let base = fs::read_to_string(configs().join("oracle.json")).unwrap();
    let bad = base.replace("\"delta\": 0.02", "\"delta\": 0.2");
    let o = lpstable(&["solve-manifold"], &write_config(dir.path(), &bad), dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("delta_max"), "{}", stderr(&o));
    assert_eq!(json(&dir.path().join("manifest.json"))["status"], "error");
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn runs_are_deterministic() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = configs().join("oracle.json");
    let args = ["verify", "--seed", "3", "--tol-scale", "2"];
    assert!(lpstable(&args, &cfg, a.path()).status.success());
    assert!(lpstable(&args, &cfg, b.path()).status.success());
    assert_eq!(artifacts(a.path()), artifacts(b.path()));

    // the manifest alone reproduces the run
    let o = lpstable(&["verify"], &a.path().join("manifest.json"), c.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let strip = |v: Vec<(String, Vec<u8>)>| -> Vec<(String, Vec<u8>)> {
        v.into_iter().filter(|(n, _)| n != "manifest.json").collect()
    };
    assert_eq!(strip(artifacts(a.path())), strip(artifacts(c.path())));
    let (ma, mc) = (json(&a.path().join("manifest.json")), json(&c.path().join("manifest.json")));
    assert_eq!(ma["resolved_config"], mc["resolved_config"]);
    assert_eq!(ma["seed"], 3);
    assert_eq!(ma["resolved_config"]["solver"]["outer_tol"], 2e-10);
}

#[test]
fn thread_count_does_not_change_results() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = configs().join("exponential.json");
    assert!(lpstable(&["solve-manifold", "--threads", "2"], &cfg, a.path()).status.success());
    let seq = fs::read_to_string(&cfg)
        .unwrap()
        .replace("\"perturbation\"", "\"solver\": { \"exec\": \"sequential\" },\n  \"perturbation\"");
    let seq_cfg = write_config(b.path(), &seq);
    assert!(lpstable(&["solve-manifold"], &seq_cfg, b.path()).status.success());
    assert_eq!(fs::read(a.path().join("graph.csv")).unwrap(), fs::read(b.path().join("graph.csv")).unwrap());
}

#[test]
fn bundled_configs_run_all() {
    for name in ["oracle", "exponential", "polynomial", "log-poly", "loglog-poly", "oscillating-sharpness"] {
        let dir = tempfile::tempdir().unwrap();
        let o = lpstable(&["all"], &configs().join(format!("{name}.json")), dir.path());
        assert!(o.status.success(), "{name}: {}", stderr(&o));
        let m = json(&dir.path().join("manifest.json"));
        for step in ["check-rates", "check-dichotomy", "admissibility", "verify"] {
            assert_eq!(m["results"][step]["pass"], true, "{name} {step}");
        }
        if name == "oscillating-sharpness" {
            let rows = read_csv(&dir.path().join("sharpness.csv"));
            assert_eq!(rows.len(), 5);
            assert!(rows.iter().all(|r| r[5] <= 1e-9 * r[4]));
        }
        if name == "oracle" {
            let r = json(&dir.path().join("report-perturb.json"));
            assert_eq!(r["pass"], true);
        }
    }
}
