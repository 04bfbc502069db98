use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ctdebias"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn ctdebias")
}

fn configs(name: &str) -> String {
    format!("{}/configs/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn assert_manifest_complete(dir: &Path) {
    let m = manifest(dir);
    let mut listed: Vec<String> = m["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    listed.sort();
    let mut present: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    present.sort();
    assert_eq!(listed, present);
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let headers = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    (headers, rows)
}

#[test]
fn design_shipped_filter() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("f");
    let o = run(&[
        "design",
        "--spec",
        &configs("filter_n50.json"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = read_csv(&out.join("filter.csv"));
    assert_eq!(h, ["d", "k", "coeff"]);
    assert_eq!(rows.len(), 3 * 50);
    assert!(String::from_utf8_lossy(&o.stdout).contains("row norms"));
    assert_manifest_complete(&out);
}

#[test]
fn design_rejects_p_not_above_m() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bad");
    let o = run(&[
        "design",
        "--spec",
        r#"{"N": 10, "p": 2, "m": 2, "h": 0.1}"#,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists(), "partial output left behind");
}

#[test]
fn design_staggered_has_disjoint_supports() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("f");
    let o = run(&[
        "design",
        "--spec",
        &configs("filter_n50.json"),
        "--out",
        out.to_str().unwrap(),
        "--staggered",
    ]);
    assert!(o.status.success());
    let support = |name: &str| -> Vec<u32> {
        let (_, rows) = read_csv(&out.join(name));
        let mut ks: Vec<u32> = rows
            .iter()
            .filter(|r| r[2] != 0.0)
            .map(|r| r[1] as u32)
            .collect();
        ks.sort();
        ks.dedup();
        ks
    };
    let odd = support("filter_odd.csv");
    let even = support("filter_even.csv");
    assert!(odd.iter().all(|k| k % 2 == 1));
    assert!(even.iter().all(|k| k % 2 == 0));
    assert_eq!(odd.len() + even.len(), 50);
    assert_manifest_complete(&out);
}

fn simulate_vdp(dir: &Path, sigma2: f64, seed: &str) -> Output {
    let cfg = format!(
        r#"{{"theta0": [[40.0], [-400.0]], "x0": [0.0, 0.001], "n": 2000, "h": 0.0005, "sigma2": {sigma2}}}"#
    );
    run(&[
        "simulate",
        "--model",
        "vdp",
        "--config",
        &cfg,
        "--seed",
        seed,
        "--out",
        dir.to_str().unwrap(),
    ])
}

#[test]
fn simulate_vdp_rows_and_zero_noise() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let o = simulate_vdp(&out, 0.0, "3");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = read_csv(&out.join("trajectory.csv"));
    assert_eq!(h, ["t", "x1", "z1"]);
    assert_eq!(rows.len(), 2000);
    assert!(rows.iter().all(|r| r[1] == r[2]));
    assert!((rows[0][0] - 0.0005).abs() < 1e-15);
    let m = manifest(&out);
    assert_eq!(m["seeds"][0], 3);
    assert_manifest_complete(&out);
}

#[test]
fn simulate_shipped_config_with_noise() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let o = run(&[
        "simulate",
        "--model",
        "vdp",
        "--config",
        &configs("simulate_vdp.json"),
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let (_, rows) = read_csv(&out.join("trajectory.csv"));
    let var = rows.iter().map(|r| (r[2] - r[1]).powi(2)).sum::<f64>() / rows.len() as f64;
    assert!((var / 0.01 - 1.0).abs() < 0.1, "{var}");
}

fn estimate(data: &Path, method: &str, sigma: &str, out: &Path) -> Output {
    run(&[
        "estimate",
        "--data",
        data.to_str().unwrap(),
        "--model",
        "vdp",
        "--filter",
        r#"{"N": 50, "p": 6}"#,
        "--method",
        method,
        "--sigma",
        sigma,
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn estimate_noiseless_vdp() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    assert!(simulate_vdp(&sim, 0.0, "0").status.success());
    let data = sim.join("trajectory.csv");

    let ls_dir = tmp.path().join("ls");
    let o = estimate(&data, "ls", "0", &ls_dir);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("pe_stat"));
    let ls = fs::read_to_string(ls_dir.join("estimate.json")).unwrap();
    let v: Value = serde_json::from_str(&ls).unwrap();
    let th: Vec<f64> = v["theta_hat"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    assert!(
        (th[0] / 40.0 - 1.0).abs() < 0.01 && (th[1] / -400.0 - 1.0).abs() < 0.01,
        "{th:?}"
    );
    assert_manifest_complete(&ls_dir);

    let bc_dir = tmp.path().join("bc");
    assert!(estimate(&data, "bc", "0", &bc_dir).status.success());
    let bc = fs::read_to_string(bc_dir.join("estimate.json")).unwrap();
    assert_eq!(ls.replace("\"LS\"", "\"BC\""), bc);

    let iv_dir = tmp.path().join("iv");
    assert!(estimate(&data, "iv", "0", &iv_dir).status.success());
    let iv: Value =
        serde_json::from_str(&fs::read_to_string(iv_dir.join("estimate.json")).unwrap()).unwrap();
    let supports: Vec<&str> = iv["instrument_filters"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["support"].as_str().unwrap())
        .collect();
    assert_eq!(supports, ["odd-columns", "even-columns"]);
}

#[test]
fn estimate_singular_gram_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("zeros.csv");
    let mut text = String::from("t,x1\n");
    for i in 1..=200 {
        text.push_str(&format!("{},0\n", i as f64 * 0.01));
    }
    fs::write(&data, text).unwrap();
    let out = tmp.path().join("est");
    let o = estimate(&data, "ls", "0", &out);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pe_stat"));
    assert!(!out.exists());
}

#[test]
fn estimate_missing_data_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let o = estimate(
        &tmp.path().join("nope.csv"),
        "ls",
        "0",
        &tmp.path().join("est"),
    );
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn estimate_unknown_method_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    assert!(simulate_vdp(&sim, 0.0, "0").status.success());
    let o = estimate(
        &sim.join("trajectory.csv"),
        "ridge",
        "0",
        &tmp.path().join("est"),
    );
    assert_eq!(o.status.code(), Some(2));
}

fn small_mc(reps: usize) -> String {
    format!(
        r#"{{"model": "vdp", "theta0": [[40.0], [-400.0]], "x0": [0.0, 0.001], "n": 800, "h": 0.0005,
            "sigma2": 0.01, "filter": {{"N": 40, "p": 6}}, "replications": {reps}, "base_seed": 5}}"#
    )
}

#[test]
fn mc_outputs_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_mc(4);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        let o = run(&["mc", "--config", &cfg, "--out", d.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let sa = fs::read(a.join("summary.csv")).unwrap();
    assert_eq!(sa, fs::read(b.join("summary.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("reps.csv")).unwrap(),
        fs::read(b.join("reps.csv")).unwrap()
    );
    assert!(a.join("kde_ls_theta_1.csv").exists());
    assert_manifest_complete(&a);
    let m = manifest(&a);
    assert_eq!(m["seeds"].as_array().unwrap().len(), 4);
    assert_eq!(m["seeds"][3], 8);
}

#[test]
fn mc_single_replication_flags_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("one");
    let o = run(&[
        "mc",
        "--config",
        &small_mc(1),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let mut rdr = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        assert_eq!(rec[3].parse::<f64>().unwrap(), 0.0);
    }
    assert_eq!(manifest(&out)["single_replication"], true);
    assert_manifest_complete(&out);
}

#[test]
fn mc_with_thread_cap() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("t");
    let o = bin()
        .env("CTDEBIAS_THREADS", "2")
        .args([
            "mc",
            "--config",
            &small_mc(3),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(o.status.success());
}

#[test]
fn mc_failure_removes_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fail");
    // the window is longer than the series
    let cfg = small_mc(2).replace("\"n\": 800", "\"n\": 20");
    let o = run(&["mc", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
    assert!(!out.exists());
}

#[test]
fn rates_filter_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    let o = run(&[
        "rates",
        "--config",
        &configs("rates_filter.json"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(out.join("rate_report.json")).unwrap()).unwrap();
    assert!((report["bias_slope_nh"].as_f64().unwrap() - 4.0).abs() < 0.5);
    assert_manifest_complete(&out);
}

#[test]
fn rates_rejects_too_few_scales() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{"kind": "filter", "p": 4, "m": 1, "alpha": 0.9, "c": 1.0, "hs": [0.01, 0.005],
                  "fixed_window": 20, "fixed_window_hs": [0.1, 0.05, 0.02, 0.01],
                  "fixed_h": 0.01, "windows": [20, 40, 80, 160]}"#;
    let o = run(&[
        "rates",
        "--config",
        cfg,
        "--out",
        tmp.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
