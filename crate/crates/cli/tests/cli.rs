use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::{json, Value};

fn g2sqz(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_g2sqz")).args(args).output().unwrap()
}

fn read(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn param(name: &str, value: f64, sigma: f64, unit: &str) -> Value {
    json!({ "name": name, "value": value, "sigma": sigma, "unit": unit })
}

/// Comb fit with a 14.16 MHz linewidth and 1.34 ns round trip.
fn write_comb_fit(path: &Path) {
    let omega_c = 2.0 * std::f64::consts::PI * 14.16e6;
    let values = [12.0, 0.08, omega_c, -0.98e-9, 0.25e-9, 1.34e-9];
    let sigmas = [0.04, 3e-4, 0.003 * omega_c, 7e-13, 5e-13, 1e-13];
    let units = ["1", "1", "s^-1", "s", "s", "s"];
    let names = ["n1", "n2", "omega_c", "tau0", "tau_r", "tau_f"];
    let parameters: Vec<Value> = (0..6).map(|i| param(names[i], values[i], sigmas[i], units[i])).collect();
    let covariance: Vec<Vec<f64>> = (0..6)
        .map(|i| (0..6).map(|j| if i == j { sigmas[i] * sigmas[i] } else { 0.0 }).collect())
        .collect();
    let fit = json!({
        "params": {
            "n1": values[0], "n2": values[1], "omega_c": values[2],
            "tau0": values[3], "tau_r": values[4], "tau_f": values[5]
        },
        "fit": {
            "parameters": parameters,
            "covariance": covariance,
            "residual_norm": 4000.0,
            "iterations": 4,
            "converged": true
        }
    });
    std::fs::write(path, serde_json::to_string_pretty(&fit).unwrap()).unwrap();
}

#[test]
fn estimate_reproduces_headline_point() {
    let dir = tempfile::tempdir().unwrap();
    let params = dir.path().join("fit.json");
    let out = dir.path().join("report.json");
    write_comb_fit(&params);
    let run = g2sqz(&[
        "estimate", "--g2zero", "80.56", "--sigma-g2", "1.2",
        "--params", params.to_str().unwrap(), "--k", "1.045e11", "--freq-hz", "8e5",
        "--eta-esc", "0.7", "--pth", "0.1653", "--mode", "chain",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let report = read(&out);
    let db = report["squeezing_db"].as_f64().unwrap();
    assert!((db + 0.066).abs() < 0.003, "{db}");
    let sigma = report["sigma_db"].as_f64().unwrap();
    assert!(sigma > 0.0 && sigma < 0.003, "{sigma}");
    for key in ["r", "sigma_r", "g2_zero", "gamma1", "gamma2", "k", "f", "eta_esc", "p_th", "formula_mode"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    assert_eq!(report["eta_esc"].as_f64().unwrap(), 0.7);
}

#[test]
fn eq5_mode_and_units_flag_agree_with_si() {
    let dir = tempfile::tempdir().unwrap();
    let params = dir.path().join("fit.json");
    write_comb_fit(&params);
    let p = params.to_str().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let common = ["estimate", "--g2zero", "3.964", "--params", p, "--mode", "eq5"];
    let run_a = g2sqz(&[&common[..], &["--k", "1.045e11", "--out", a.to_str().unwrap()]].concat());
    let run_b = g2sqz(&[&common[..], &["--k-mhz-per-mw", "104.5", "--out", b.to_str().unwrap()]].concat());
    assert!(run_a.status.success() && run_b.status.success());
    let (ra, rb) = (read(&a), read(&b));
    let (da, dbv) = (ra["squeezing_db"].as_f64().unwrap(), rb["squeezing_db"].as_f64().unwrap());
    assert!((da - dbv).abs() < 1e-9 * da.abs(), "{da} vs {dbv}");
    assert_eq!(ra["formula_mode"], "literal_eq5");
}

#[test]
fn missing_flag_is_a_usage_error() {
    let run = g2sqz(&["estimate", "--g2zero", "80.56"]);
    assert_eq!(run.status.code(), Some(1));
    let err = String::from_utf8_lossy(&run.stderr);
    assert!(err.contains("Usage"), "{err}");
    assert!(g2sqz(&["frobnicate"]).status.code() == Some(1));
    assert_eq!(g2sqz(&["--help"]).status.code(), Some(0));
}

#[test]
fn invalid_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let params = dir.path().join("fit.json");
    write_comb_fit(&params);
    let run = g2sqz(&["estimate", "--g2zero", "1.5", "--params", params.to_str().unwrap(), "--k", "1e11"]);
    assert_eq!(run.status.code(), Some(1));
    assert!(!run.stderr.is_empty());
    let run = g2sqz(&["estimate", "--g2zero", "80", "--params", params.to_str().unwrap(), "--k", "1e11", "--mode", "nope"]);
    assert_eq!(run.status.code(), Some(1));
    let run = g2sqz(&["correlate", "--in", dir.path().join("absent.bin").to_str().unwrap(), "--out", "x.csv"]);
    assert_eq!(run.status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let hist = dir.path().join("flat.csv");
    // a featureless histogram has no comb to fit
    let mut text = String::from("tau_ps,counts,g2\n");
    for i in 0..400 {
        text.push_str(&format!("{},100,1.0\n", -7000 + 35 * i));
    }
    std::fs::write(&hist, text).unwrap();
    let run = g2sqz(&["fit-comb", "--hist", hist.to_str().unwrap(), "--out", dir.path().join("f.json").to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2), "{}", String::from_utf8_lossy(&run.stderr));
}

#[test]
fn demo_pipeline_runs_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/demo.json");
    let start = Instant::now();
    let run = g2sqz(&["pipeline", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let elapsed = start.elapsed().as_secs_f64();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(elapsed <= 30.0, "{elapsed} s");
    let report = read(&out);
    for key in [
        "r", "sigma_r", "squeezing_db", "sigma_db", "g2_zero", "sigma_g2_zero", "gamma1", "gamma2", "k", "f",
        "eta_esc", "p_th", "formula_mode", "comb_fit", "estimate", "uncertainty",
    ] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    let db = report["squeezing_db"].as_f64().unwrap();
    assert!(db < 0.0 && db > -0.5, "{db}");
    assert!(String::from_utf8_lossy(&run.stdout).contains("squeezing"));
}

#[test]
fn simulate_correlate_fit_chain() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let run = g2sqz(&["simulate", "--pump-uw", "30", "--duration-s", "1", "--seed", "11", "--out", &p("tags.bin")]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let run = g2sqz(&["correlate", "--in", &p("tags.bin"), "--a", "0", "--b", "1", "--bin-ps", "35", "--bins", "4000", "--out", &p("hist.csv")]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let run = g2sqz(&["fit-comb", "--hist", &p("hist.csv"), "--out", &p("fit.json")]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let fit = read(Path::new(&p("fit.json")));
    let tau_f = fit["params"]["tau_f"].as_f64().unwrap();
    assert!((tau_f / 1.34e-9 - 1.0).abs() < 0.01, "{tau_f}");
    let peak = fit["peak_g2"].as_f64().unwrap();
    assert!(peak > 10.0 && peak < 18.0, "{peak}");
    let run = g2sqz(&[
        "estimate", "--g2zero", &peak.to_string(), "--params", &p("fit.json"), "--k", "1.045e11",
        "--eta-esc", "0.7", "--pth", "0.1653", "--out", &p("est.json"),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(read(Path::new(&p("est.json")))["squeezing_db"].as_f64().unwrap() < 0.0);
}

#[test]
fn fit_rate_reads_milliwatt_units() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("rates.csv");
    let out = dir.path().join("k.json");
    // R = eta k P with k = 104.5 MHz/mW and eta = 0.404
    let mut text = String::from("P_mW,R_meas,sigma\n");
    for p in [0.01, 0.02, 0.05, 0.1, 0.2] {
        text.push_str(&format!("{p},{},{}\n", 0.404 * 104.5e6 * p, 1e3));
    }
    std::fs::write(&data, text).unwrap();
    let run = g2sqz(&["fit-rate", "--data", data.to_str().unwrap(), "--eta", "0.404", "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let k = read(&out)["k"].as_f64().unwrap();
    assert!((k / 1.045e11 - 1.0).abs() < 1e-9, "{k}");
}

#[test]
fn figures_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let run = g2sqz(&["figures", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(run.status.success());
    for n in 2..=7 {
        let text = std::fs::read_to_string(dir.path().join(format!("fig{n}.csv"))).unwrap();
        assert!(text.lines().count() > 2);
    }
    let one = dir.path().join("one");
    assert!(g2sqz(&["figures", "--out-dir", one.to_str().unwrap(), "--figure", "fig3"]).status.success());
    assert!(one.join("fig3.csv").exists());
    assert_eq!(g2sqz(&["figures", "--out-dir", one.to_str().unwrap(), "--figure", "fig9"]).status.code(), Some(1));
}
