use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn nvspin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nvspin")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

/// Value in `col` of the first CSV row whose first field is `key`.
fn csv_value(text: &str, key: &str, col: usize) -> f64 {
    text.lines()
        .map(|l| l.split(',').collect::<Vec<_>>())
        .find(|f| f[0] == key)
        .unwrap_or_else(|| panic!("no row {key} in\n{text}"))[col]
        .parse()
        .unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("bad JSON ({e}): {}", stdout(o)))
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn transitions_reference_field() {
    let o = nvspin(&["transitions", "--isotope", "n14", "--preset", "table1_297K", "--bz", "470"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("transition,freq_khz,upper,lower\n"));
    assert!((csv_value(&text, "f1", 1) - 5085.95).abs() < 0.1);
}

#[test]
fn transitions_zero_field_diagonal() {
    let o = nvspin(&["transitions", "--bz", "0", "--bx", "0", "--a-perp", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!((csv_value(&stdout(&o), "f1", 1) - 4945.88).abs() < 1e-6);
}

#[test]
fn anti_crossing_exits_3_naming_field() {
    let o = nvspin(&["transitions", "--bz", "1023"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("1023"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_2() {
    for args in [
        vec!["transitions", "--bx", "1", "--theta-deg", "0.1"],
        vec!["transitions", "--preset", "nope"],
        vec!["transitions", "--preset", "table1_297K", "--params", "x.json"],
        vec!["transitions", "--isotope", "n16"],
        vec!["transitions", "--temp", "500"],
        vec!["transitions", "--params", "/nonexistent/params.json"],
        vec!["angular-scan", "--theta-max-deg", "3"],
        vec!["angular-scan", "--theta-max-deg", "0.5", "--steps", "1"],
        vec!["ramsey", "--transition", "f7"],
        vec!["bogus-command"],
    ] {
        let o = nvspin(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn params_file_and_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("p.json");
    std::fs::write(&good, r#"{"d": 2870380, "a_par": 3033.3, "a_perp": 3680}"#).unwrap();
    let o = nvspin(&["transitions", "--isotope", "n15", "--params", path_str(&good)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!((csv_value(&stdout(&o), "f7", 1) - 205.89).abs() < 0.5);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"d": 1, "a_par": 1, "a_perp": 1, "extra": 2}"#).unwrap();
    assert_eq!(code(&nvspin(&["transitions", "--params", path_str(&bad)])), 2);
}

#[test]
fn out_flag_and_json_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.json");
    let o = nvspin(&["transitions", "--theta-deg", "0.1", "--format", "json", "--out", path_str(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let cfg = &doc["config"];
    assert_eq!(cfg["command"], "transitions");
    assert_eq!(cfg["theta_deg"], 0.1);
    let bx = cfg["bx"].as_f64().unwrap();
    assert!((bx - 470.0 * 0.1f64.to_radians().tan()).abs() < 1e-12);
    assert_eq!(doc["result"].as_array().unwrap().len(), 13);
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a.csv"), dir.path().join("b.csv"), dir.path().join("c.csv"));
    for (p, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        let o = nvspin(&["synth", "--noise-scale", "1", "--seed", seed, "--out", path_str(p)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let (a, b, c) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap(), std::fs::read(c).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.starts_with(b"temperature_K,transition,freq_khz,sigma_khz\n"));
}

#[test]
fn synth_then_fit_roundtrip_with_thermal() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.csv");
    assert_eq!(code(&nvspin(&["synth", "--out", path_str(&m)])), 0);
    let o = nvspin(&["fit", path_str(&m), "--thermal", "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc = json(&o);
    let fits = doc["result"]["fits"].as_array().unwrap();
    assert_eq!(fits.len(), 12);
    let at_297 = fits
        .iter()
        .map(|f| &f["params"])
        .min_by(|a, b| {
            let d = |v: &Value| (v["d"].as_f64().unwrap() - 2870280.0).abs();
            d(a).total_cmp(&d(b))
        })
        .unwrap();
    assert!(at_297["q"].as_f64().is_some());
    let summary = doc["result"]["thermal_summary"].as_array().unwrap();
    let d = summary.iter().find(|s| s["parameter"] == "D").unwrap();
    let ppm = d["fractional_ppm"].as_f64().unwrap();
    assert!((ppm / -25.3 - 1.0).abs() < 0.02, "D fractional {ppm}");
    let q = summary.iter().find(|s| s["parameter"] == "Q").unwrap();
    assert!((q["value"].as_f64().unwrap() - -4945.88).abs() < 0.02);
    assert_eq!(doc["config"]["command"], "fit");
}

#[test]
fn fit_rejects_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one.csv");
    std::fs::write(&one, "temperature_K,transition,freq_khz,sigma_khz\n297,f1,5085.95,0.01\n").unwrap();
    let o = nvspin(&["fit", path_str(&one)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let header = dir.path().join("h.csv");
    std::fs::write(&header, "T,transition,freq,sigma\n297,f1,5085.95,0.01\n").unwrap();
    assert_eq!(code(&nvspin(&["fit", path_str(&header)])), 2);

    let label = dir.path().join("l.csv");
    std::fs::write(&label, "temperature_K,transition,freq_khz,sigma_khz\n297,f7,205.9,0.03\n").unwrap();
    assert_eq!(code(&nvspin(&["fit", path_str(&label)])), 2);
}

#[test]
fn fit_iteration_cap_exits_4_naming_temperature() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.csv");
    assert_eq!(code(&nvspin(&["synth", "--temps", "250", "--out", path_str(&m)])), 0);
    let o = nvspin(&["fit", path_str(&m), "--max-iter", "5"]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("250 K"), "{}", stderr(&o));
}

#[test]
fn angular_scan_rows_and_beta() {
    let o = nvspin(&["angular-scan", "--isotope", "n15", "--bz", "480", "--theta-max-deg", "0.1", "--steps", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "theta_deg,f_khz,fractional_shift");
    assert_eq!(csv_value(&text, "0.000000", 2), 0.0);
    let f0 = csv_value(&text, "0.000000", 1);
    let f1 = csv_value(&text, "0.100000", 1);
    let shift_hz = (f1 - f0) * 1e3;
    assert!((shift_hz / 130.0 - 1.0).abs() < 0.15, "{shift_hz} Hz");
    assert!(lines.last().unwrap().starts_with("beta,"));

    let o = nvspin(&["angular-scan", "--bz", "480"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let beta = csv_value(&stdout(&o), "beta", 1);
    assert!((beta / -9.9 - 1.0).abs() < 0.05, "{beta}");
}

#[test]
fn perturb_check_tripwire() {
    let o = nvspin(&["perturb-check"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).lines().skip(1).all(|l| l.ends_with(",PASS")));

    let o = nvspin(&["perturb-check", "--isotope", "n15", "--a-perp", "0"]);
    assert_eq!(code(&o), 0);
    for l in stdout(&o).lines().skip(1) {
        let r: f64 = l.split(',').nth(1).unwrap().parse().unwrap();
        assert!(r < 0.2, "{l}");
    }

    assert_eq!(code(&nvspin(&["perturb-check", "--bz-max", "1100"])), 2);

    // the transverse nuclear Zeeman term moves f7 beyond the closed-form budget
    let o = nvspin(&["perturb-check", "--isotope", "n15", "--full-hamiltonian"]);
    assert_eq!(code(&o), 5);
    assert!(stdout(&o).contains(",FAIL"));
    assert!(stderr(&o).contains("f7"));
}

#[test]
fn ramsey_roundtrip_recovers_transition() {
    let o = nvspin(&["ramsey", "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = &json(&o)["result"];
    assert_eq!(r["transition"], "f1");
    assert!((r["f_rf_khz"].as_f64().unwrap() - r["f_model_khz"].as_f64().unwrap() - 4.0).abs() < 1e-9);
    assert!(r["error_hz"].as_f64().unwrap().abs() < 2.0);

    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let o = nvspin(&["ramsey", "--isotope", "n15", "--detuning-khz", "-3", "--noise", "0.01", "--trace-out", path_str(&trace)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(std::fs::read_to_string(&trace).unwrap().starts_with("tau_s,signal\n"));
    let err = csv_value(&stdout(&o), "f7", 7);
    assert!(err.abs() < 2.0, "{err} Hz");
}

#[test]
fn thermal_table() {
    let o = nvspin(&["thermal"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!((csv_value(&text, "D", 3) - -25.3).abs() < 0.1);
    assert!((csv_value(&text, "f1-f2", 2) - 0.149).abs() < 0.01);
    assert_eq!(code(&nvspin(&["thermal", "--a-par", "-2000"])), 2);
}
