use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn drivest(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drivest"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn simulate(dir: &Path) {
    let o = drivest(dir, &["simulate", "--spec", "constant_effect", "--n", "300", "--seed", "5", "-o", "sim"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn estimate_writes_reports_and_replays_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    assert!(dir.path().join("sim.csv").exists());
    let o = drivest(
        dir.path(),
        &[
            "estimate", "--data", "sim.csv", "--outcome", "y", "--treatment", "t", "--iv", "z", "--estimand",
            "pi_dr,wald", "--bootstrap", "4", "--grid", "19", "-o", "out/run",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for ext in ["json", "txt", "resolved.toml"] {
        assert!(dir.path().join(format!("out/run.{ext}")).exists(), "missing {ext}");
    }
    let doc = json(&dir.path().join("out/run.json"));
    assert_eq!(doc["status"], "ok");
    let results = doc["results"].as_array().unwrap();
    assert_eq!(results.len(), 2);
    let pi = results[0]["report"]["point"].as_f64().unwrap();
    assert!((pi - 2.0).abs() < 0.5, "pi_dr {pi}");
    assert!(results[0]["report"]["se_bootstrap"].as_f64().is_some());

    let o = drivest(dir.path(), &["estimate", "--config", "out/run.resolved.toml", "-o", "out/again"]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        std::fs::read(dir.path().join("out/run.json")).unwrap(),
        std::fs::read(dir.path().join("out/again.json")).unwrap()
    );
}

#[test]
fn constant_instrument_is_an_estimation_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("y,t,z\n");
    for i in 0..50 {
        csv.push_str(&format!("{},{},1\n", i as f64 * 0.1, (i * 7 % 13) as f64));
    }
    std::fs::write(dir.path().join("d.csv"), csv).unwrap();
    let o = drivest(
        dir.path(),
        &["estimate", "--data", "d.csv", "--outcome", "y", "--treatment", "t", "--iv", "z", "-o", "bad"],
    );
    assert_eq!(code(&o), 1);
    let doc = json(&dir.path().join("bad.json"));
    assert_eq!(doc["status"], "error");
    assert_eq!(doc["error"]["kind"], "single_instrument_value");
}

#[test]
fn usage_and_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "command = \"estimate\"\nbogus = 1\n").unwrap();
    let cases: &[&[&str]] = &[
        &["estimate", "--config", "c.toml"],
        &["estimate", "--outcome", "y", "--treatment", "t", "--iv", "z"],
        &["estimate", "--data", "d.csv", "--outcome", "y", "--treatment", "t", "--iv", "z", "--estimand", "nope"],
        &["mc", "--spec", "no_such_design"],
        &["mc", "--spec", "dgp_m", "--reps", "1"],
        &["simulate", "--spec", "dgp_m", "--level", "1.5"],
        &["frobnicate"],
    ];
    for args in cases {
        let o = drivest(dir.path(), args);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn config_of_another_command_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let o = drivest(dir.path(), &["mc", "--config", "sim.resolved.toml"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn mc_is_deterministic_across_runs_and_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["mc", "--spec", "constant_effect", "--n", "200", "--reps", "3", "--seed", "7", "--estimand", "wald"];
    let mut a: Vec<&str> = base.to_vec();
    a.extend(["-o", "a"]);
    let mut b: Vec<&str> = base.to_vec();
    b.extend(["-o", "b", "--workers", "1"]);
    assert_eq!(code(&drivest(dir.path(), &a)), 0);
    assert_eq!(code(&drivest(dir.path(), &b)), 0);
    let (ja, jb) = (json(&dir.path().join("a.json")), json(&dir.path().join("b.json")));
    assert_eq!(ja, jb);
    let row = &ja["report"]["rows"][0];
    assert_eq!(row["successes"], 3);
    assert!((row["oracle"].as_f64().unwrap() - 2.0).abs() < 1e-6);
}

#[test]
fn diagnose_and_presets() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let o = drivest(
        dir.path(),
        &["diagnose", "--data", "sim.csv", "--outcome", "y", "--treatment", "t", "--iv", "z", "-o", "diag"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc = json(&dir.path().join("diag.json"));
    assert_eq!(doc["diagnostics"]["cell_counts"].as_array().unwrap().len(), 2);

    let o = drivest(dir.path(), &["presets"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("dgp_rs"));
    let o = drivest(dir.path(), &["presets", "dgp_rs"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("first_stage"));
}
