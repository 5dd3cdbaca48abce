use physchan::calibration::{pem_trace, ObservedTrace};
use physchan::composition::Cpem;
use physchan::config::{reference_config, HomeConfig};
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn physchan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_physchan")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write_config(dir: &Path, cfg: &HomeConfig) -> String {
    let p = dir.join("home.toml");
    fs::write(&p, cfg.to_toml()).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn compose_output_reloads_to_the_same_graph() {
    let dir = tempfile::tempdir().unwrap();
    let o = physchan(&["compose", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let back: Cpem = serde_json::from_str(&fs::read_to_string(dir.path().join("cpem.json")).unwrap()).unwrap();
    assert_eq!(back, reference_config().build().unwrap().cpem);
    let adjacency = fs::read_to_string(dir.path().join("adjacency.txt")).unwrap();
    assert_eq!(adjacency.lines().count(), back.edges.len());
    assert!(String::from_utf8_lossy(&o.stdout).contains("39 apps"));
}

#[test]
fn empty_home_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = reference_config();
    cfg.apps.clear();
    let config = write_config(dir.path(), &cfg);
    let out = dir.path().join("out");
    let o = physchan(&["validate", "--config", &config, "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(out.join("violations.json")).unwrap().trim(), "[]");
    assert!(out.join("summary.txt").exists());
}

#[test]
fn violations_exit_two_and_repeat_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = physchan(&["validate", "--seed", "7", "--policies", "G2,G3", "--out", s(&out)]);
        assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
        (fs::read(out.join("violations.json")).unwrap(), fs::read(out.join("summary.txt")).unwrap())
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(a, b);
    let reports: serde_json::Value = serde_json::from_slice(&a.0).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 4);
}

#[test]
fn grid_engine_and_policy_ids() {
    let dir = tempfile::tempdir().unwrap();
    let o = physchan(&["validate", "--engine", "grid", "--grid", "0:30:60", "--policies", "G3:App34:illum", "--out", s(dir.path())]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("violated G3:App34:illum"));
}

#[test]
fn uncalibrated_config_needs_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = reference_config();
    cfg.calibrated = false;
    cfg.apps.clear();
    let config = write_config(dir.path(), &cfg);
    let o = physchan(&["validate", "--config", &config, "--out", s(dir.path())]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--uncalibrated"));
    let o = physchan(&["validate", "--config", &config, "--uncalibrated", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0);
}

#[test]
fn invalid_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = reference_config();
    cfg.devices[0].influences[0].distance = Some(-1.0);
    let config = write_config(dir.path(), &cfg);
    let o = physchan(&["compose", "--config", &config, "--out", s(dir.path())]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("distance"));
    let o = physchan(&["validate", "--grid", "0:0:60", "--engine", "grid", "--out", s(dir.path())]);
    assert_eq!(code(&o), 1);
    let o = physchan(&["validate", "--engine", "annealing"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn report_writes_timelines_in_event_order() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let o = physchan(&["validate", "--seed", "7", "--policies", "G1:vacuum.on:App27:motion", "--out", out]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let o = physchan(&["report", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let tl = fs::read_to_string(dir.path().join("timelines/G1_vacuum.on_App27_motion.timeline.csv")).unwrap();
    let events: Vec<&str> = tl.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(events, ["vacuum.on", "motion detected", "door.unlock"]);
    let trace = fs::read_to_string(dir.path().join("timelines/G1_vacuum.on_App27_motion.trace.csv")).unwrap();
    assert!(trace.lines().count() > 3600);
}

#[test]
fn calibrate_fits_and_prunes() {
    let dir = tempfile::tempdir().unwrap();
    let home = reference_config().build().unwrap();
    let env = home.cpem.model.env;
    let times: Vec<f64> = (0..=120).map(|k| f64::from(k) * 5.0).collect();

    // The bulb is measured brighter than the fixture says.
    let mut bulb = home.cpem.actuator("bulb_illum").unwrap().clone();
    bulb.flow = bulb.flow.with_property(1000.0);
    let v = pem_trace(&bulb, home.cpem.sensor("illum").unwrap(), &env, &times).unwrap();
    fs::write(dir.path().join("bulb.csv"), ObservedTrace::new(times.clone(), v).unwrap().to_csv().unwrap()).unwrap();
    // The disposal is inaudible at the sensor: its run looks like idle noise.
    let quiet: Vec<f64> = times.iter().enumerate().map(|(i, _)| 30.0 + if i % 2 == 0 { 0.2 } else { -0.2 }).collect();
    let csv = ObservedTrace::new(times.clone(), quiet).unwrap().to_csv().unwrap();
    fs::write(dir.path().join("disposal.csv"), &csv).unwrap();
    fs::write(dir.path().join("idle.csv"), &csv).unwrap();
    fs::write(
        dir.path().join("traces.toml"),
        r#"
[[experiment]]
device = "bulb"
sensor = "illum"
file = "bulb.csv"

[[experiment]]
device = "disposal"
sensor = "sound"
file = "disposal.csv"

[[noise]]
sensor = "sound"
file = "idle.csv"
"#,
    )
    .unwrap();

    let out = dir.path().join("cal");
    let o = physchan(&["calibrate", "--traces", s(&dir.path().join("traces.toml")), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = physchan::config::load_config(out.join("config.toml")).unwrap();
    assert!(cfg.calibrated);
    let bulb = cfg.devices.iter().find(|d| d.name == "bulb").unwrap();
    assert!((bulb.influences[0].value.unwrap() - 1000.0).abs() < 0.01);
    let disposal = cfg.devices.iter().find(|d| d.name == "disposal").unwrap();
    assert!(disposal.influences.iter().all(|i| i.sensor != "sound"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("calibration.json")).unwrap()).unwrap();
    assert_eq!(report["fits"].as_array().unwrap().len(), 2);
}
