mod common;

use physchan::composition::{compose, Edge};
use physchan::config::{reference_config, reference_toml, HomeConfig};
use physchan::simulation::{execute, ActivationSchedule};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn reference_adjacency_is_stable() {
    let home = reference_config().build().unwrap();
    let golden: Vec<String> = include_str!("golden/reference_adjacency.txt").lines().map(str::to_string).collect();
    assert_eq!(home.cpem.adjacency(), golden);
}

#[test]
fn reference_graph_shape() {
    let home = reference_config().build().unwrap();
    let s = home.cpem.summary();
    assert_eq!((s.actuator_pems, s.sensor_pems, s.apps), (24, 6, 39));
    assert_eq!(s.edges["influence"], 24);
    // temp, hum, illum and sound have several inbound PeMs; motion and smoke at most one.
    assert_eq!(s.aggregate_nodes, 4);
    assert!(home.cpem.edges.contains(&Edge::Dep { from: "temp".into(), to: "hum".into() }));
    home.cpem.check_well_formed().unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn composition_ignores_input_order(seed in any::<u64>()) {
        let cfg = reference_config();
        let model = cfg.home_model().unwrap();
        let apps = cfg.app_rules().unwrap();
        let base = compose(model.clone(), apps.clone()).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = model;
        m.actuators.shuffle(&mut rng);
        m.sensors.shuffle(&mut rng);
        let mut a = apps;
        a.shuffle(&mut rng);
        let shuffled = compose(m, a).unwrap();
        prop_assert_eq!(&base.edges, &shuffled.edges);
        prop_assert_eq!(base.summary(), shuffled.summary());
    }
}

#[test]
fn toml_round_trip_preserves_graph() {
    let cfg = reference_config();
    let again = HomeConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(cfg, again);
    assert_eq!(cfg.build().unwrap().cpem, again.build().unwrap().cpem);
}

#[test]
fn cpem_serialises_losslessly() {
    let home = reference_config().build().unwrap();
    let json = serde_json::to_string(&home.cpem).unwrap();
    let back: physchan::composition::Cpem = serde_json::from_str(&json).unwrap();
    assert_eq!(back, home.cpem);
}

#[test]
fn fixture_text_matches_loader() {
    assert_eq!(HomeConfig::from_toml(reference_toml()).unwrap(), reference_config());
}

#[test]
fn executions_are_deterministic() {
    let home = reference_config().build().unwrap();
    let sched = ActivationSchedule::new([("App7".to_string(), 3.0), ("App13".to_string(), 1.5), ("App11".to_string(), 10.0)]);
    let a = execute(&home.cpem, &sched, 60.0, 1.0).unwrap();
    let b = execute(&home.cpem, &sched, 60.0, 1.0).unwrap();
    assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
    assert_eq!(a.annotations, b.annotations);
}

#[test]
fn empty_schedule_stays_at_baseline() {
    let home = reference_config().build().unwrap();
    let tr = execute(&home.cpem, &ActivationSchedule::default(), 10.0, 1.0).unwrap();
    let b = home.cpem.model.env.baselines;
    assert!(tr.signal("temp").unwrap().iter().all(|v| (v - b.temperature).abs() < 1e-9));
    assert!(tr.signal("sound").unwrap().iter().all(|v| (v - b.sound).abs() < 1e-9));
    assert!(tr.annotations.is_empty());
}

#[test]
fn unknown_app_in_schedule_is_an_error() {
    let home = reference_config().build().unwrap();
    let sched = ActivationSchedule::new([("App999".to_string(), 1.0)]);
    assert!(execute(&home.cpem, &sched, 10.0, 1.0).is_err());
    // App18 is sensor-triggered, not schedulable.
    let sched = ActivationSchedule::new([("App18".to_string(), 1.0)]);
    assert!(execute(&home.cpem, &sched, 10.0, 1.0).is_err());
}

#[test]
fn timer_app_only_home() {
    let cfg = common::with_apps(vec![common::timer_app("Solo", &["disposal.on"])]);
    let home = cfg.build().unwrap();
    let tr = execute(&home.cpem, &ActivationSchedule::new([("Solo".to_string(), 0.0)]), 1.0, 1.0).unwrap();
    let peak = tr.max_of("sound").unwrap();
    assert!((peak - 59.94).abs() < 0.05, "{peak}");
}
