mod common;

use physchan::calibration::{
    default_bounds, estimate_distance, fit_device_property, pem_trace, prune_channels, tau_eps_closeness, ObservedTrace, PruneConfig,
};
use physchan::composition::Edge;
use physchan::config::reference_config;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

fn series() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, 2..40)
}

proptest! {
    #[test]
    fn closeness_is_symmetric(a in series(), b in series(), tau in 0.0..5.0f64) {
        let x = ObservedTrace::uniform(1.0, a).unwrap();
        let y = ObservedTrace::uniform(1.0, b).unwrap();
        let h = 40.0;
        prop_assert_eq!(tau_eps_closeness(&x, &y, tau, h).unwrap(), tau_eps_closeness(&y, &x, tau, h).unwrap());
    }

    #[test]
    fn closeness_shrinks_as_tau_grows(a in series(), b in series(), tau in 0.0..5.0f64, extra in 0.0..5.0f64) {
        let x = ObservedTrace::uniform(1.0, a).unwrap();
        let y = ObservedTrace::uniform(1.0, b).unwrap();
        let tight = tau_eps_closeness(&x, &y, tau, 40.0).unwrap();
        let loose = tau_eps_closeness(&x, &y, tau + extra, 40.0).unwrap();
        prop_assert!(loose <= tight);
    }

    #[test]
    fn a_trace_is_close_to_itself(a in series(), tau in 0.0..5.0f64) {
        let x = ObservedTrace::uniform(1.0, a).unwrap();
        prop_assert_eq!(tau_eps_closeness(&x, &x, tau, 40.0).unwrap(), 0.0);
    }

    #[test]
    fn csv_round_trip(a in series()) {
        let x = ObservedTrace::uniform(0.5, a).unwrap();
        let back = ObservedTrace::from_csv(x.to_csv().unwrap().as_bytes()).unwrap();
        prop_assert_eq!(back.t, x.t);
        for (p, q) in back.v.iter().zip(&x.v) {
            prop_assert!((p - q).abs() <= 1e-12 * q.abs().max(1.0));
        }
    }

    #[test]
    fn ranging_inverts_path_loss(d in 0.2..20.0f64, p0 in -60.0..-30.0f64, n in 1.5..4.0f64) {
        let rssi = p0 - 10.0 * n * d.log10();
        prop_assert!((estimate_distance(rssi, p0, n) - d).abs() < 1e-9 * d.max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sound_fit_recovers_planted_level(level in 40.0..90.0f64) {
        let home = reference_config().build().unwrap();
        let env = home.cpem.model.env;
        let mut pem = home.cpem.actuator("disposal_sound").unwrap().clone();
        pem.flow = pem.flow.with_property(level);
        let sensor = home.cpem.sensor("sound").unwrap();
        let times: Vec<f64> = (0..=20).map(f64::from).collect();
        let v = pem_trace(&pem, sensor, &env, &times).unwrap();
        let obs = ObservedTrace::new(times, v).unwrap();
        let fit = fit_device_property(&pem, sensor, &env, &obs, default_bounds(pem.flow.property().unwrap()), 0.0, 1e-4).unwrap();
        prop_assert!((fit.property.value() - level).abs() < 1e-3);
        prop_assert!(!fit.degenerate);
    }

    #[test]
    fn pruning_keeps_strong_channels(seed in any::<u64>(), scale in 3.0..20.0f64) {
        let home = reference_config().build().unwrap();
        let cfg = PruneConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut experiments = BTreeMap::new();
        let mut noise = Vec::new();
        for s in &home.cpem.model.sensors {
            let base = home.cpem.model.env.baselines.of(s.channel);
            let idle: Vec<f64> = (0..60).map(|_| base + rng.gen_range(-0.2..0.2) * cfg.floor(s)).collect();
            noise.push(ObservedTrace::uniform(1.0, idle).unwrap().with_meta("", &s.id, base));
        }
        for e in &home.cpem.edges {
            let Edge::PhysInfluence { pem, sensor } = e else { continue };
            let s = home.cpem.sensor(sensor).unwrap();
            let base = home.cpem.model.env.baselines.of(s.channel);
            let shift = scale * cfg.floor(s);
            let on: Vec<f64> = (0..60).map(|_| base + shift + rng.gen_range(-0.2..0.2) * cfg.floor(s)).collect();
            experiments.insert((pem.clone(), sensor.clone()), ObservedTrace::uniform(1.0, on).unwrap());
        }
        let report = prune_channels(&home.cpem, &experiments, &noise, &cfg).unwrap();
        prop_assert!(report.decisions.iter().all(|d| d.kept));
        prop_assert_eq!(&report.cpem.edges, &home.cpem.edges);
    }
}

#[test]
fn every_family_round_trips_without_noise() {
    let home = reference_config().build().unwrap();
    let env = home.cpem.model.env;
    let times: Vec<f64> = (0..=360).map(|k| f64::from(k) * 5.0).collect();
    for (pem, sensor) in common::families(&home.cpem) {
        let truth = pem.flow.property().unwrap().value();
        let obs = ObservedTrace::new(times.clone(), pem_trace(&pem, &sensor, &env, &times).unwrap()).unwrap();
        let bounds = default_bounds(pem.flow.property().unwrap());
        let fit = fit_device_property(&pem, &sensor, &env, &obs, bounds, 0.0, 1e-3).unwrap();
        assert!((fit.property.value() - truth).abs() < 1e-3, "{}: {} vs {truth}", pem.id, fit.property.value());
    }
}

#[test]
fn flat_observation_is_degenerate() {
    let home = reference_config().build().unwrap();
    let env = home.cpem.model.env;
    let pem = home.cpem.actuator("oven_temp").unwrap();
    let sensor = home.cpem.sensor("temp").unwrap();
    // At 1.5 m the oven's heat does not arrive within ten minutes.
    let obs = ObservedTrace::uniform(10.0, vec![env.baselines.temperature; 61]).unwrap();
    let fit = fit_device_property(pem, sensor, &env, &obs, (70.0, 400.0), 0.0, 1e-3).unwrap();
    assert!(fit.degenerate);
}

#[test]
fn dependency_pems_have_nothing_to_fit() {
    let home = reference_config().build().unwrap();
    let env = home.cpem.model.env;
    let pem = home.cpem.actuator("oven_hum").unwrap();
    let sensor = home.cpem.sensor("hum").unwrap();
    let obs = ObservedTrace::uniform(1.0, vec![45.0; 10]).unwrap();
    assert!(fit_device_property(pem, sensor, &env, &obs, (0.0, 1.0), 0.0, 1e-3).is_err());
}
