mod common;

use physchan::analysis::{reports_json, AnalysisError, Engine, SearchConfig, Settings, Validator};
use physchan::config::Home;
use physchan::policy::PolicyInstance;
use proptest::prelude::*;

const SOUND_APPS: [&str; 8] = ["App6", "App7", "App9", "App10", "App13", "App18", "App19", "App20"];

fn sound_home() -> (Home, Vec<PolicyInstance>) {
    let home = common::reference_subset(&SOUND_APPS).build().unwrap();
    let policies = home.policies().unwrap().instances.into_iter().filter(|p| p.class.is_intent()).collect();
    (home, policies)
}

fn policy<'a>(ps: &'a [PolicyInstance], id: &str) -> &'a PolicyInstance {
    ps.iter().find(|p| p.id == id).unwrap_or_else(|| panic!("no policy {id}"))
}

#[test]
fn grid_reports_revalidate() {
    let (home, policies) = sound_home();
    let v = Validator::new(&home.cpem, 1.0, 60.0).unwrap();
    let out = v.validate_all(&policies, &Engine::Grid, &Settings::default()).unwrap();
    assert!(!out.reports.is_empty());
    for r in &out.reports {
        let p = policy(&policies, &r.policy_id);
        assert!(v.revalidate(p, r).unwrap() < 0.0, "{}", r.policy_id);
        assert!(r.timeline.windows(2).all(|w| w[0].t <= w[1].t), "{} timeline out of order", r.policy_id);
        assert!(!r.inputs.is_empty());
    }
}

#[test]
fn falsify_reports_revalidate() {
    let (home, policies) = sound_home();
    let v = Validator::new(&home.cpem, 1.0, 60.0).unwrap();
    let out = v.validate_all(&policies, &Engine::Falsify(SearchConfig { seed: 11, ..Default::default() }), &Settings::default()).unwrap();
    assert!(!out.reports.is_empty());
    for r in &out.reports {
        assert!(v.revalidate(policy(&policies, &r.policy_id), r).unwrap() < 0.0);
    }
}

#[test]
fn same_seed_same_search() {
    let (home, policies) = sound_home();
    let v = Validator::new(&home.cpem, 1.0, 60.0).unwrap();
    let p = policy(&policies, "G2:App18:sound");
    let cfg = SearchConfig { seed: 5, ..Default::default() };
    let a = v.falsify(p, &cfg).unwrap();
    let b = v.falsify(p, &cfg).unwrap();
    assert_eq!(a.iterations, b.iterations);
    assert_eq!(a.report, b.report);
    let all = Engine::Falsify(cfg);
    let x = v.validate_all(&policies, &all, &Settings::default()).unwrap();
    let y = v.validate_all(&policies, &all, &Settings::default()).unwrap();
    assert_eq!(reports_json(&x.reports), reports_json(&y.reports));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn accepted_robustness_never_rises(seed in any::<u64>()) {
        let (home, policies) = sound_home();
        let v = Validator::new(&home.cpem, 1.0, 60.0).unwrap();
        // A policy that cannot be violated keeps the search running to max_iters.
        let p = policy(&policies, "G1:washer.on:App18:sound");
        let out = v.falsify(p, &SearchConfig { seed, max_iters: 30, ..Default::default() }).unwrap();
        prop_assert!(out.report.is_none());
        let accepted: Vec<f64> = out.iterations.iter().filter(|i| i.accepted).map(|i| i.robustness).collect();
        prop_assert!(accepted.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(out.simulations, 30);
        for it in &out.iterations {
            prop_assert!(it.point.iter().all(|t| (0.0..=60.0).contains(t)));
        }
    }
}

#[test]
fn candidates_follow_the_issuing_timer_apps() {
    let (home, policies) = sound_home();
    let v = Validator::new(&home.cpem, 1.0, 60.0).unwrap();
    assert_eq!(v.candidates(policy(&policies, "G1:disposal.on:App18:sound")), vec!["App9"]);
    let g2 = v.candidates(policy(&policies, "G2:App18:sound"));
    for app in ["App6", "App7", "App9", "App13"] {
        assert!(g2.iter().any(|a| a == app), "{app} missing from {g2:?}");
    }
}

#[test]
fn empty_home_has_nothing_to_violate() {
    let home = common::with_apps(vec![]).build().unwrap();
    let policies = home.policies().unwrap().instances;
    let v = Validator::new(&home.cpem, 1.0, 60.0).unwrap();
    for engine in [Engine::Grid, Engine::Falsify(SearchConfig::default())] {
        let out = v.validate_all(&policies, &engine, &Settings::default()).unwrap();
        assert!(out.reports.is_empty());
    }
}

#[test]
fn grid_budget_is_enforced() {
    let (home, policies) = sound_home();
    let v = Validator::new(&home.cpem, 1.0, 60.0).unwrap();
    let settings = Settings { max_combinations: 10, ..Settings::default() };
    assert!(matches!(v.grid_test(&policies, &settings), Err(AnalysisError::Budget { .. })));
}

#[test]
fn grid_must_fit_the_horizon() {
    let (home, policies) = sound_home();
    let v = Validator::new(&home.cpem, 1.0, 60.0).unwrap();
    let settings = Settings { grid: "0:30:90".parse().unwrap(), ..Settings::default() };
    assert!(matches!(v.grid_test(&policies, &settings), Err(AnalysisError::BadGrid(_))));
}

#[test]
fn summary_counts_classes() {
    let (home, policies) = sound_home();
    let v = Validator::new(&home.cpem, 1.0, 60.0).unwrap();
    let out = v.validate_all(&policies, &Engine::Grid, &Settings::default()).unwrap();
    let table = out.summary_table();
    for class in ["G1", "G2"] {
        assert!(table.contains(class), "{table}");
    }
    let violated: usize = out.by_class.values().map(|c| c.violated).sum();
    assert_eq!(violated, out.reports.len());
}
