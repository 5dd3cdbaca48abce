#![allow(dead_code)]

use physchan::composition::Cpem;
use physchan::config::{reference_config, AppSpec, HomeConfig};
use physchan::mtl::{Cmp, Formula, Interval, SignalSource, Term};
use physchan::pem::{ActuatorPem, Flow, SensorPem};
use rand::Rng;
use std::collections::BTreeMap;

pub struct Src {
    pub signals: BTreeMap<String, Vec<f64>>,
    pub len: usize,
    pub dt: f64,
}

impl SignalSource for Src {
    fn signal(&self, name: &str) -> Option<&[f64]> {
        self.signals.get(name).map(Vec::as_slice)
    }
    fn len(&self) -> usize {
        self.len
    }
    fn dt(&self) -> f64 {
        self.dt
    }
}

pub const NUMERIC: [&str; 2] = ["a", "b"];
pub const BOOLEAN: &str = "p";

pub fn random_source<R: Rng>(rng: &mut R, len: usize) -> Src {
    let mut signals = BTreeMap::new();
    for s in NUMERIC {
        signals.insert(s.to_string(), (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect());
    }
    signals.insert(BOOLEAN.to_string(), (0..len).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect());
    Src { signals, len, dt: 1.0 }
}

fn random_interval<R: Rng>(rng: &mut R) -> Interval {
    let lo = rng.gen_range(0..3) as f64;
    if rng.gen_bool(0.2) {
        Interval { lo, hi: None }
    } else {
        Interval::new(lo, lo + rng.gen_range(0..4) as f64)
    }
}

pub fn random_formula<R: Rng>(rng: &mut R, depth: usize) -> Formula {
    if depth == 0 || rng.gen_bool(0.25) {
        return match rng.gen_range(0..6) {
            0 => Formula::Bool(BOOLEAN.into()),
            1 => Formula::Atom { lhs: Term::Signal("a".into()), op: Cmp::Gt, rhs: Term::Signal("b".into()) },
            2 => Formula::atom(NUMERIC[rng.gen_range(0..2)], Cmp::Lt, rng.gen_range(-1.5..1.5)),
            3 => Formula::atom(NUMERIC[rng.gen_range(0..2)], Cmp::Ge, rng.gen_range(-1.5..1.5)),
            4 => Formula::atom(NUMERIC[rng.gen_range(0..2)], Cmp::Le, rng.gen_range(-1.5..1.5)),
            _ => Formula::atom(NUMERIC[rng.gen_range(0..2)], Cmp::Gt, rng.gen_range(-1.5..1.5)),
        };
    }
    let d = depth - 1;
    match rng.gen_range(0..8) {
        0 => Formula::not(random_formula(rng, d)),
        1 => Formula::and(random_formula(rng, d), random_formula(rng, d)),
        2 => Formula::or(random_formula(rng, d), random_formula(rng, d)),
        3 => Formula::implies(random_formula(rng, d), random_formula(rng, d)),
        4 => Formula::always(random_interval(rng), random_formula(rng, d)),
        5 => Formula::eventually(random_interval(rng), random_formula(rng, d)),
        6 => Formula::next(random_formula(rng, d)),
        _ => Formula::Until(random_interval(rng), Box::new(random_formula(rng, d)), Box::new(random_formula(rng, d))),
    }
}

/// Samples past the evaluation point a formula reads, at dt = 1 with integer bounds.
pub fn horizon(phi: &Formula) -> usize {
    let span = |i: &Interval| i.hi.unwrap_or(i.lo) as usize;
    match phi {
        Formula::True | Formula::False | Formula::Bool(_) | Formula::Atom { .. } => 0,
        Formula::Not(a) => horizon(a),
        Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => horizon(a).max(horizon(b)),
        Formula::Next(a) => 1 + horizon(a),
        Formula::Always(i, a) | Formula::Eventually(i, a) => span(i) + horizon(a),
        Formula::Until(i, a, b) => span(i) + horizon(a).max(horizon(b)),
    }
}

fn value(t: &Term, src: &Src, i: usize) -> f64 {
    match t {
        Term::Const(c) => *c,
        Term::Signal(s) => src.signals[s][i],
    }
}

/// Boolean satisfaction at sample `i` by direct quantification; unbounded
/// operators range to the last sample where their operand is defined.
pub fn sat(phi: &Formula, src: &Src, i: usize) -> bool {
    let n = src.len;
    match phi {
        Formula::True => true,
        Formula::False => false,
        Formula::Bool(s) => src.signals[s][i] > 0.5,
        Formula::Atom { lhs, op, rhs } => {
            let (a, b) = (value(lhs, src, i), value(rhs, src, i));
            match op {
                Cmp::Lt => a < b,
                Cmp::Le => a <= b,
                Cmp::Gt => a > b,
                Cmp::Ge => a >= b,
                Cmp::Eq => a == b,
            }
        }
        Formula::Not(a) => !sat(a, src, i),
        Formula::And(a, b) => sat(a, src, i) && sat(b, src, i),
        Formula::Or(a, b) => sat(a, src, i) || sat(b, src, i),
        Formula::Implies(a, b) => !sat(a, src, i) || sat(b, src, i),
        Formula::Next(a) => sat(a, src, i + 1),
        Formula::Always(iv, a) | Formula::Eventually(iv, a) => {
            let first = i + iv.lo as usize;
            let last = match iv.hi {
                Some(h) => i + h as usize,
                None => n - 1 - horizon(a),
            };
            let mut it = first..=last;
            if matches!(phi, Formula::Always(..)) {
                it.all(|j| sat(a, src, j))
            } else {
                it.any(|j| sat(a, src, j))
            }
        }
        Formula::Until(iv, a, b) => {
            let last = match iv.hi {
                Some(h) => i + h as usize,
                None => n - 1 - horizon(a).max(horizon(b)),
            };
            (i + iv.lo as usize..=last).any(|j| sat(b, src, j) && (i..j).all(|k| sat(a, src, k)))
        }
    }
}

/// Reference config with its apps replaced by `apps`.
pub fn with_apps(apps: Vec<AppSpec>) -> HomeConfig {
    let mut cfg = reference_config();
    cfg.apps = apps;
    cfg
}

pub fn timer_app(id: &str, commands: &[&str]) -> AppSpec {
    AppSpec {
        id: id.into(),
        description: String::new(),
        activity: None,
        trigger: Some("timer".into()),
        conditions: vec![],
        commands: commands.iter().map(|c| c.to_string()).collect(),
        handlers: vec![],
    }
}

/// Keep only the reference apps with the given ids.
pub fn reference_subset(ids: &[&str]) -> HomeConfig {
    let mut cfg = reference_config();
    cfg.apps.retain(|a| ids.contains(&a.id.as_str()));
    cfg
}

/// One PeM per flow family that has a fittable property, paired with the
/// sensor it is observed through. The oven is moved to 0.5 m so its heat
/// reaches the sensor inside the experiment; smoke has no reference device
/// and gets a synthetic one.
pub fn families(cpem: &Cpem) -> Vec<(ActuatorPem, SensorPem)> {
    let pick = |pem: &str, sensor: &str| (cpem.actuator(pem).unwrap().clone(), cpem.sensor(sensor).unwrap().clone());
    let mut oven = pick("oven_temp", "temp");
    oven.0.distances.insert("temp".into(), 0.5);
    let smoke = ActuatorPem {
        id: "stove_smoke".into(),
        device: "stove".into(),
        command: "stove.on".into(),
        channel: physchan::physics::Channel::Smoke,
        flow: Flow::Smoke { rate: 2.0 },
        distances: [("smoke".to_string(), 1.0)].into(),
        operating_time: Some(30.0),
        labels: Default::default(),
    };
    vec![
        oven,
        pick("heater_temp", "temp"),
        pick("humidifier_hum", "hum"),
        pick("bulb_illum", "illum"),
        pick("disposal_sound", "sound"),
        pick("vacuum_motion", "motion"),
        (smoke, cpem.sensor("smoke").unwrap().clone()),
    ]
}
