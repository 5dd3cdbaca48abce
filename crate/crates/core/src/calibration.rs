//! Fitting a home's models to measurements: trace closeness, device
//! property search, channel pruning and RSSI ranging.

use crate::composition::{ambient, CompositionError, Cpem, Edge};
use crate::pem::{ActuatorPem, Environment, Flow, SensorPem};
use crate::physics::{Channel, DeviceProperty, PhysicsError, ReadingKind};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("empty trace")]
    EmptyTrace,
    #[error("invalid trace: {0}")]
    BadTrace(String),
    #[error("invalid search bounds [{lo}, {hi}]")]
    BadBounds { lo: f64, hi: f64 },
    #[error("PeM {0} has no fittable device property")]
    NoProperty(String),
    #[error("PeM {pem} has no distance to sensor {sensor}")]
    UnknownSensor { pem: String, sensor: String },
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Composition(#[from] CompositionError),
}

type Result<T> = std::result::Result<T, CalibrationError>;

/// A measured (or synthetic) series from one actuator/sensor experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedTrace {
    /// Seconds, strictly increasing.
    pub t: Vec<f64>,
    pub v: Vec<f64>,
    #[serde(default)]
    pub actuator: String,
    #[serde(default)]
    pub sensor: String,
    #[serde(default)]
    pub baseline: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct CsvRow {
    t_seconds: f64,
    value: f64,
}

impl ObservedTrace {
    pub fn new(t: Vec<f64>, v: Vec<f64>) -> Result<ObservedTrace> {
        let tr = ObservedTrace { t, v, actuator: String::new(), sensor: String::new(), baseline: 0.0 };
        tr.check()?;
        Ok(tr)
    }

    /// Samples at `0, dt, 2dt, ...`.
    pub fn uniform(dt: f64, v: Vec<f64>) -> Result<ObservedTrace> {
        let t = (0..v.len()).map(|i| i as f64 * dt).collect();
        ObservedTrace::new(t, v)
    }

    pub fn with_meta(mut self, actuator: &str, sensor: &str, baseline: f64) -> ObservedTrace {
        self.actuator = actuator.to_string();
        self.sensor = sensor.to_string();
        self.baseline = baseline;
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.t.is_empty() {
            return Err(CalibrationError::EmptyTrace);
        }
        if self.t.len() != self.v.len() {
            return Err(CalibrationError::BadTrace(format!("{} times but {} values", self.t.len(), self.v.len())));
        }
        if let Some(w) = self.t.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(CalibrationError::BadTrace(format!("time not strictly increasing at sample {}", w + 1)));
        }
        if let Some(i) = self.v.iter().chain(&self.t).position(|x| !x.is_finite()) {
            return Err(CalibrationError::BadTrace(format!("non-finite entry at index {i}")));
        }
        Ok(())
    }

    /// Reads `t_seconds,value` rows.
    pub fn from_csv<R: Read>(r: R) -> Result<ObservedTrace> {
        let mut rd = csv::Reader::from_reader(r);
        let (mut t, mut v) = (Vec::new(), Vec::new());
        for row in rd.deserialize() {
            let row: CsvRow = row?;
            t.push(row.t_seconds);
            v.push(row.value);
        }
        ObservedTrace::new(t, v)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for (&t, &v) in self.t.iter().zip(&self.v) {
            w.serialize(CsvRow { t_seconds: t, value: v })?;
        }
        let bytes = w.into_inner().map_err(|e| CalibrationError::BadTrace(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.v.iter().sum::<f64>() / self.v.len() as f64
    }
}

/// Smallest ε for which every sample of either trace within `[0, horizon]`
/// has a partner sample in the other trace within `tau` seconds and ε units.
/// Infinite when some sample has no partner at all.
pub fn tau_eps_closeness(x: &ObservedTrace, y: &ObservedTrace, tau: f64, horizon: f64) -> Result<f64> {
    x.check()?;
    y.check()?;
    if !(tau >= 0.0) {
        return Err(CalibrationError::BadTrace(format!("tau must be >= 0 (got {tau})")));
    }
    Ok(one_sided(x, y, tau, horizon).max(one_sided(y, x, tau, horizon)))
}

fn one_sided(x: &ObservedTrace, y: &ObservedTrace, tau: f64, horizon: f64) -> f64 {
    let end = y.t.partition_point(|&s| s <= horizon);
    let mut worst: f64 = 0.0;
    for (&t, &v) in x.t.iter().zip(&x.v) {
        if t > horizon {
            break;
        }
        let lo = y.t[..end].partition_point(|&s| s < t - tau - 1e-9);
        let hi = y.t[..end].partition_point(|&s| s <= t + tau + 1e-9);
        let best = y.v[lo..hi].iter().map(|&w| (v - w).abs()).fold(f64::INFINITY, f64::min);
        worst = worst.max(best);
    }
    worst
}

/// Channel value at `sensor` with `pem` switched on at t = 0, sampled at `times`.
///
/// Motion PeMs return the source's distance to the sensor in meters, the
/// observable a ranging experiment records.
pub fn pem_trace(pem: &ActuatorPem, sensor: &SensorPem, env: &Environment, times: &[f64]) -> Result<Vec<f64>> {
    let distance = *pem
        .distances
        .get(&sensor.id)
        .ok_or_else(|| CalibrationError::UnknownSensor { pem: pem.id.clone(), sensor: sensor.id.clone() })?;
    if matches!(pem.flow, Flow::Dependency { .. }) {
        return Err(CalibrationError::NoProperty(pem.id.clone()));
    }
    let last = times.iter().copied().fold(0.0, f64::max).ceil() as usize;
    let mut st = pem.initial_state(env)?;
    pem.invoke(&mut st, 0.0);
    let mut series = Vec::with_capacity(last + 1);
    for k in 0..=last {
        let t = k as f64;
        if k > 0 {
            pem.advance(&mut st, env, 1.0)?;
        }
        if st.expires_at.is_some_and(|e| e <= t + 1e-9) {
            pem.expire(&mut st);
        }
        let v = match pem.flow {
            Flow::Motion { speed, start_distance } => {
                if st.on {
                    (start_distance - speed * t / 60.0).max(0.0)
                } else {
                    start_distance
                }
            }
            _ => {
                let d = pem.output_at(&st, distance, t, sensor.sensitivity, sensor.min_speed);
                ambient(sensor.channel, env, &[d], 0.0)
            }
        };
        series.push(v);
    }
    Ok(times.iter().map(|&t| series[(t.max(0.0).round() as usize).min(last)]).collect())
}

/// Default search interval for a property family.
pub fn default_bounds(p: DeviceProperty) -> (f64, f64) {
    match p {
        DeviceProperty::SoundLevel(_) => (20.0, 100.0),
        DeviceProperty::Lumens(_) => (0.0, 5000.0),
        DeviceProperty::SurfaceTemp(_) => (70.0, 400.0),
        DeviceProperty::HvacRate(_) => (-5.0, 5.0),
        DeviceProperty::VaporRate(_) => (-20.0, 20.0),
        DeviceProperty::Speed(_) => (0.0, 10.0),
        DeviceProperty::SmokeRate(_) => (0.0, 100.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub property: DeviceProperty,
    /// Deviation score at the fitted value.
    pub epsilon: f64,
    pub evaluations: usize,
    /// The observation does not constrain the parameter (flat objective, or
    /// the baseline explains it as well as the device does).
    pub degenerate: bool,
}

/// Ternary search for the device property minimising the (τ,ε) deviation score.
pub fn fit_device_property(
    pem: &ActuatorPem,
    sensor: &SensorPem,
    env: &Environment,
    observed: &ObservedTrace,
    bounds: (f64, f64),
    tau: f64,
    tol: f64,
) -> Result<FitResult> {
    observed.check()?;
    let (mut lo, mut hi) = bounds;
    if !(lo < hi) || !(tol > 0.0) {
        return Err(CalibrationError::BadBounds { lo, hi });
    }
    let prop = pem.flow.property().ok_or_else(|| CalibrationError::NoProperty(pem.id.clone()))?;
    let horizon = *observed.t.last().expect("checked non-empty");
    let mut evaluations = 0;
    let mut score = |theta: f64| -> Result<f64> {
        evaluations += 1;
        let candidate = ActuatorPem { flow: pem.flow.with_property(theta), ..pem.clone() };
        let model = ObservedTrace { t: observed.t.clone(), v: pem_trace(&candidate, sensor, env, &observed.t)?, ..observed.clone() };
        tau_eps_closeness(&model, observed, tau, horizon)
    };

    let (f_lo, f_hi, f_mid) = (score(lo)?, score(hi)?, score(0.5 * (lo + hi))?);
    if (f_lo - f_mid).abs() < 1e-12 && (f_hi - f_mid).abs() < 1e-12 {
        log::warn!("{}: deviation score is flat over [{lo}, {hi}], returning the midpoint", pem.id);
        return Ok(FitResult { property: prop.with_value(0.5 * (lo + hi)), epsilon: f_mid, evaluations, degenerate: true });
    }
    while hi - lo >= tol {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if score(m1)? > score(m2)? {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    let theta = 0.5 * (lo + hi);
    let epsilon = score(theta)?;

    let flat_baseline = ObservedTrace { v: vec![baseline_observable(pem, sensor, env); observed.len()], ..observed.clone() };
    let eps_none = tau_eps_closeness(&flat_baseline, observed, tau, horizon)?;
    let degenerate = eps_none <= epsilon + 1e-9;
    if degenerate {
        log::warn!("{}: observation is explained by the baseline (eps {eps_none:.4} vs fitted {epsilon:.4})", pem.id);
    }
    Ok(FitResult { property: prop.with_value(theta), epsilon, evaluations, degenerate })
}

fn baseline_observable(pem: &ActuatorPem, sensor: &SensorPem, env: &Environment) -> f64 {
    match pem.flow {
        Flow::Motion { start_distance, .. } => start_distance,
        _ => ambient(sensor.channel, env, &[], 0.0),
    }
}

/// Two-sided p-value of Welch's unequal-variance t-test.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> f64 {
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let var = if x.len() > 1 { x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        (n, m, var)
    };
    if a.is_empty() || b.is_empty() {
        return 1.0;
    }
    let (na, ma, va) = stats(a);
    let (nb, mb, vb) = stats(b);
    let se2 = va / na + vb / nb;
    if se2 <= 0.0 {
        return if (ma - mb).abs() < 1e-12 { 1.0 } else { 0.0 };
    }
    let t = (ma - mb) / se2.sqrt();
    let denom = (va / na).powi(2) / (na - 1.0).max(1.0) + (vb / nb).powi(2) / (nb - 1.0).max(1.0);
    let df = (se2 * se2 / denom).max(1.0);
    let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub alpha: f64,
    /// Minimum effect size per channel; numeric sensors fall back to their
    /// sensitivity when absent.
    pub floors: BTreeMap<Channel, f64>,
}

impl Default for PruneConfig {
    fn default() -> Self {
        let floors = [(Channel::Sound, 3.0), (Channel::Illuminance, 5.0), (Channel::Smoke, 1.0), (Channel::Motion, 0.5)].into();
        PruneConfig { alpha: 0.01, floors }
    }
}

impl PruneConfig {
    pub fn floor(&self, sensor: &SensorPem) -> f64 {
        match sensor.output_kind {
            ReadingKind::Numeric => sensor.sensitivity,
            ReadingKind::Boolean => self.floors.get(&sensor.channel).copied().unwrap_or(sensor.sensitivity),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneDecision {
    pub pem: String,
    pub sensor: String,
    pub kept: bool,
    pub p_value: Option<f64>,
    pub effect: Option<f64>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneReport {
    pub cpem: Cpem,
    pub decisions: Vec<PruneDecision>,
    pub warnings: Vec<String>,
}

/// Drop influence edges whose experiment is indistinguishable from noise.
///
/// `experiments` is keyed by (PeM id, sensor id) and holds the on-period
/// samples; `noise` holds idle traces, matched to sensors by their `sensor` field.
pub fn prune_channels(
    cpem: &Cpem,
    experiments: &BTreeMap<(String, String), ObservedTrace>,
    noise: &[ObservedTrace],
    cfg: &PruneConfig,
) -> Result<PruneReport> {
    let mut decisions = Vec::new();
    let mut warnings = Vec::new();
    let mut drop: BTreeSet<(String, String)> = BTreeSet::new();

    for e in &cpem.edges {
        let Edge::PhysInfluence { pem, sensor } = e else { continue };
        let s = cpem.sensor(sensor).expect("edge endpoints exist");
        let key = (pem.clone(), sensor.clone());
        let Some(exp) = experiments.get(&key) else {
            warnings.push(format!("no experiment for {pem} -> {sensor}; edge kept"));
            decisions.push(PruneDecision { pem: pem.clone(), sensor: sensor.clone(), kept: true, p_value: None, effect: None, reason: "no experiment".into() });
            continue;
        };
        exp.check()?;
        let idle: Vec<f64> = noise.iter().filter(|n| &n.sensor == sensor).flat_map(|n| n.v.iter().copied()).collect();
        if idle.is_empty() {
            warnings.push(format!("no noise trace for sensor {sensor}; edge {pem} -> {sensor} kept"));
            decisions.push(PruneDecision { pem: pem.clone(), sensor: sensor.clone(), kept: true, p_value: None, effect: None, reason: "no noise trace".into() });
            continue;
        }
        let p = welch_t_test(&exp.v, &idle);
        let effect = (exp.mean() - idle.iter().sum::<f64>() / idle.len() as f64).abs();
        let floor = cfg.floor(s);
        let (kept, reason) = if p >= cfg.alpha {
            (false, format!("indistinguishable from noise (p = {p:.3})"))
        } else if effect < floor {
            (false, format!("effect {effect:.3} below floor {floor}"))
        } else {
            (true, format!("p = {p:.2e}, effect {effect:.3}"))
        };
        if !kept {
            drop.insert(key);
        }
        decisions.push(PruneDecision { pem: pem.clone(), sensor: sensor.clone(), kept, p_value: Some(p), effect: Some(effect), reason });
    }

    let mut model = cpem.model.clone();
    for a in &mut model.actuators {
        a.distances.retain(|s, _| !drop.contains(&(a.id.clone(), s.clone())));
    }
    // A humidity dependency needs its temperature source to survive.
    loop {
        let alive: BTreeSet<String> = model.actuators.iter().filter(|a| !a.distances.is_empty()).map(|a| a.id.clone()).collect();
        let before = model.actuators.len();
        model.actuators.retain(|a| {
            if a.distances.is_empty() {
                return false;
            }
            match &a.flow {
                Flow::Dependency { source } => alive.contains(source),
                _ => true,
            }
        });
        if model.actuators.len() == before {
            break;
        }
    }
    let pruned = cpem.recompose(model)?;
    Ok(PruneReport { cpem: pruned, decisions, warnings })
}

/// Log-distance path-loss ranging: meters from a received signal strength.
pub fn estimate_distance(rssi: f64, p0: f64, n: f64) -> f64 {
    10f64.powf((p0 - rssi) / (10.0 * n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn step(at: f64) -> ObservedTrace {
        ObservedTrace::uniform(1.0, (0..300).map(|i| if i as f64 >= at { 1.0 } else { 0.0 }).collect()).unwrap()
    }

    #[test]
    fn closeness_examples() {
        let x = step(60.0);
        assert_eq!(tau_eps_closeness(&x, &x, 0.0, 299.0).unwrap(), 0.0);
        let y = step(120.0);
        assert_eq!(tau_eps_closeness(&x, &y, 60.0, 299.0).unwrap(), 0.0);
        assert_eq!(tau_eps_closeness(&x, &y, 0.0, 299.0).unwrap(), 1.0);
        let a = ObservedTrace::uniform(1.0, vec![70.0; 50]).unwrap();
        let b = ObservedTrace::uniform(1.0, vec![71.1; 50]).unwrap();
        for tau in [0.0, 5.0, 100.0] {
            assert_abs_diff_eq!(tau_eps_closeness(&a, &b, tau, 49.0).unwrap(), 1.1, epsilon = 1e-12);
        }
    }

    #[test]
    fn distance_closed_form() {
        assert_eq!(estimate_distance(-40.0, -40.0, 2.5), 1.0);
        assert_abs_diff_eq!(estimate_distance(-52.0, -40.0, 2.0), 3.981, epsilon = 1e-3);
    }

    #[test]
    fn welch_identical_samples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!(welch_t_test(&a, &a) > 0.99);
        assert!(welch_t_test(&[5.0; 10], &[5.0; 10]) == 1.0);
        assert!(welch_t_test(&[10.0, 10.1, 9.9, 10.0], &[0.0, 0.1, -0.1, 0.0]) < 1e-6);
    }

    #[test]
    fn csv_round_trip() {
        let t = ObservedTrace::new(vec![0.0, 1.5, 3.0], vec![70.0, 70.5, 71.0]).unwrap();
        let back = ObservedTrace::from_csv(t.to_csv().unwrap().as_bytes()).unwrap();
        assert_eq!(back.v, t.v);
        assert!(ObservedTrace::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
    }
}
