//! Intent labels, intent-based policies (G1-G3) and the device-centric
//! policy library (DC1-DC10).

use crate::composition::{ambient, AppRule, CmpOp, CommandKind, Cpem, Predicate, Trigger};
use crate::mtl::{Cmp, Formula, Interval};
use crate::pem::{Flow, Label};
use crate::physics::{Channel, ReadingKind};
use crate::simulation::{signal_actuation, signal_device, signal_influence, signal_mode, signal_reading, TraceSet};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("label override for ({command}, {app}) does not match any influence of that command on the app's trigger sensors")]
    UnknownOverride { command: String, app: String },
    #[error("policy {id}: {message}")]
    Invalid { id: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ActivityMatch,
    SensorClassRule,
    UserOverride,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelEntry {
    pub command: String,
    pub app: String,
    pub sensors: Vec<String>,
    pub label: Label,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelAssignment {
    pub entries: Vec<LabelEntry>,
}

impl LabelAssignment {
    pub fn get(&self, command: &str, app: &str) -> Option<Label> {
        self.entries.iter().find(|e| e.command == command && e.app == app).map(|e| e.label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelOverride {
    pub command: String,
    pub app: String,
    pub label: Label,
}

/// Label every (command, app) pair where the command influences a sensor the app triggers on.
pub fn generate_labels(
    cpem: &Cpem,
    activity_map: &BTreeMap<String, BTreeSet<String>>,
    overrides: &[LabelOverride],
) -> Result<LabelAssignment, PolicyError> {
    let mut map: BTreeMap<(String, String), LabelEntry> = BTreeMap::new();
    for app in &cpem.apps {
        for sensor in app.trigger_sensors() {
            let Some(s) = cpem.sensor(sensor) else { continue };
            for pem in cpem.inbound(sensor) {
                let key = (pem.command.clone(), app.id.clone());
                if let Some(e) = map.get_mut(&key) {
                    if !e.sensors.iter().any(|x| x == sensor) {
                        e.sensors.push(sensor.to_string());
                    }
                    continue;
                }
                let activity = app.activity.as_ref().and_then(|a| activity_map.get(a));
                let (label, provenance) = match activity {
                    Some(cmds) => (if cmds.contains(&pem.command) { Label::Int } else { Label::UnInt }, Provenance::ActivityMatch),
                    None if matches!(s.channel, Channel::Motion | Channel::Sound) => (Label::UnInt, Provenance::SensorClassRule),
                    None => (Label::Int, Provenance::SensorClassRule),
                };
                map.insert(key, LabelEntry { command: pem.command.clone(), app: app.id.clone(), sensors: vec![sensor.to_string()], label, provenance });
            }
        }
    }
    for o in overrides {
        let e = map
            .get_mut(&(o.command.clone(), o.app.clone()))
            .ok_or_else(|| PolicyError::UnknownOverride { command: o.command.clone(), app: o.app.clone() })?;
        e.label = o.label;
        e.provenance = Provenance::UserOverride;
    }
    Ok(LabelAssignment { entries: map.into_values().collect() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PolicyClass {
    G1,
    G2,
    G3,
    DC(u8),
}

impl PolicyClass {
    pub fn name(self) -> String {
        match self {
            PolicyClass::DC(n) => format!("DC{n}"),
            c => format!("{c:?}"),
        }
    }

    pub fn is_intent(self) -> bool {
        !matches!(self, PolicyClass::DC(_))
    }
}

/// The ambient value a sensor would see if only `commands` had acted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub name: String,
    pub sensor: String,
    pub commands: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Subjects {
    pub commands: Vec<String>,
    pub sensors: Vec<String>,
    pub apps: Vec<String>,
    pub devices: Vec<String>,
    pub modes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyInstance {
    pub id: String,
    pub class: PolicyClass,
    pub formula: Formula,
    pub subjects: Subjects,
    #[serde(default)]
    pub derived: Vec<Derived>,
}

impl PolicyInstance {
    /// Trace signals needed to evaluate this policy, derived inputs included.
    pub fn required_signals(&self, cpem: &Cpem) -> BTreeSet<String> {
        let derived: BTreeSet<&str> = self.derived.iter().map(|d| d.name.as_str()).collect();
        let mut out: BTreeSet<String> = self.formula.signals().into_iter().filter(|s| !derived.contains(s.as_str())).collect();
        for d in &self.derived {
            out.extend(derived_inputs(cpem, d));
        }
        out
    }

    /// Compute the derived signals of this policy from a trace.
    pub fn derive(&self, cpem: &Cpem, traces: &TraceSet) -> BTreeMap<String, Vec<f64>> {
        self.derived.iter().map(|d| (d.name.clone(), derive_signal(cpem, d, traces))).collect()
    }
}

fn dep_temp_sensor<'c>(cpem: &'c Cpem, sensor: &str) -> Option<&'c str> {
    cpem.sensor(sensor).and_then(|s| s.depends_on.as_deref())
}

fn derived_inputs(cpem: &Cpem, d: &Derived) -> Vec<String> {
    let mut out = Vec::new();
    for p in cpem.inbound(&d.sensor) {
        if d.commands.contains(&p.command) {
            out.push(signal_influence(&p.id, &d.sensor));
        }
    }
    if let Some(ts) = dep_temp_sensor(cpem, &d.sensor) {
        for p in cpem.inbound(ts) {
            if d.commands.contains(&p.command) {
                out.push(signal_influence(&p.id, ts));
            }
        }
    }
    out
}

/// Masked ambient: raw value for boolean sensors, quantized reading for numeric ones.
pub fn derive_signal(cpem: &Cpem, d: &Derived, traces: &TraceSet) -> Vec<f64> {
    let env = &cpem.model.env;
    let sensor = cpem.sensor(&d.sensor).expect("derived signal references a known sensor");
    let fetch = |p: &str, s: &str| traces.signal(&signal_influence(p, s)).unwrap_or_else(|| panic!("trace lacks influence {p} -> {s}"));
    let own: Vec<&[f64]> = cpem
        .inbound(&d.sensor)
        .into_iter()
        .filter(|p| d.commands.contains(&p.command) && !matches!(p.flow, Flow::Dependency { .. }))
        .map(|p| fetch(&p.id, &d.sensor))
        .collect();
    let temp: Vec<&[f64]> = match dep_temp_sensor(cpem, &d.sensor) {
        Some(ts) => cpem.inbound(ts).into_iter().filter(|p| d.commands.contains(&p.command)).map(|p| fetch(&p.id, ts)).collect(),
        None => Vec::new(),
    };
    let baseline = env.baselines.of(sensor.channel);
    let mut buf = Vec::with_capacity(own.len());
    (0..traces.len)
        .map(|k| {
            buf.clear();
            buf.extend(own.iter().map(|s| s[k]));
            let dtemp: f64 = temp.iter().map(|s| s[k]).sum();
            let amb = ambient(sensor.channel, env, &buf, dtemp);
            match sensor.output_kind {
                ReadingKind::Numeric => sensor.sensor_output(amb, baseline).value(),
                ReadingKind::Boolean => amb,
            }
        })
        .collect()
}

fn tag(commands: &[String]) -> String {
    commands.iter().map(|c| c.replace('.', "_")).collect::<Vec<_>>().join("__")
}

/// Atomic "this ambient signal does not trigger the handler" formula, or
/// `None` when the predicate already holds at baseline.
fn quiet(cpem: &Cpem, sensor: &str, pred: &Predicate, signal: &str) -> Option<Formula> {
    let s = cpem.sensor(sensor)?;
    let env = &cpem.model.env;
    let base_amb = ambient(s.channel, env, &[], 0.0);
    let base_reading = s.sensor_output(base_amb, env.baselines.of(s.channel)).value();
    if pred.holds(base_reading) {
        return None;
    }
    Some(match (s.channel, pred) {
        (Channel::Motion, _) => Formula::not(Formula::Bool(signal.to_string())),
        (_, Predicate::Detected) => Formula::atom(signal, Cmp::Le, s.sensitivity),
        (_, Predicate::Undetected) => Formula::atom(signal, Cmp::Ge, s.sensitivity),
        (_, Predicate::Compare { op: CmpOp::Gt | CmpOp::Ge, value }) => Formula::atom(signal, Cmp::Le, *value),
        (_, Predicate::Compare { op: CmpOp::Lt | CmpOp::Le, value }) => Formula::atom(signal, Cmp::Ge, *value),
        (_, Predicate::Compare { op: CmpOp::Eq, value }) => Formula::not(Formula::atom(signal, Cmp::Eq, *value)),
    })
}

/// Strict variant used by G3's implication (`<` where G1/G2 use `<=`).
fn quiet_strict(f: Formula) -> Formula {
    match f {
        Formula::Atom { lhs, op: Cmp::Le, rhs } => Formula::Atom { lhs, op: Cmp::Lt, rhs },
        Formula::Atom { lhs, op: Cmp::Ge, rhs } => Formula::Atom { lhs, op: Cmp::Gt, rhs },
        other => other,
    }
}

fn predicates_on<'a>(app: &'a AppRule, sensor: &str) -> Vec<&'a Predicate> {
    app.handlers
        .iter()
        .filter_map(|h| match &h.trigger {
            Trigger::Sensor { sensor: s, predicate } if s == sensor => Some(predicate),
            _ => None,
        })
        .collect()
}

fn all_of(mut fs: Vec<Formula>) -> Option<Formula> {
    if fs.is_empty() {
        return None;
    }
    let first = fs.remove(0);
    Some(fs.into_iter().fold(first, Formula::and))
}

fn always(f: Formula) -> Formula {
    Formula::always(Interval::UNBOUNDED, f)
}

/// G1, G2 and G3 instances for every (app, trigger sensor).
pub fn instantiate_intent_policies(cpem: &Cpem, labels: &LabelAssignment) -> Vec<PolicyInstance> {
    let mut out = Vec::new();
    for app in &cpem.apps {
        let issued: BTreeSet<&str> = app.commands().collect();
        for sensor in app.trigger_sensors() {
            let preds = predicates_on(app, sensor);
            let mut int = BTreeSet::new();
            let mut unint = BTreeSet::new();
            for p in cpem.inbound(sensor) {
                if issued.contains(p.command.as_str()) {
                    continue;
                }
                match labels.get(&p.command, &app.id) {
                    Some(Label::Int) => int.insert(p.command.clone()),
                    Some(Label::UnInt) => unint.insert(p.command.clone()),
                    None => false,
                };
            }
            let quiet_all = |signal: &str| all_of(preds.iter().filter_map(|p| quiet(cpem, sensor, p, signal)).collect());
            let fires = |signal: &str| -> Option<Formula> { quiet_all(signal).map(Formula::not) };

            let mut solo = BTreeMap::new();
            for c in &unint {
                let d = Derived { name: format!("amb.{sensor}.{}", tag(std::slice::from_ref(c))), sensor: sensor.to_string(), commands: vec![c.clone()] };
                let Some(body) = quiet_all(&d.name) else { continue };
                out.push(PolicyInstance {
                    id: format!("G1:{c}:{}:{sensor}", app.id),
                    class: PolicyClass::G1,
                    formula: always(body),
                    subjects: Subjects { commands: vec![c.clone()], sensors: vec![sensor.to_string()], apps: vec![app.id.clone()], ..Default::default() },
                    derived: vec![d.clone()],
                });
                solo.insert(c.clone(), d);
            }

            if unint.len() >= 2 {
                let cmds: Vec<String> = unint.iter().cloned().collect();
                let agg = Derived { name: format!("amb.{}.{sensor}.unint", app.id), sensor: sensor.to_string(), commands: cmds.clone() };
                if let Some(q) = quiet_all(&agg.name) {
                    // Instants where one source already triggers on its own belong to G1.
                    let mut parts = vec![q];
                    parts.extend(solo.values().filter_map(|d| fires(&d.name)));
                    let mut derived = vec![agg];
                    derived.extend(solo.values().cloned());
                    out.push(PolicyInstance {
                        id: format!("G2:{}:{sensor}", app.id),
                        class: PolicyClass::G2,
                        formula: always(Formula::any(parts)),
                        subjects: Subjects { commands: cmds, sensors: vec![sensor.to_string()], apps: vec![app.id.clone()], ..Default::default() },
                        derived,
                    });
                }
            }

            if !int.is_empty() && !unint.is_empty() {
                let icmds: Vec<String> = int.iter().cloned().collect();
                let all: Vec<String> = int.union(&unint).cloned().collect();
                let di = Derived { name: format!("amb.{}.{sensor}.int", app.id), sensor: sensor.to_string(), commands: icmds };
                let dall = Derived { name: format!("amb.{}.{sensor}.all", app.id), sensor: sensor.to_string(), commands: all.clone() };
                let strict = |name: &str| all_of(preds.iter().filter_map(|p| quiet(cpem, sensor, p, name)).map(quiet_strict).collect());
                if let (Some(a), Some(b)) = (strict(&di.name), strict(&dall.name)) {
                    out.push(PolicyInstance {
                        id: format!("G3:{}:{sensor}", app.id),
                        class: PolicyClass::G3,
                        formula: Formula::implies(always(a), always(b)),
                        subjects: Subjects { commands: all, sensors: vec![sensor.to_string()], apps: vec![app.id.clone()], ..Default::default() },
                        derived: vec![di, dall],
                    });
                }
            }
        }
    }
    out
}

/// Device/mode bindings and time bounds for the device-centric library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcParams {
    /// Policy ids to instantiate ("DC1".."DC10"); empty means all.
    #[serde(default)]
    pub enabled: BTreeSet<String>,
    /// Time bound per policy id, seconds.
    #[serde(default)]
    pub t: BTreeMap<String, f64>,
    /// Role → device (sprinkler, alarm, window, door, light, tv, heater, ac),
    /// mode (away, sleep) or sensor (smoke).
    #[serde(default)]
    pub bindings: BTreeMap<String, String>,
}

impl Default for DcParams {
    fn default() -> Self {
        DcParams { enabled: BTreeSet::new(), t: BTreeMap::new(), bindings: BTreeMap::new() }
    }
}

pub const DC_DEFAULT_T: [(&str, f64); 4] = [("DC1", 10.0), ("DC3", 60.0), ("DC5", 2.0), ("DC6", 300.0)];

impl DcParams {
    fn t_of(&self, id: &str) -> f64 {
        self.t.get(id).copied().unwrap_or_else(|| DC_DEFAULT_T.iter().find(|(k, _)| *k == id).map_or(60.0, |(_, v)| *v))
    }

    fn wants(&self, id: &str) -> bool {
        self.enabled.is_empty() || self.enabled.contains(id)
    }
}

/// Result of instantiating a library: the instances plus skip warnings.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Instantiated {
    pub instances: Vec<PolicyInstance>,
    pub warnings: Vec<String>,
}

pub fn device_centric_library(cpem: &Cpem, params: &DcParams) -> Result<Instantiated, PolicyError> {
    let mut out = Instantiated::default();
    for (id, t) in &params.t {
        if !(*t > 0.0) {
            return Err(PolicyError::Invalid { id: id.clone(), message: format!("time bound must be > 0 (got {t})") });
        }
    }
    let bind = |role: &str| params.bindings.get(role).cloned().unwrap_or_else(|| role.to_string());
    let device = |role: &str| -> Result<String, String> {
        let d = bind(role);
        if cpem.device(&d).is_some() {
            Ok(signal_device(&d))
        } else {
            Err(format!("no device bound to role '{role}'"))
        }
    };
    let mode = |role: &str| -> Result<String, String> {
        let m = bind(role);
        if cpem.model.modes.contains(&m) {
            Ok(signal_mode(&m))
        } else {
            Err(format!("no mode bound to role '{role}'"))
        }
    };
    let smoke = || -> Result<String, String> {
        let s = bind("smoke");
        match cpem.sensor(&s) {
            Some(sp) => Ok(signal_reading(&sp.id, sp.output_kind)),
            None => Err("no smoke sensor bound to role 'smoke'".to_string()),
        }
    };
    let b = |s: &String| Formula::Bool(s.clone());
    let off = |s: &String| Formula::not(Formula::Bool(s.clone()));
    let within = |t: f64, f: Formula| Formula::eventually(Interval::new(0.0, t), f);

    type Build<'x> = Box<dyn Fn() -> Result<(Formula, Subjects), String> + 'x>;
    let simple: Vec<(&str, Build)> = vec![
        ("DC1", Box::new(|| {
            let (s, sp) = (smoke()?, device("sprinkler")?);
            Ok((always(Formula::implies(b(&s), within(params.t_of("DC1"), b(&sp)))), subj(&[&bind("sprinkler")], &[], &[&bind("smoke")])))
        })),
        ("DC2", Box::new(|| {
            let (m, w) = (mode("away")?, device("window")?);
            Ok((always(Formula::implies(b(&m), off(&w))), subj(&[&bind("window")], &[&bind("away")], &[])))
        })),
        ("DC4", Box::new(|| {
            let (h, w) = (device("heater")?, device("window")?);
            Ok((always(Formula::implies(b(&h), off(&w))), subj(&[&bind("heater"), &bind("window")], &[], &[])))
        })),
        ("DC5", Box::new(|| {
            let (s, a) = (smoke()?, device("alarm")?);
            Ok((always(Formula::implies(b(&s), within(params.t_of("DC5"), b(&a)))), subj(&[&bind("alarm")], &[], &[&bind("smoke")])))
        })),
        ("DC6", Box::new(|| {
            let d = device("door")?;
            Ok((always(Formula::implies(b(&d), within(params.t_of("DC6"), off(&d)))), subj(&[&bind("door")], &[], &[])))
        })),
        ("DC7", Box::new(|| {
            let (a, w) = (device("ac")?, device("window")?);
            Ok((always(Formula::implies(b(&a), off(&w))), subj(&[&bind("ac"), &bind("window")], &[], &[])))
        })),
        ("DC8", Box::new(|| {
            let (m, l) = (mode("sleep")?, device("light")?);
            Ok((always(Formula::implies(b(&m), off(&l))), subj(&[&bind("light")], &[&bind("sleep")], &[])))
        })),
        ("DC9", Box::new(|| {
            let (m, d, l) = (mode("away")?, device("door")?, device("light")?);
            Ok((always(Formula::implies(b(&m), Formula::and(off(&d), off(&l)))), subj(&[&bind("door"), &bind("light")], &[&bind("away")], &[])))
        })),
        ("DC10", Box::new(|| {
            let (a, s, tv) = (mode("away")?, mode("sleep")?, device("tv")?);
            Ok((always(Formula::implies(Formula::or(b(&a), b(&s)), off(&tv))), subj(&[&bind("tv")], &[&bind("away"), &bind("sleep")], &[])))
        })),
    ];

    for n in 1..=10u8 {
        let id = format!("DC{n}");
        if !params.wants(&id) {
            continue;
        }
        if n == 3 {
            let t = params.t_of("DC3");
            for d in toggled_devices(cpem) {
                let (on, offp) = (signal_actuation(&d, true), signal_actuation(&d, false));
                let inner = Formula::and(b(&offp), Formula::next(within(t, b(&on))));
                let f = always(Formula::not(Formula::and(b(&on), Formula::next(within(t, inner)))));
                out.instances.push(PolicyInstance { id: format!("DC3:{d}"), class: PolicyClass::DC(3), formula: f, subjects: subj(&[&d], &[], &[]), derived: vec![] });
            }
            continue;
        }
        let build = &simple.iter().find(|(k, _)| *k == id).expect("library covers DC1-DC10").1;
        match build() {
            Ok((formula, subjects)) => out.instances.push(PolicyInstance { id: id.clone(), class: PolicyClass::DC(n), formula, subjects, derived: vec![] }),
            Err(w) => {
                log::warn!("{id} skipped: {w}");
                out.warnings.push(format!("{id} skipped: {w}"));
            }
        }
    }
    Ok(out)
}

fn subj(devices: &[&str], modes: &[&str], sensors: &[&str]) -> Subjects {
    Subjects {
        devices: devices.iter().map(|s| s.to_string()).collect(),
        modes: modes.iter().map(|s| s.to_string()).collect(),
        sensors: sensors.iter().map(|s| s.to_string()).collect(),
        ..Default::default()
    }
}

/// Devices that apps both switch on and switch off.
fn toggled_devices(cpem: &Cpem) -> Vec<String> {
    let mut on = BTreeSet::new();
    let mut off = BTreeSet::new();
    for app in &cpem.apps {
        for c in app.commands() {
            match cpem.command(c).map(|c| &c.kind) {
                Some(CommandKind::DeviceOn(d)) => {
                    on.insert(d.clone());
                }
                Some(CommandKind::DeviceOff(d)) => {
                    off.insert(d.clone());
                }
                _ => {}
            }
        }
    }
    on.intersection(&off).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strict_variant() {
        let f = quiet_strict(Formula::atom("x", Cmp::Le, 3.0));
        assert_eq!(f, Formula::atom("x", Cmp::Lt, 3.0));
        let g = quiet_strict(Formula::Bool("m".into()));
        assert_eq!(g, Formula::Bool("m".into()));
    }

    #[test]
    fn tags_are_identifiers() {
        assert_eq!(tag(&["ac.on".to_string(), "tv.on".to_string()]), "ac_on__tv_on");
    }
}
