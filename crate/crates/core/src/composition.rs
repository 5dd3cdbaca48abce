//! App rules and the composite graph (CPeM) joining actuator PeMs, sensor
//! PeMs and apps through influence, trigger, software, aggregation and
//! dependency edges.

use crate::pem::{ActuatorPem, Environment, Flow, SensorPem};
use crate::physics::{self, Channel, ReadingKind};
use crate::policy::LabelAssignment;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompositionError {
    #[error("app {app}: unknown {kind} '{symbol}'")]
    Dangling { app: String, kind: &'static str, symbol: String },
    #[error("app {app}: {message}")]
    BadRule { app: String, message: String },
    #[error("PeM {pem}: {message}")]
    BadPem { pem: String, message: String },
    #[error("duplicate identifier '{0}'")]
    Duplicate(String),
    #[error("dependency cycle through sensor '{0}'")]
    DepCycle(String),
    #[error("cannot aggregate {got} influence on a {expected} channel")]
    MixedChannels { expected: Channel, got: Channel },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "==")]
    Eq,
}

impl CmpOp {
    pub fn holds(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
        }
    }

    pub fn parse(s: &str) -> Option<CmpOp> {
        Some(match s {
            "<" => CmpOp::Lt,
            "<=" => CmpOp::Le,
            ">" => CmpOp::Gt,
            ">=" => CmpOp::Ge,
            "==" | "=" => CmpOp::Eq,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Predicate {
    Detected,
    Undetected,
    Compare { op: CmpOp, value: f64 },
}

impl Predicate {
    /// Evaluate against a sensor reading (0/1 for boolean sensors).
    pub fn holds(&self, reading: f64) -> bool {
        match self {
            Predicate::Detected => reading > 0.5,
            Predicate::Undetected => reading <= 0.5,
            Predicate::Compare { op, value } => op.holds(reading, *value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Trigger {
    Timer,
    Sensor { sensor: String, predicate: Predicate },
    /// Software event: runs after another command executes.
    Command { command: String },
}

impl Trigger {
    /// Parses "timer", "after <command>", "<sensor> detected|undetected" and "<sensor> <op> <number>".
    pub fn parse(s: &str) -> Result<Trigger, String> {
        let toks: Vec<&str> = s.split_whitespace().collect();
        match toks.as_slice() {
            ["timer"] => Ok(Trigger::Timer),
            ["after", cmd] => Ok(Trigger::Command { command: cmd.to_string() }),
            [sensor, "detected"] => Ok(Trigger::Sensor { sensor: sensor.to_string(), predicate: Predicate::Detected }),
            [sensor, "undetected"] => {
                Ok(Trigger::Sensor { sensor: sensor.to_string(), predicate: Predicate::Undetected })
            }
            [sensor, op, num] => {
                let op = CmpOp::parse(op).ok_or_else(|| format!("bad comparison '{op}' in trigger '{s}'"))?;
                let value: f64 = num.parse().map_err(|_| format!("bad number '{num}' in trigger '{s}'"))?;
                Ok(Trigger::Sensor { sensor: sensor.to_string(), predicate: Predicate::Compare { op, value } })
            }
            _ => Err(format!("unrecognised trigger '{s}'")),
        }
    }

    pub fn sensor(&self) -> Option<&str> {
        match self {
            Trigger::Sensor { sensor, .. } => Some(sensor),
            _ => None,
        }
    }
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Trigger::Timer => write!(f, "timer"),
            Trigger::Command { command } => write!(f, "after {command}"),
            Trigger::Sensor { sensor, predicate } => match predicate {
                Predicate::Detected => write!(f, "{sensor} detected"),
                Predicate::Undetected => write!(f, "{sensor} undetected"),
                Predicate::Compare { op, value } => write!(f, "{sensor} {} {value}", op.symbol()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    Mode { mode: String, is: bool },
    Device { device: String, on: bool },
}

impl Condition {
    /// Parses "mode is <m>", "mode is not <m>", "<device> is on|off".
    pub fn parse(s: &str) -> Result<Condition, String> {
        let toks: Vec<&str> = s.split_whitespace().collect();
        match toks.as_slice() {
            ["mode", "is", m] => Ok(Condition::Mode { mode: m.to_string(), is: true }),
            ["mode", "is", "not", m] => Ok(Condition::Mode { mode: m.to_string(), is: false }),
            [d, "is", "on"] => Ok(Condition::Device { device: d.to_string(), on: true }),
            [d, "is", "off"] => Ok(Condition::Device { device: d.to_string(), on: false }),
            _ => Err(format!("unrecognised condition '{s}'")),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Mode { mode, is: true } => write!(f, "mode is {mode}"),
            Condition::Mode { mode, is: false } => write!(f, "mode is not {mode}"),
            Condition::Device { device, on } => write!(f, "{device} is {}", if *on { "on" } else { "off" }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handler {
    pub trigger: Trigger,
    pub conditions: Vec<Condition>,
    pub commands: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppRule {
    pub id: String,
    pub description: String,
    pub activity: Option<String>,
    pub handlers: Vec<Handler>,
}

impl AppRule {
    pub fn is_timer(&self) -> bool {
        self.handlers.iter().any(|h| h.trigger == Trigger::Timer)
    }

    pub fn commands(&self) -> impl Iterator<Item = &str> {
        self.handlers.iter().flat_map(|h| h.commands.iter().map(String::as_str))
    }

    pub fn timer_commands(&self) -> impl Iterator<Item = &str> {
        self.handlers
            .iter()
            .filter(|h| h.trigger == Trigger::Timer)
            .flat_map(|h| h.commands.iter().map(String::as_str))
    }

    pub fn trigger_sensors(&self) -> BTreeSet<&str> {
        self.handlers
            .iter()
            .filter_map(|h| match &h.trigger {
                Trigger::Sensor { sensor, .. } => Some(sensor.as_str()),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub name: String,
    pub on_command: String,
    pub off_command: Option<String>,
    /// Minutes; `None` for set-point devices.
    pub operating_time: Option<f64>,
    /// Stays on after its PeMs expire (a door stays unlocked).
    #[serde(default)]
    pub latch: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "target", rename_all = "snake_case")]
pub enum CommandKind {
    DeviceOn(String),
    DeviceOff(String),
    SetMode(String),
    Notify,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Command {
    pub name: String,
    pub kind: CommandKind,
}

/// Everything about a home except its apps.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HomeModel {
    pub env: Environment,
    pub devices: Vec<Device>,
    pub commands: Vec<Command>,
    pub modes: Vec<String>,
    pub initial_mode: String,
    pub actuators: Vec<ActuatorPem>,
    pub sensors: Vec<SensorPem>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Edge {
    PhysInfluence { pem: String, sensor: String },
    Aggregate { sensor: String, inputs: Vec<String> },
    Trigger { sensor: String, app: String, handler: usize, command: String },
    Software { from: String, app: String, handler: usize, command: String },
    Dep { from: String, to: String },
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Edge::PhysInfluence { pem, sensor } => write!(f, "influence {pem} -> {sensor}"),
            Edge::Aggregate { sensor, inputs } => write!(f, "aggregate {} -> {sensor}", inputs.join(",")),
            Edge::Trigger { sensor, app, handler, command } => {
                write!(f, "trigger {sensor} -> {app}#{handler} -> {command}")
            }
            Edge::Software { from, app, handler, command } => {
                write!(f, "software {from} -> {app}#{handler} -> {command}")
            }
            Edge::Dep { from, to } => write!(f, "dep {from} -> {to}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cpem {
    pub model: HomeModel,
    pub apps: Vec<AppRule>,
    pub edges: BTreeSet<Edge>,
    #[serde(default)]
    pub labels: LabelAssignment,
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

/// Build the composite graph. Inputs are sorted by id first, so any
/// permutation of the same PeMs and apps yields the same graph.
pub fn compose(mut model: HomeModel, mut apps: Vec<AppRule>) -> Result<Cpem, CompositionError> {
    model.actuators.sort_by(|a, b| a.id.cmp(&b.id));
    model.sensors.sort_by(|a, b| a.id.cmp(&b.id));
    model.devices.sort_by(|a, b| a.name.cmp(&b.name));
    model.commands.sort_by(|a, b| a.name.cmp(&b.name));
    model.modes.sort();
    model.modes.dedup();
    apps.sort_by(|a, b| a.id.cmp(&b.id));

    check_unique(model.actuators.iter().map(|p| p.id.as_str()))?;
    check_unique(model.sensors.iter().map(|s| s.id.as_str()))?;
    check_unique(model.devices.iter().map(|d| d.name.as_str()))?;
    check_unique(model.commands.iter().map(|c| c.name.as_str()))?;
    check_unique(apps.iter().map(|a| a.id.as_str()))?;

    let sensors: BTreeMap<&str, &SensorPem> = model.sensors.iter().map(|s| (s.id.as_str(), s)).collect();
    let commands: BTreeMap<&str, &Command> = model.commands.iter().map(|c| (c.name.as_str(), c)).collect();
    let devices: BTreeSet<&str> = model.devices.iter().map(|d| d.name.as_str()).collect();
    let modes: BTreeSet<&str> = model.modes.iter().map(String::as_str).collect();

    for id in sensors.keys().chain(commands.keys()).copied().chain(model.actuators.iter().map(|p| p.id.as_str())) {
        if !is_ident(id) {
            return Err(CompositionError::BadPem { pem: id.to_string(), message: "invalid identifier".into() });
        }
    }
    if !modes.contains(model.initial_mode.as_str()) {
        return Err(CompositionError::BadRule { app: "<home>".into(), message: format!("unknown initial mode '{}'", model.initial_mode) });
    }

    let mut edges = BTreeSet::new();

    // UNIFY: channel-matched influences.
    for pem in &model.actuators {
        if !commands.contains_key(pem.command.as_str()) {
            return Err(CompositionError::BadPem { pem: pem.id.clone(), message: format!("unknown command '{}'", pem.command) });
        }
        if let Some(ch) = pem.flow.channel() {
            if ch != pem.channel {
                return Err(CompositionError::BadPem { pem: pem.id.clone(), message: format!("{ch} model on a {} PeM", pem.channel) });
            }
        }
        if let Flow::Dependency { source } = &pem.flow {
            let ok = model.actuators.iter().any(|p| &p.id == source && p.channel == Channel::Temperature);
            if !ok {
                return Err(CompositionError::BadPem { pem: pem.id.clone(), message: format!("dependency source '{source}' is not a temperature PeM") });
            }
        }
        for (sensor, d) in &pem.distances {
            let s = sensors.get(sensor.as_str()).ok_or_else(|| CompositionError::BadPem {
                pem: pem.id.clone(),
                message: format!("distance to unknown sensor '{sensor}'"),
            })?;
            if !(*d > 0.0) || !d.is_finite() {
                return Err(CompositionError::BadPem { pem: pem.id.clone(), message: format!("distance to '{sensor}' must be > 0") });
            }
            if s.channel == pem.channel {
                edges.insert(Edge::PhysInfluence { pem: pem.id.clone(), sensor: sensor.clone() });
            }
        }
    }

    // AGG: one node per sensor with several inbound influences.
    for s in &model.sensors {
        let inputs: Vec<String> = edges
            .iter()
            .filter_map(|e| match e {
                Edge::PhysInfluence { pem, sensor } if sensor == &s.id => Some(pem.clone()),
                _ => None,
            })
            .collect();
        if inputs.len() >= 2 {
            edges.insert(Edge::Aggregate { sensor: s.id.clone(), inputs });
        }
    }

    // DEP: sensor outputs feeding other sensors' threshold functions.
    for s in &model.sensors {
        if let Some(src) = &s.depends_on {
            let from = sensors.get(src.as_str()).ok_or_else(|| CompositionError::BadPem {
                pem: s.id.clone(),
                message: format!("depends on unknown sensor '{src}'"),
            })?;
            if from.channel != Channel::Temperature || s.channel != Channel::Humidity {
                return Err(CompositionError::BadPem { pem: s.id.clone(), message: "only humidity may depend on temperature".into() });
            }
            edges.insert(Edge::Dep { from: src.clone(), to: s.id.clone() });
        }
    }

    for c in &model.commands {
        let target_ok = match &c.kind {
            CommandKind::DeviceOn(d) | CommandKind::DeviceOff(d) => devices.contains(d.as_str()),
            CommandKind::SetMode(m) => modes.contains(m.as_str()),
            CommandKind::Notify => true,
        };
        if !target_ok {
            return Err(CompositionError::BadPem { pem: c.name.clone(), message: "command targets an unknown device or mode".into() });
        }
    }

    // Trigger and software transitions.
    for app in &apps {
        if app.handlers.is_empty() || app.handlers.iter().any(|h| h.commands.is_empty()) {
            return Err(CompositionError::BadRule { app: app.id.clone(), message: "every handler needs at least one command".into() });
        }
        for (hi, h) in app.handlers.iter().enumerate() {
            for cmd in &h.commands {
                if !commands.contains_key(cmd.as_str()) {
                    return Err(CompositionError::Dangling { app: app.id.clone(), kind: "command", symbol: cmd.clone() });
                }
            }
            for cond in &h.conditions {
                match cond {
                    Condition::Mode { mode, .. } if !modes.contains(mode.as_str()) => {
                        return Err(CompositionError::Dangling { app: app.id.clone(), kind: "mode", symbol: mode.clone() })
                    }
                    Condition::Device { device, .. } if !devices.contains(device.as_str()) => {
                        return Err(CompositionError::Dangling { app: app.id.clone(), kind: "device", symbol: device.clone() })
                    }
                    _ => {}
                }
            }
            match &h.trigger {
                Trigger::Timer => {}
                Trigger::Sensor { sensor, predicate } => {
                    let s = sensors
                        .get(sensor.as_str())
                        .ok_or_else(|| CompositionError::Dangling { app: app.id.clone(), kind: "sensor", symbol: sensor.clone() })?;
                    let boolean_pred = matches!(predicate, Predicate::Detected | Predicate::Undetected);
                    if boolean_pred != (s.output_kind == ReadingKind::Boolean) {
                        return Err(CompositionError::BadRule {
                            app: app.id.clone(),
                            message: format!("trigger '{}' does not match the {:?} sensor '{sensor}'", h.trigger, s.output_kind),
                        });
                    }
                    for cmd in &h.commands {
                        edges.insert(Edge::Trigger { sensor: sensor.clone(), app: app.id.clone(), handler: hi, command: cmd.clone() });
                    }
                }
                Trigger::Command { command } => {
                    if !commands.contains_key(command.as_str()) {
                        return Err(CompositionError::Dangling { app: app.id.clone(), kind: "command", symbol: command.clone() });
                    }
                    for cmd in &h.commands {
                        edges.insert(Edge::Software { from: command.clone(), app: app.id.clone(), handler: hi, command: cmd.clone() });
                    }
                }
            }
        }
    }

    let cpem = Cpem { model, apps, edges, labels: LabelAssignment::default() };
    cpem.check_well_formed()?;
    Ok(cpem)
}

fn check_unique<'a>(ids: impl Iterator<Item = &'a str>) -> Result<(), CompositionError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(CompositionError::Duplicate(id.to_string()));
        }
    }
    Ok(())
}

impl Cpem {
    /// Structural invariants of the graph.
    pub fn check_well_formed(&self) -> Result<(), CompositionError> {
        for s in &self.model.sensors {
            let n = self.inbound(&s.id).len();
            let aggs = self.edges.iter().filter(|e| matches!(e, Edge::Aggregate { sensor, .. } if sensor == &s.id)).count();
            let expected = usize::from(n >= 2);
            if aggs != expected {
                return Err(CompositionError::BadPem { pem: s.id.clone(), message: format!("{n} inputs but {aggs} aggregation nodes") });
            }
        }
        // Dep acyclicity: follow depends_on chains.
        for s in &self.model.sensors {
            let mut cur = s.depends_on.as_deref();
            let mut steps = 0;
            while let Some(id) = cur {
                steps += 1;
                if id == s.id || steps > self.model.sensors.len() {
                    return Err(CompositionError::DepCycle(s.id.clone()));
                }
                cur = self.sensor(id).and_then(|x| x.depends_on.as_deref());
            }
        }
        for e in &self.edges {
            if let Edge::Trigger { app, handler, .. } | Edge::Software { app, handler, .. } = e {
                let ok = self.app(app).is_some_and(|a| *handler < a.handlers.len());
                if !ok {
                    return Err(CompositionError::Dangling { app: app.clone(), kind: "handler", symbol: handler.to_string() });
                }
            }
        }
        Ok(())
    }

    pub fn sensor(&self, id: &str) -> Option<&SensorPem> {
        self.model.sensors.iter().find(|s| s.id == id)
    }

    pub fn actuator(&self, id: &str) -> Option<&ActuatorPem> {
        self.model.actuators.iter().find(|p| p.id == id)
    }

    pub fn app(&self, id: &str) -> Option<&AppRule> {
        self.apps.iter().find(|a| a.id == id)
    }

    pub fn command(&self, name: &str) -> Option<&Command> {
        self.model.commands.iter().find(|c| c.name == name)
    }

    pub fn device(&self, name: &str) -> Option<&Device> {
        self.model.devices.iter().find(|d| d.name == name)
    }

    /// Actuator PeMs with an influence edge into `sensor`, in id order.
    pub fn inbound(&self, sensor: &str) -> Vec<&ActuatorPem> {
        self.edges
            .iter()
            .filter_map(|e| match e {
                Edge::PhysInfluence { pem, sensor: s } if s == sensor => self.actuator(pem),
                _ => None,
            })
            .collect()
    }

    pub fn pems_of_command(&self, command: &str) -> Vec<&ActuatorPem> {
        self.model.actuators.iter().filter(|p| p.command == command).collect()
    }

    pub fn timer_apps(&self) -> impl Iterator<Item = &AppRule> {
        self.apps.iter().filter(|a| a.is_timer())
    }

    /// Counts used by summaries: (nodes, edges by kind).
    pub fn summary(&self) -> CpemSummary {
        let mut by_kind = BTreeMap::new();
        for e in &self.edges {
            let k = match e {
                Edge::PhysInfluence { .. } => "influence",
                Edge::Aggregate { .. } => "aggregate",
                Edge::Trigger { .. } => "trigger",
                Edge::Software { .. } => "software",
                Edge::Dep { .. } => "dep",
            };
            *by_kind.entry(k.to_string()).or_insert(0) += 1;
        }
        let aggs = by_kind.get("aggregate").copied().unwrap_or(0);
        CpemSummary {
            actuator_pems: self.model.actuators.len(),
            sensor_pems: self.model.sensors.len(),
            aggregate_nodes: aggs,
            apps: self.apps.len(),
            edges: by_kind,
        }
    }

    /// One line per edge, sorted.
    pub fn adjacency(&self) -> Vec<String> {
        self.edges.iter().map(ToString::to_string).collect()
    }

    /// Rebuild with a different model, keeping apps and labels.
    pub fn recompose(&self, model: HomeModel) -> Result<Cpem, CompositionError> {
        let mut c = compose(model, self.apps.clone())?;
        c.labels = self.labels.clone();
        c.sync_pem_labels();
        Ok(c)
    }

    pub fn with_labels(mut self, labels: LabelAssignment) -> Cpem {
        self.labels = labels;
        self.sync_pem_labels();
        self
    }

    fn sync_pem_labels(&mut self) {
        for pem in &mut self.model.actuators {
            pem.labels = self
                .labels
                .entries
                .iter()
                .filter(|e| e.command == pem.command)
                .map(|e| (e.app.clone(), e.label))
                .collect();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpemSummary {
    pub actuator_pems: usize,
    pub sensor_pems: usize,
    pub aggregate_nodes: usize,
    pub apps: usize,
    pub edges: BTreeMap<String, usize>,
}

/// Combine influences on one channel. An empty list yields the baseline.
pub fn aggregate(channel: Channel, influences: &[(Channel, f64)], baseline: f64) -> Result<f64, CompositionError> {
    let mut vals = Vec::with_capacity(influences.len());
    for &(ch, v) in influences {
        if ch != channel {
            return Err(CompositionError::MixedChannels { expected: channel, got: ch });
        }
        vals.push(v);
    }
    Ok(physics::aggregate(channel, &vals).unwrap_or(baseline))
}

/// Relative humidity seen by a sensor whose threshold function depends on temperature.
pub fn apply_dependency(temp: f64, w: f64) -> f64 {
    physics::relative_humidity(w, physics::humidity_capacity(temp)).unwrap_or(100.0)
}

/// Ambient channel value from per-PeM influence values.
///
/// `temperature_offset` is only read for humidity sensors: the temperature
/// change (°F) at the sensor they depend on.
pub fn ambient(channel: Channel, env: &Environment, influences: &[f64], temperature_offset: f64) -> f64 {
    let b = &env.baselines;
    match channel {
        Channel::Temperature => b.temperature + influences.iter().sum::<f64>(),
        Channel::Humidity => {
            let w = (b.vapor() + influences.iter().sum::<f64>()).max(0.0);
            apply_dependency(b.temperature + temperature_offset, w)
        }
        Channel::Illuminance => b.illuminance + influences.iter().sum::<f64>(),
        Channel::Smoke => b.smoke + influences.iter().sum::<f64>(),
        Channel::Sound | Channel::Motion => {
            let v = physics::aggregate(channel, influences).unwrap_or(f64::NEG_INFINITY);
            if channel == Channel::Sound && !v.is_finite() {
                b.sound
            } else if channel == Channel::Motion && !v.is_finite() {
                0.0
            } else {
                v
            }
        }
    }
}
