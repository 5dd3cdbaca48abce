//! Fixed-step execution of a composite graph under an activation schedule.

use crate::composition::{CommandKind, Condition, Cpem, Edge, Predicate, Trigger};
use crate::pem::{ActuatorPem, Flow, Label, PemState};
use crate::physics::{Channel, PhysicsError, ReadingKind};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("unknown app '{0}' in schedule")]
    UnknownApp(String),
    #[error("app '{0}' has no timer handler and cannot be scheduled")]
    NotSchedulable(String),
    #[error("activation time {t} min for '{app}' is outside [0, {horizon}]")]
    OutOfRange { app: String, t: f64, horizon: f64 },
    #[error("step {dt} s does not divide the {horizon} min horizon")]
    BadStep { dt: f64, horizon: f64 },
    #[error("exogenous input for unknown sensor '{0}'")]
    UnknownSensor(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ActivationSchedule {
    /// App id → activation time in minutes.
    pub entries: BTreeMap<String, f64>,
    /// Sensor id → piecewise-constant additive input, as (minute, value) steps.
    #[serde(default)]
    pub exogenous: BTreeMap<String, Vec<(f64, f64)>>,
}

impl ActivationSchedule {
    pub fn new<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        ActivationSchedule { entries: entries.into_iter().map(|(a, t)| (a.into(), t)).collect(), exogenous: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contributor {
    pub pem: String,
    pub command: String,
    pub label: Option<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cause {
    Timer,
    Sensor { sensor: String, contributors: Vec<Contributor> },
    Software { after: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Annotation {
    Invoke { step: usize, app: String, command: String, cause: Cause, effective: bool },
    SensorEdge { step: usize, sensor: String, rising: bool, value: f64 },
}

impl Annotation {
    pub fn step(&self) -> usize {
        match self {
            Annotation::Invoke { step, .. } | Annotation::SensorEdge { step, .. } => *step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSet {
    pub dt: f64,
    pub len: usize,
    pub signals: BTreeMap<String, Vec<f64>>,
    pub annotations: Vec<Annotation>,
}

impl TraceSet {
    pub fn signal(&self, name: &str) -> Option<&[f64]> {
        self.signals.get(name).map(Vec::as_slice)
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    pub fn max_of(&self, name: &str) -> Option<f64> {
        self.signal(name).map(|s| s.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    /// One column per signal, first column `t` in seconds.
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["t".to_string()];
        header.extend(self.signals.keys().cloned());
        w.write_record(&header)?;
        for k in 0..self.len {
            let mut row = vec![format!("{}", self.time(k))];
            row.extend(self.signals.values().map(|s| format!("{}", s[k])));
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Rise,
    Fall,
}

/// Instants where a boolean or quantized series changes value.
pub fn rising_edges(series: &[f64], dt: f64) -> Vec<(f64, Direction)> {
    series
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] != w[0])
        .map(|(i, w)| ((i + 1) as f64 * dt, if w[1] > w[0] { Direction::Rise } else { Direction::Fall }))
        .collect()
}

pub fn signal_influence(pem: &str, sensor: &str) -> String {
    format!("infl.{pem}.{sensor}")
}

/// Name of the reading signal of a sensor.
pub fn signal_reading(sensor: &str, kind: ReadingKind) -> String {
    match kind {
        ReadingKind::Boolean => format!("{sensor}.detected"),
        ReadingKind::Numeric => format!("{sensor}.reading"),
    }
}

pub fn signal_device(device: &str) -> String {
    format!("{device}.on")
}

/// Pulse signal that is 1 at steps where a command switched the device on (or off).
pub fn signal_actuation(device: &str, on: bool) -> String {
    format!("act.{device}.{}", if on { "on" } else { "off" })
}

pub fn signal_mode(mode: &str) -> String {
    format!("mode.{mode}")
}

#[derive(Debug, Clone)]
enum Guard {
    Mode(usize, bool),
    Device(usize, bool),
}

#[derive(Debug, Clone)]
struct HandlerPlan {
    app: usize,
    guards: Vec<Guard>,
    commands: Vec<usize>,
    predicate: Option<Predicate>,
}

#[derive(Debug, Clone, Copy)]
enum Effect {
    On(usize),
    Off(usize),
    Mode(usize),
    Notify,
}

#[derive(Debug, Clone)]
struct Input {
    pem: usize,
    distance: f64,
    /// For dependency PeMs: the temperature PeM whose field is read.
    source: usize,
    signal: String,
}

#[derive(Debug, Clone)]
struct SensorPlan {
    model: usize,
    channel: Channel,
    inputs: Vec<Input>,
    dep_sensor: Option<usize>,
    period: usize,
    baseline: f64,
    handlers: Vec<usize>,
    exo_key: String,
}

/// A composite graph compiled to index tables, reusable across executions.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    cpem: &'a Cpem,
    dt: f64,
    pems: Vec<&'a ActuatorPem>,
    device_pems: Vec<Vec<usize>>,
    device_op: Vec<Option<f64>>,
    device_latch: Vec<bool>,
    effects: Vec<Effect>,
    command_names: Vec<String>,
    handlers: Vec<HandlerPlan>,
    software: Vec<Vec<usize>>,
    timer: BTreeMap<String, Vec<usize>>,
    sensors: Vec<SensorPlan>,
    app_ids: Vec<String>,
    labels: BTreeMap<(String, String), Label>,
    initial_mode: usize,
}

#[derive(Debug, Clone)]
struct Pending {
    handler: usize,
    cause: Cause,
}

impl<'a> Simulator<'a> {
    pub fn new(cpem: &'a Cpem, dt: f64) -> Result<Self, SimError> {
        let m = &cpem.model;
        let pems: Vec<&ActuatorPem> = m.actuators.iter().collect();
        let pem_idx: BTreeMap<&str, usize> = pems.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();
        let dev_idx: BTreeMap<&str, usize> = m.devices.iter().enumerate().map(|(i, d)| (d.name.as_str(), i)).collect();
        let mode_idx: BTreeMap<&str, usize> = m.modes.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
        let cmd_idx: BTreeMap<&str, usize> = m.commands.iter().enumerate().map(|(i, c)| (c.name.as_str(), i)).collect();
        let sensor_idx: BTreeMap<&str, usize> = m.sensors.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();

        let mut device_pems = vec![Vec::new(); m.devices.len()];
        let mut effects = Vec::with_capacity(m.commands.len());
        for c in &m.commands {
            effects.push(match &c.kind {
                CommandKind::DeviceOn(d) => Effect::On(dev_idx[d.as_str()]),
                CommandKind::DeviceOff(d) => Effect::Off(dev_idx[d.as_str()]),
                CommandKind::SetMode(md) => Effect::Mode(mode_idx[md.as_str()]),
                CommandKind::Notify => Effect::Notify,
            });
        }
        for (i, p) in pems.iter().enumerate() {
            if let Effect::On(d) = effects[cmd_idx[p.command.as_str()]] {
                device_pems[d].push(i);
            }
        }

        let mut handlers = Vec::new();
        let mut software = vec![Vec::new(); m.commands.len()];
        let mut timer: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut sensor_handlers: Vec<Vec<usize>> = vec![Vec::new(); m.sensors.len()];
        for (ai, app) in cpem.apps.iter().enumerate() {
            for h in &app.handlers {
                let guards = h
                    .conditions
                    .iter()
                    .map(|c| match c {
                        Condition::Mode { mode, is } => Guard::Mode(mode_idx[mode.as_str()], *is),
                        Condition::Device { device, on } => Guard::Device(dev_idx[device.as_str()], *on),
                    })
                    .collect();
                let commands = h.commands.iter().map(|c| cmd_idx[c.as_str()]).collect();
                let hi = handlers.len();
                let predicate = match &h.trigger {
                    Trigger::Timer => {
                        timer.entry(app.id.clone()).or_default().push(hi);
                        None
                    }
                    Trigger::Command { command } => {
                        software[cmd_idx[command.as_str()]].push(hi);
                        None
                    }
                    Trigger::Sensor { sensor, predicate } => {
                        sensor_handlers[sensor_idx[sensor.as_str()]].push(hi);
                        Some(predicate.clone())
                    }
                };
                handlers.push(HandlerPlan { app: ai, guards, commands, predicate });
            }
        }

        let mut sensors = Vec::new();
        for (si, s) in m.sensors.iter().enumerate() {
            let mut inputs = Vec::new();
            for e in &cpem.edges {
                if let Edge::PhysInfluence { pem, sensor } = e {
                    if sensor == &s.id {
                        let i = pem_idx[pem.as_str()];
                        let source = match &pems[i].flow {
                            Flow::Dependency { source } => pem_idx[source.as_str()],
                            _ => i,
                        };
                        inputs.push(Input { pem: i, distance: pems[i].distances[sensor], source, signal: signal_influence(pem, sensor) });
                    }
                }
            }
            sensors.push(SensorPlan {
                model: si,
                channel: s.channel,
                inputs,
                dep_sensor: s.depends_on.as_deref().map(|d| sensor_idx[d]),
                period: s.period_steps(dt),
                baseline: cpem.model.env.baselines.of(s.channel),
                handlers: std::mem::take(&mut sensor_handlers[si]),
                exo_key: s.id.clone(),
            });
        }
        // Dependency sources first.
        sensors.sort_by_key(|p| (p.dep_sensor.is_some(), p.model));

        let labels = cpem.labels.entries.iter().map(|e| ((e.command.clone(), e.app.clone()), e.label)).collect();

        Ok(Simulator {
            cpem,
            dt,
            device_op: m.devices.iter().map(|d| d.operating_time).collect(),
            device_latch: m.devices.iter().map(|d| d.latch).collect(),
            pems,
            device_pems,
            effects,
            command_names: m.commands.iter().map(|c| c.name.clone()).collect(),
            handlers,
            software,
            timer,
            sensors,
            app_ids: cpem.apps.iter().map(|a| a.id.clone()).collect(),
            labels,
            initial_mode: mode_idx.get(m.initial_mode.as_str()).copied().unwrap_or(0),
        })
    }

    pub fn cpem(&self) -> &Cpem {
        self.cpem
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Names of every signal a full recording produces.
    pub fn signal_names(&self) -> BTreeSet<String> {
        let m = &self.cpem.model;
        let mut out = BTreeSet::new();
        for s in &self.sensors {
            let sp = &m.sensors[s.model];
            out.insert(sp.id.clone());
            out.insert(signal_reading(&sp.id, sp.output_kind));
            for i in &s.inputs {
                out.insert(i.signal.clone());
            }
        }
        for d in &m.devices {
            out.insert(signal_device(&d.name));
            out.insert(signal_actuation(&d.name, true));
            out.insert(signal_actuation(&d.name, false));
        }
        for md in &m.modes {
            out.insert(signal_mode(md));
        }
        out
    }

    /// Run and record every signal.
    pub fn run(&self, schedule: &ActivationSchedule, horizon: f64) -> Result<TraceSet, SimError> {
        self.run_filtered(schedule, horizon, None)
    }

    /// Run and record only the named signals (all when `keep` is `None`).
    pub fn run_filtered(&self, schedule: &ActivationSchedule, horizon: f64, keep: Option<&BTreeSet<String>>) -> Result<TraceSet, SimError> {
        let dt = self.dt;
        let steps_f = horizon * 60.0 / dt;
        if !(dt > 0.0) || (steps_f - steps_f.round()).abs() > 1e-6 {
            return Err(SimError::BadStep { dt, horizon });
        }
        let n = steps_f.round() as usize + 1;
        let m = &self.cpem.model;
        let env = &m.env;

        // Scheduled timer handlers by step, in app-id order.
        let mut scheduled: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (app, &t) in &schedule.entries {
            let hs = match self.timer.get(app) {
                Some(hs) => hs,
                None if self.app_ids.contains(app) => return Err(SimError::NotSchedulable(app.clone())),
                None => return Err(SimError::UnknownApp(app.clone())),
            };
            if !(0.0..=horizon + EPS).contains(&t) || !t.is_finite() {
                return Err(SimError::OutOfRange { app: app.clone(), t, horizon });
            }
            let k = ((t * 60.0 / dt) - EPS).ceil().max(0.0) as usize;
            scheduled.entry(k.min(n - 1)).or_default().extend(hs.iter().copied());
        }
        let mut exo: Vec<Option<&Vec<(f64, f64)>>> = vec![None; self.sensors.len()];
        for key in schedule.exogenous.keys() {
            if !self.sensors.iter().any(|s| &s.exo_key == key) {
                return Err(SimError::UnknownSensor(key.clone()));
            }
        }
        for (i, s) in self.sensors.iter().enumerate() {
            exo[i] = schedule.exogenous.get(&s.exo_key);
        }

        let mut states: Vec<PemState> = self.pems.iter().map(|p| p.initial_state(env)).collect::<Result<_, _>>()?;
        let mut dev_on = vec![false; m.devices.len()];
        let mut dev_exp: Vec<Option<f64>> = vec![None; m.devices.len()];
        let mut mode = self.initial_mode;
        let mut queue: Vec<Vec<Pending>> = vec![Vec::new(); n + 1];
        let mut annotations = Vec::new();

        // Recording slots.
        let want = |name: &str| keep.map_or(true, |k| k.contains(name));
        let mut names: Vec<String> = Vec::new();
        let mut slot = |name: String| -> Option<usize> {
            if want(&name) {
                names.push(name);
                Some(names.len() - 1)
            } else {
                None
            }
        };
        struct SensorSlots {
            ambient: Option<usize>,
            reading: Option<usize>,
            inputs: Vec<Option<usize>>,
        }
        let mut sensor_slots = Vec::new();
        for s in &self.sensors {
            let sp = &m.sensors[s.model];
            sensor_slots.push(SensorSlots {
                ambient: slot(sp.id.clone()),
                reading: slot(signal_reading(&sp.id, sp.output_kind)),
                inputs: s.inputs.iter().map(|i| slot(i.signal.clone())).collect(),
            });
        }
        let dev_slots: Vec<Option<usize>> = m.devices.iter().map(|d| slot(signal_device(&d.name))).collect();
        let act_slots: Vec<[Option<usize>; 2]> =
            m.devices.iter().map(|d| [slot(signal_actuation(&d.name, true)), slot(signal_actuation(&d.name, false))]).collect();
        let mode_slots: Vec<Option<usize>> = m.modes.iter().map(|md| slot(signal_mode(md))).collect();
        let mut act = vec![[false; 2]; m.devices.len()];
        let mut data: Vec<Vec<f64>> = names.iter().map(|_| Vec::with_capacity(n)).collect();

        let n_sensors = self.sensors.len();
        let mut readings = vec![0.0; m.sensors.len()];
        let mut ambients = vec![0.0; m.sensors.len()];
        let mut prev_pred = vec![false; self.handlers.len()];
        let mut infl_buf: Vec<f64> = Vec::new();
        let mut infl_vals: Vec<Vec<f64>> = self.sensors.iter().map(|s| vec![0.0; s.inputs.len()]).collect();

        for k in 0..n {
            let t = k as f64 * dt;
            if k > 0 {
                for (p, st) in self.pems.iter().zip(states.iter_mut()) {
                    p.advance(st, env, dt)?;
                }
            }
            for d in 0..dev_on.len() {
                if let Some(e) = dev_exp[d] {
                    if e <= t + EPS {
                        dev_exp[d] = None;
                        for &pi in &self.device_pems[d] {
                            self.pems[pi].expire(&mut states[pi]);
                        }
                        if !self.device_latch[d] {
                            dev_on[d] = false;
                        }
                    }
                }
            }

            act.iter_mut().for_each(|a| *a = [false; 2]);
            // Commands due at this step: scheduled first, then triggered.
            let mut due: Vec<Pending> = scheduled
                .remove(&k)
                .unwrap_or_default()
                .into_iter()
                .map(|h| Pending { handler: h, cause: Cause::Timer })
                .collect();
            due.append(&mut queue[k]);
            for p in due {
                let h = &self.handlers[p.handler];
                if matches!(p.cause, Cause::Timer) && !self.guard_ok(h, &dev_on, mode) {
                    continue;
                }
                for &c in &h.commands {
                    let effective = match self.effects[c] {
                        Effect::On(d) => {
                            if dev_on[d] {
                                false
                            } else {
                                dev_on[d] = true;
                                dev_exp[d] = self.device_op[d].map(|mins| t + mins * 60.0);
                                for &pi in &self.device_pems[d] {
                                    self.pems[pi].invoke(&mut states[pi], t);
                                }
                                act[d][0] = true;
                                true
                            }
                        }
                        Effect::Off(d) => {
                            let was = dev_on[d];
                            dev_on[d] = false;
                            dev_exp[d] = None;
                            for &pi in &self.device_pems[d] {
                                self.pems[pi].expire(&mut states[pi]);
                            }
                            act[d][1] |= was;
                            was
                        }
                        Effect::Mode(md) => {
                            let changed = mode != md;
                            mode = md;
                            changed
                        }
                        Effect::Notify => true,
                    };
                    annotations.push(Annotation::Invoke {
                        step: k,
                        app: self.app_ids[h.app].clone(),
                        command: self.command_names[c].clone(),
                        cause: p.cause.clone(),
                        effective,
                    });
                    for &sh in &self.software[c] {
                        if k + 1 <= n {
                            queue[k + 1].push(Pending { handler: sh, cause: Cause::Software { after: self.command_names[c].clone() } });
                        }
                    }
                }
            }

            // Influences, ambient values and readings.
            for si in 0..n_sensors {
                let s = &self.sensors[si];
                let sp = &m.sensors[s.model];
                infl_buf.clear();
                let mut temp_offset = 0.0;
                for (ii, inp) in s.inputs.iter().enumerate() {
                    let v = self.pems[inp.source].output_at(&states[inp.source], inp.distance, t, sp.sensitivity, sp.min_speed);
                    infl_vals[si][ii] = v;
                    if inp.source == inp.pem {
                        infl_buf.push(v);
                    }
                }
                if let Some(ds) = s.dep_sensor {
                    temp_offset = ambients[ds] - env.baselines.temperature;
                }
                let mut amb = crate::composition::ambient(s.channel, env, &infl_buf, temp_offset);
                if let Some(steps) = exo[si] {
                    amb += step_value(steps, t / 60.0);
                }
                ambients[s.model] = amb;
                if k % s.period == 0 {
                    let r = sp.sensor_output(amb, s.baseline).value();
                    if k > 0 && r != readings[s.model] {
                        annotations.push(Annotation::SensorEdge { step: k, sensor: sp.id.clone(), rising: r > readings[s.model], value: r });
                    }
                    readings[s.model] = r;
                    for &hi in &s.handlers {
                        let h = &self.handlers[hi];
                        let pred = h.predicate.as_ref().is_some_and(|p| p.holds(r));
                        if k > 0 && pred && !prev_pred[hi] && self.guard_ok(h, &dev_on, mode) {
                            let contributors = self.contributors(s, &infl_vals[si], &states, h.app);
                            queue[k + 1].push(Pending { handler: hi, cause: Cause::Sensor { sensor: sp.id.clone(), contributors } });
                        }
                        prev_pred[hi] = pred;
                    }
                }
            }

            // Record.
            for (si, s) in self.sensors.iter().enumerate() {
                let sl = &sensor_slots[si];
                if let Some(i) = sl.ambient {
                    data[i].push(ambients[s.model]);
                }
                if let Some(i) = sl.reading {
                    data[i].push(readings[s.model]);
                }
                for (ii, o) in sl.inputs.iter().enumerate() {
                    if let Some(i) = o {
                        data[*i].push(infl_vals[si][ii]);
                    }
                }
            }
            for (d, o) in dev_slots.iter().enumerate() {
                if let Some(i) = o {
                    data[*i].push(f64::from(u8::from(dev_on[d])));
                }
            }
            for (d, slots) in act_slots.iter().enumerate() {
                for (j, o) in slots.iter().enumerate() {
                    if let Some(i) = o {
                        data[*i].push(f64::from(u8::from(act[d][j])));
                    }
                }
            }
            for (md, o) in mode_slots.iter().enumerate() {
                if let Some(i) = o {
                    data[*i].push(f64::from(u8::from(md == mode)));
                }
            }
        }

        Ok(TraceSet { dt, len: n, signals: names.into_iter().zip(data).collect(), annotations })
    }

    fn guard_ok(&self, h: &HandlerPlan, dev_on: &[bool], mode: usize) -> bool {
        h.guards.iter().all(|g| match *g {
            Guard::Mode(m, is) => (mode == m) == is,
            Guard::Device(d, on) => dev_on[d] == on,
        })
    }

    fn contributors(&self, s: &SensorPlan, vals: &[f64], states: &[PemState], app: usize) -> Vec<Contributor> {
        s.inputs
            .iter()
            .zip(vals)
            .filter(|(inp, v)| states[inp.pem].is_on() && v.is_finite() && v.abs() > EPS)
            .map(|(inp, _)| {
                let p = self.pems[inp.pem];
                Contributor {
                    pem: p.id.clone(),
                    command: p.command.clone(),
                    label: self.labels.get(&(p.command.clone(), self.app_ids[app].clone())).copied(),
                }
            })
            .collect()
    }
}

fn step_value(steps: &[(f64, f64)], minute: f64) -> f64 {
    steps.iter().take_while(|(t, _)| *t <= minute + EPS).last().map_or(0.0, |(_, v)| *v)
}

/// Convenience wrapper: compile and run once. `horizon` in minutes, `dt` in seconds.
pub fn execute(cpem: &Cpem, schedule: &ActivationSchedule, horizon: f64, dt: f64) -> Result<TraceSet, SimError> {
    Simulator::new(cpem, dt)?.run(schedule, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edges_of_simple_series() {
        assert!(rising_edges(&[1.0, 1.0, 1.0], 1.0).is_empty());
        assert_eq!(rising_edges(&[0.0, 0.0, 1.0, 1.0, 0.0], 1.0), vec![(2.0, Direction::Rise), (4.0, Direction::Fall)]);
    }

    #[test]
    fn step_function_lookup() {
        let s = [(0.0, 0.0), (5.0, 14.0), (7.0, 0.0)];
        assert_eq!(step_value(&s, 4.9), 0.0);
        assert_eq!(step_value(&s, 5.0), 14.0);
        assert_eq!(step_value(&s, 8.0), 0.0);
        assert_eq!(step_value(&[], 3.0), 0.0);
    }
}
