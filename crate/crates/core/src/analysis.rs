//! Policy validation over simulated executions: exhaustive grid testing and
//! robustness-guided falsification, both producing violation reports.

use crate::composition::{Cpem, Trigger};
use crate::config::HomeConfig;
use crate::mtl::{robustness, robustness_signal, Formula, MtlError, Overlay};
use crate::pem::Label;
use crate::policy::{PolicyInstance, Subjects};
use crate::simulation::{ActivationSchedule, Annotation, Cause, SimError, Simulator, TraceSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Upstream levels searched when looking for schedulable causes of a command.
const UPSTREAM_DEPTH: usize = 4;
/// Grid executions dispatched per parallel batch.
const BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("policy {policy}: {source}")]
    Mtl { policy: String, source: MtlError },
    #[error("invalid grid '{0}': expected start:step:end with step > 0 and start <= end")]
    BadGrid(String),
    #[error("grid needs {count} executions, above the budget of {cap}")]
    Budget { count: u128, cap: u64 },
    #[error("invalid search configuration: {0}")]
    BadSearch(String),
}

type Result<T> = std::result::Result<T, AnalysisError>;

/// Activation-time grid `start:step:end` in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub start: f64,
    pub step: f64,
    pub end: f64,
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.end - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.start + i as f64 * self.step).collect()
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { start: 0.0, step: 10.0, end: 60.0 }
    }
}

impl FromStr for GridSpec {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<GridSpec> {
        let bad = || AnalysisError::BadGrid(s.to_string());
        let parts: Vec<f64> = s.split(':').map(|p| p.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
        let [start, step, end] = parts[..] else { return Err(bad()) };
        if !(step > 0.0) || !(start <= end) || !start.is_finite() || !end.is_finite() || start < 0.0 {
            return Err(bad());
        }
        Ok(GridSpec { start, step, end })
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.step, self.end)
    }
}

/// Falsification parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub max_iters: usize,
    pub seed: u64,
    /// Activation-time box for every candidate app, minutes.
    pub bounds: (f64, f64),
    /// Initial proposal radius as a fraction of the box width.
    pub initial_temperature: f64,
    /// Geometric decay of the temperature per iteration.
    pub cooling: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { max_iters: 100, seed: 0, bounds: (0.0, 60.0), initial_temperature: 1.0, cooling: 0.95 }
    }
}

impl SearchConfig {
    fn check(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(AnalysisError::BadSearch("max_iters must be >= 1".into()));
        }
        if !(self.bounds.0 < self.bounds.1) {
            return Err(AnalysisError::BadSearch(format!("empty bounds [{}, {}]", self.bounds.0, self.bounds.1)));
        }
        if !(self.cooling > 0.0 && self.cooling <= 1.0) || !(self.initial_temperature > 0.0) {
            return Err(AnalysisError::BadSearch("temperature must be > 0 and cooling in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    /// Minutes.
    pub horizon: f64,
    /// Seconds.
    pub dt: f64,
    pub grid: GridSpec,
    pub intent_subset_cap: usize,
    pub dc_subset_cap: usize,
    pub max_combinations: u64,
    /// Stop testing a policy once a violation is found. The reported set is
    /// unchanged because only the first witness in grid order is kept.
    pub stop_at_first: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            horizon: 60.0,
            dt: 1.0,
            grid: GridSpec::default(),
            intent_subset_cap: 4,
            dc_subset_cap: 2,
            max_combinations: 2_000_000,
            stop_at_first: true,
        }
    }
}

impl Settings {
    pub fn from_config(cfg: &HomeConfig) -> Result<Settings> {
        Ok(Settings {
            horizon: cfg.simulation.horizon,
            dt: cfg.simulation.dt,
            grid: cfg.analysis.grid.parse()?,
            intent_subset_cap: cfg.analysis.intent_subset_cap,
            dc_subset_cap: cfg.analysis.dc_subset_cap,
            max_combinations: cfg.analysis.max_combinations,
            stop_at_first: true,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Engine {
    Grid,
    Falsify(SearchConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppStep {
    pub app: String,
    pub event: String,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEvent {
    /// Minutes.
    pub t: f64,
    pub event: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

/// Root-cause certificate for one violated policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub policy_id: String,
    pub class: String,
    pub robustness: f64,
    #[serde(rename = "Input")]
    pub inputs: Vec<String>,
    #[serde(rename = "Apps")]
    pub apps: Vec<AppStep>,
    #[serde(rename = "Activation Time")]
    pub activation_time: BTreeMap<String, f64>,
    #[serde(rename = "Distance")]
    pub distance: BTreeMap<String, f64>,
    #[serde(rename = "Physical Channel Values")]
    pub timeline: Vec<TimelineEvent>,
    pub subjects: Subjects,
    /// First step at which the policy body is violated.
    pub witness_step: usize,
}

impl ViolationReport {
    pub fn schedule(&self) -> ActivationSchedule {
        ActivationSchedule::new(self.activation_time.clone())
    }

    fn dedup_key(&self) -> (String, String) {
        (self.policy_id.clone(), serde_json::to_string(&self.subjects).expect("subjects serialize"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub reports: Vec<ViolationReport>,
    pub simulations: u64,
    /// Executions the exhaustive grid comprises.
    pub combinations: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    pub point: Vec<f64>,
    pub robustness: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FalsifyOutcome {
    pub report: Option<ViolationReport>,
    pub simulations: u64,
    pub candidates: Vec<String>,
    pub iterations: Vec<Iteration>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCount {
    pub instances: usize,
    pub violated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub reports: Vec<ViolationReport>,
    pub by_class: BTreeMap<String, ClassCount>,
    pub simulations: u64,
}

impl Validation {
    pub fn violated_ids(&self) -> BTreeSet<String> {
        self.reports.iter().map(|r| r.policy_id.clone()).collect()
    }

    pub fn summary_table(&self) -> String {
        let mut s = format!("{:<8}{:>10}{:>10}\n", "class", "policies", "violated");
        let mut keys: Vec<&String> = self.by_class.keys().collect();
        keys.sort_by(|a, b| natural_cmp(a, b));
        let (mut ti, mut tv) = (0, 0);
        for k in keys {
            let c = self.by_class[k];
            s.push_str(&format!("{k:<8}{:>10}{:>10}\n", c.instances, c.violated));
            ti += c.instances;
            tv += c.violated;
        }
        s.push_str(&format!("{:<8}{ti:>10}{tv:>10}\n", "total"));
        s.push_str(&format!("simulations: {}\n", self.simulations));
        s
    }
}

/// Order "App2" before "App10".
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    fn split(s: &str) -> (&str, Option<u64>, &str) {
        let start = s.find(|c: char| c.is_ascii_digit()).unwrap_or(s.len());
        let end = s[start..].find(|c: char| !c.is_ascii_digit()).map_or(s.len(), |e| start + e);
        (&s[..start], s[start..end].parse().ok(), &s[end..])
    }
    let (pa, na, ra) = split(a);
    let (pb, nb, rb) = split(b);
    pa.cmp(pb).then(na.cmp(&nb)).then_with(|| if ra == rb { Ordering::Equal } else { natural_cmp(ra, rb) }).then(a.cmp(b))
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// A composite graph prepared for repeated policy checks.
pub struct Validator<'a> {
    cpem: &'a Cpem,
    sim: Simulator<'a>,
    horizon: f64,
}

impl<'a> Validator<'a> {
    pub fn new(cpem: &'a Cpem, dt: f64, horizon: f64) -> Result<Validator<'a>> {
        Ok(Validator { cpem, sim: Simulator::new(cpem, dt)?, horizon })
    }

    pub fn cpem(&self) -> &Cpem {
        self.cpem
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    fn timer_issuers(&self, command: &str) -> Vec<String> {
        self.cpem.apps.iter().filter(|a| a.timer_commands().any(|c| c == command)).map(|a| a.id.clone()).collect()
    }

    /// Commands whose occurrence can cause a non-timer handler to issue `command`.
    fn causes(&self, command: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for app in &self.cpem.apps {
            for h in &app.handlers {
                if !h.commands.iter().any(|c| c == command) {
                    continue;
                }
                match &h.trigger {
                    Trigger::Timer => {}
                    Trigger::Command { command } => {
                        out.insert(command.clone());
                    }
                    Trigger::Sensor { sensor, .. } => {
                        out.extend(self.cpem.inbound(sensor).into_iter().map(|p| p.command.clone()));
                    }
                }
            }
        }
        out
    }

    /// Timer apps whose activation can lead to `command`: the direct issuers,
    /// else the nearest upstream level that has any.
    fn upstream(&self, command: &str) -> BTreeSet<String> {
        let mut seen: BTreeSet<String> = [command.to_string()].into();
        let mut frontier = vec![command.to_string()];
        for _ in 0..=UPSTREAM_DEPTH {
            let found: BTreeSet<String> = frontier.iter().flat_map(|c| self.timer_issuers(c)).collect();
            if !found.is_empty() {
                return found;
            }
            let mut next = Vec::new();
            for c in &frontier {
                for u in self.causes(c) {
                    if seen.insert(u.clone()) {
                        next.push(u);
                    }
                }
            }
            frontier = next;
        }
        BTreeSet::new()
    }

    /// Schedulable apps searched for a policy, in natural id order.
    pub fn candidates(&self, p: &PolicyInstance) -> Vec<String> {
        let mut out: BTreeSet<String> = BTreeSet::new();
        if p.class.is_intent() {
            for c in &p.subjects.commands {
                out.extend(self.upstream(c));
            }
        } else {
            let mut direct: BTreeSet<String> = BTreeSet::new();
            let mut start: BTreeSet<String> = BTreeSet::new();
            for d in &p.subjects.devices {
                if let Some(dev) = self.cpem.device(d) {
                    direct.insert(dev.on_command.clone());
                    start.insert(dev.on_command.clone());
                    if let Some(off) = &dev.off_command {
                        direct.insert(off.clone());
                        start.insert(off.clone());
                    }
                }
            }
            for m in &p.subjects.modes {
                start.insert(format!("mode.{m}"));
            }
            let excluded: BTreeSet<String> = direct.iter().flat_map(|c| self.timer_issuers(c)).collect();
            let mut seen = start.clone();
            let mut queue: VecDeque<(String, usize)> = start.into_iter().map(|c| (c, 0)).collect();
            while let Some((c, depth)) = queue.pop_front() {
                out.extend(self.timer_issuers(&c).into_iter().filter(|a| !excluded.contains(a)));
                if depth < UPSTREAM_DEPTH {
                    for u in self.causes(&c) {
                        if seen.insert(u.clone()) {
                            queue.push_back((u, depth + 1));
                        }
                    }
                }
            }
        }
        let mut v: Vec<String> = out.into_iter().collect();
        v.sort_by(|a, b| natural_cmp(a, b));
        v
    }

    pub fn execute(&self, schedule: &ActivationSchedule, keep: Option<&BTreeSet<String>>) -> Result<TraceSet> {
        Ok(self.sim.run_filtered(schedule, self.horizon, keep)?)
    }

    /// Robustness of a policy on a recorded trace.
    pub fn evaluate(&self, p: &PolicyInstance, trace: &TraceSet) -> Result<f64> {
        let extra = p.derive(self.cpem, trace);
        robustness(&p.formula, &Overlay { base: trace, extra: &extra }).map_err(|source| AnalysisError::Mtl { policy: p.id.clone(), source })
    }

    /// Execute a schedule and evaluate one policy on it.
    pub fn check(&self, p: &PolicyInstance, schedule: &ActivationSchedule) -> Result<(f64, TraceSet)> {
        let keep = p.required_signals(self.cpem);
        let trace = self.execute(schedule, Some(&keep))?;
        let r = self.evaluate(p, &trace)?;
        Ok((r, trace))
    }

    /// Re-execute a report's activation times; a sound report yields a negative value.
    pub fn revalidate(&self, p: &PolicyInstance, report: &ViolationReport) -> Result<f64> {
        Ok(self.check(p, &report.schedule())?.0)
    }

    fn witness(&self, p: &PolicyInstance, trace: &TraceSet) -> Result<usize> {
        let extra = p.derive(self.cpem, trace);
        let src = Overlay { base: trace, extra: &extra };
        let mut f = &p.formula;
        loop {
            match f {
                Formula::Implies(_, rhs) => f = rhs,
                Formula::Always(_, body) => {
                    let sig = robustness_signal(body, &src).map_err(|source| AnalysisError::Mtl { policy: p.id.clone(), source })?;
                    return Ok(sig.iter().position(|&v| v < 0.0).unwrap_or(0));
                }
                _ => return Ok(0),
            }
        }
    }

    fn trigger_text(&self, app: &str, command: &str) -> String {
        let Some(a) = self.cpem.app(app) else { return String::new() };
        a.handlers.iter().find(|h| h.commands.iter().any(|c| c == command)).map(|h| h.trigger.to_string()).unwrap_or_default()
    }

    /// Build the report for a violating execution.
    pub fn report(&self, p: &PolicyInstance, schedule: &ActivationSchedule, trace: &TraceSet, robustness: f64) -> Result<ViolationReport> {
        let witness = self.witness(p, trace)?;
        let horizon_step = witness + 1;
        let dt = trace.dt;
        let intent = p.class.is_intent();

        let mut scheduled: Vec<(&String, f64)> = schedule.entries.iter().map(|(a, &t)| (a, t)).collect();
        scheduled.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| natural_cmp(a.0, b.0)));
        let mut inputs: Vec<String> = Vec::new();
        let mut apps: Vec<AppStep> = Vec::new();
        for (app, _) in &scheduled {
            let cmds: Vec<&str> = self.cpem.app(app).map(|a| a.timer_commands().collect()).unwrap_or_default();
            for c in &cmds {
                if !inputs.iter().any(|x| x == c) {
                    inputs.push(c.to_string());
                }
            }
            apps.push(AppStep { app: app.to_string(), event: "timer".into(), action: cmds.join(",") });
        }

        let subject_apps: BTreeSet<&str> = p.subjects.apps.iter().map(String::as_str).collect();
        let scheduled_apps: BTreeSet<String> = apps.iter().map(|a| a.app.clone()).collect();
        let (focus_cmds, focus_sensors) = self.dc_focus(p);
        let mut relevant: BTreeSet<String> = apps.iter().map(|a| a.app.clone()).collect();
        let mut timeline = Vec::new();
        let label_for = |sensor: &str| -> Option<Label> {
            if !intent || !p.subjects.sensors.iter().any(|s| s == sensor) {
                return None;
            }
            let app = p.subjects.apps.first()?;
            let labels: BTreeSet<Label> = p.subjects.commands.iter().filter_map(|c| self.cpem.labels.get(c, app)).collect();
            if labels.contains(&Label::UnInt) {
                Some(Label::UnInt)
            } else {
                labels.into_iter().next()
            }
        };
        for a in &trace.annotations {
            if a.step() > horizon_step {
                break;
            }
            match a {
                Annotation::Invoke { step, app, command, cause, effective } => {
                    let wanted = if intent {
                        relevant.contains(app) || subject_apps.contains(app.as_str())
                    } else {
                        scheduled_apps.contains(app)
                            || focus_cmds.contains(command)
                            || self.cpem.pems_of_command(command).iter().any(|pem| pem.distances.keys().any(|s| focus_sensors.contains(s)))
                    };
                    if !wanted || !*effective {
                        continue;
                    }
                    timeline.push(TimelineEvent { t: *step as f64 * dt / 60.0, event: command.clone(), label: None });
                    if relevant.insert(app.clone()) {
                        let event = match cause {
                            Cause::Timer => "timer".to_string(),
                            _ => self.trigger_text(app, command),
                        };
                        apps.push(AppStep { app: app.clone(), event, action: command.clone() });
                    }
                }
                Annotation::SensorEdge { step, sensor, rising, value } => {
                    let wanted = if intent { p.subjects.sensors.iter().any(|s| s == sensor) } else { focus_sensors.contains(sensor) };
                    if !wanted {
                        continue;
                    }
                    let kind = self.cpem.sensor(sensor).map(|s| s.output_kind);
                    let event = match kind {
                        Some(crate::physics::ReadingKind::Boolean) => format!("{sensor} {}", if *rising { "detected" } else { "undetected" }),
                        _ => format!("{sensor} = {value}"),
                    };
                    timeline.push(TimelineEvent { t: *step as f64 * dt / 60.0, event, label: label_for(sensor) });
                }
            }
        }
        for app in &p.subjects.apps {
            if !apps.iter().any(|a| &a.app == app) {
                let a = self.cpem.app(app);
                let event = a.and_then(|a| a.handlers.iter().find(|h| h.trigger.sensor().is_some_and(|s| p.subjects.sensors.iter().any(|x| x == s))));
                let (event, action) = match (a, event) {
                    (_, Some(h)) => (h.trigger.to_string(), h.commands.join(",")),
                    (Some(a), None) => (a.handlers[0].trigger.to_string(), a.commands().collect::<Vec<_>>().join(",")),
                    _ => (String::new(), String::new()),
                };
                apps.push(AppStep { app: app.clone(), event, action });
            }
        }

        let mut distance = BTreeMap::new();
        let commands: Vec<&String> = if intent { p.subjects.commands.iter().collect() } else { inputs.iter().collect() };
        for c in commands {
            for pem in self.cpem.pems_of_command(c) {
                for (s, d) in &pem.distances {
                    if !intent || p.subjects.sensors.contains(s) {
                        distance.insert(format!("{} -> {s}", pem.id), *d);
                    }
                }
            }
        }

        Ok(ViolationReport {
            policy_id: p.id.clone(),
            class: p.class.name(),
            robustness,
            inputs,
            apps,
            activation_time: schedule.entries.clone(),
            distance,
            timeline,
            subjects: p.subjects.clone(),
            witness_step: witness,
        })
    }

    /// Commands acting on a DC policy's subject devices and modes, and the sensors that trigger them.
    fn dc_focus(&self, p: &PolicyInstance) -> (BTreeSet<String>, BTreeSet<String>) {
        let mut cmds: BTreeSet<String> = p.subjects.modes.iter().map(|m| format!("mode.{m}")).collect();
        for d in &p.subjects.devices {
            if let Some(dev) = self.cpem.device(d) {
                cmds.insert(dev.on_command.clone());
                cmds.extend(dev.off_command.clone());
            }
        }
        let mut sensors = BTreeSet::new();
        for a in &self.cpem.apps {
            for h in &a.handlers {
                if let Some(s) = h.trigger.sensor() {
                    if h.commands.iter().any(|c| cmds.contains(c)) {
                        sensors.insert(s.to_string());
                    }
                }
            }
        }
        (cmds, sensors)
    }

    fn cap_for(&self, p: &PolicyInstance, s: &Settings) -> usize {
        if p.class.is_intent() {
            s.intent_subset_cap
        } else {
            s.dc_subset_cap
        }
    }

    /// Exhaustive grid testing of every policy over subsets of its candidate apps.
    pub fn grid_test(&self, policies: &[PolicyInstance], settings: &Settings) -> Result<GridOutcome> {
        let points = settings.grid.points();
        if points.is_empty() || points.iter().any(|&t| t > self.horizon + 1e-9) {
            return Err(AnalysisError::BadGrid(settings.grid.to_string()));
        }
        // Subset -> policies whose candidate set contains it.
        let mut subsets: BTreeMap<Vec<String>, Vec<usize>> = BTreeMap::new();
        for (i, p) in policies.iter().enumerate() {
            let cands = self.candidates(p);
            for s in subsets_upto(&cands, self.cap_for(p, settings)) {
                subsets.entry(s).or_default().push(i);
            }
        }
        let mut order: Vec<(Vec<String>, Vec<usize>)> = subsets.into_iter().collect();
        order.sort_by(|(a, _), (b, _)| a.len().cmp(&b.len()).then_with(|| cmp_lists(a, b)));

        let combinations: u128 = order.iter().map(|(s, _)| (points.len() as u128).pow(s.len() as u32)).sum();
        if combinations > u128::from(settings.max_combinations) {
            return Err(AnalysisError::Budget { count: combinations, cap: settings.max_combinations });
        }

        let mut found: BTreeMap<usize, ViolationReport> = BTreeMap::new();
        let mut simulations = 0u64;
        for (subset, members) in &order {
            let active: Vec<usize> = members.iter().copied().filter(|i| !(settings.stop_at_first && found.contains_key(i))).collect();
            if active.is_empty() {
                continue;
            }
            let keep: BTreeSet<String> = active.iter().flat_map(|&i| policies[i].required_signals(self.cpem)).collect();
            let total = points.len().pow(subset.len() as u32);
            let mut start = 0;
            while start < total {
                let still: Vec<usize> = active.iter().copied().filter(|i| !(settings.stop_at_first && found.contains_key(i))).collect();
                if still.is_empty() {
                    break;
                }
                let end = (start + BATCH).min(total);
                let results: Vec<Result<(ActivationSchedule, Vec<(usize, f64)>, TraceSet)>> = (start..end)
                    .into_par_iter()
                    .map(|idx| {
                        let sched = ActivationSchedule::new(subset.iter().cloned().zip(combo(idx, subset.len(), &points)));
                        let trace = self.execute(&sched, Some(&keep))?;
                        let mut robs = Vec::with_capacity(still.len());
                        for &i in &still {
                            robs.push((i, self.evaluate(&policies[i], &trace)?));
                        }
                        Ok((sched, robs, trace))
                    })
                    .collect();
                simulations += (end - start) as u64;
                for r in results {
                    let (sched, robs, trace) = r?;
                    for (i, rob) in robs {
                        if rob < 0.0 && !found.contains_key(&i) {
                            found.insert(i, self.report(&policies[i], &sched, &trace, rob)?);
                        }
                    }
                }
                start = end;
            }
        }
        Ok(GridOutcome { reports: dedup(found.into_values()), simulations, combinations })
    }

    /// Hit-and-run search over activation times minimising robustness.
    pub fn falsify(&self, p: &PolicyInstance, search: &SearchConfig) -> Result<FalsifyOutcome> {
        search.check()?;
        let candidates = self.candidates(p);
        let keep = p.required_signals(self.cpem);
        let (lo, hi) = (search.bounds.0.max(0.0), search.bounds.1.min(self.horizon));
        if !(lo < hi) {
            return Err(AnalysisError::BadSearch(format!("bounds [{lo}, {hi}] fall outside the horizon")));
        }
        let run = |x: &[f64]| -> Result<(f64, ActivationSchedule, TraceSet)> {
            let sched = ActivationSchedule::new(candidates.iter().cloned().zip(x.iter().copied()));
            let trace = self.execute(&sched, Some(&keep))?;
            let r = self.evaluate(p, &trace)?;
            Ok((r, sched, trace))
        };

        let mut rng = ChaCha8Rng::seed_from_u64(search.seed ^ fnv1a(&p.id));
        let d = candidates.len();
        let mut x: Vec<f64> = (0..d).map(|_| rng.gen_range(lo..=hi)).collect();
        let (mut best, mut best_sched, mut best_trace) = run(&x)?;
        let mut iterations = vec![Iteration { point: x.clone(), robustness: best, accepted: true }];
        let mut temperature = search.initial_temperature;
        while iterations.len() < search.max_iters && best >= 0.0 && d > 0 {
            let dir: Vec<f64> = {
                let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let n = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
                v.iter_mut().for_each(|a| *a /= n);
                v
            };
            // Chord of the box through x along dir, shortened to the current radius.
            let (mut lmin, mut lmax) = (f64::NEG_INFINITY, f64::INFINITY);
            for (xi, di) in x.iter().zip(&dir) {
                if di.abs() < 1e-12 {
                    continue;
                }
                let (a, b) = ((lo - xi) / di, (hi - xi) / di);
                lmin = lmin.max(a.min(b));
                lmax = lmax.min(a.max(b));
            }
            let radius = temperature * (hi - lo);
            lmin = lmin.max(-radius);
            lmax = lmax.min(radius);
            let lambda = if lmax > lmin { rng.gen_range(lmin..=lmax) } else { 0.0 };
            let y: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| (xi + lambda * di).clamp(lo, hi)).collect();
            let (r, sched, trace) = run(&y)?;
            let accepted = r <= best;
            iterations.push(Iteration { point: y.clone(), robustness: r, accepted });
            if accepted {
                x = y;
                best = r;
                best_sched = sched;
                best_trace = trace;
            }
            temperature *= search.cooling;
        }
        let report = if best < 0.0 { Some(self.report(p, &best_sched, &best_trace, best)?) } else { None };
        Ok(FalsifyOutcome { report, simulations: iterations.len() as u64, candidates, iterations })
    }

    /// Run one engine over all policies.
    pub fn validate_all(&self, policies: &[PolicyInstance], engine: &Engine, settings: &Settings) -> Result<Validation> {
        let (reports, simulations) = match engine {
            Engine::Grid => {
                let g = self.grid_test(policies, settings)?;
                (g.reports, g.simulations)
            }
            Engine::Falsify(search) => {
                let outs: Vec<FalsifyOutcome> = policies.par_iter().map(|p| self.falsify(p, search)).collect::<Result<_>>()?;
                let sims = outs.iter().map(|o| o.simulations).sum();
                (dedup(outs.into_iter().filter_map(|o| o.report)), sims)
            }
        };
        let mut by_class: BTreeMap<String, ClassCount> = BTreeMap::new();
        for p in policies {
            by_class.entry(p.class.name()).or_default().instances += 1;
        }
        for r in &reports {
            by_class.entry(r.class.clone()).or_default().violated += 1;
        }
        Ok(Validation { reports, by_class, simulations })
    }
}

fn dedup(reports: impl IntoIterator<Item = ViolationReport>) -> Vec<ViolationReport> {
    let mut map: BTreeMap<(String, String), ViolationReport> = BTreeMap::new();
    for r in reports {
        map.entry(r.dedup_key()).or_insert(r);
    }
    let mut v: Vec<ViolationReport> = map.into_values().collect();
    v.sort_by(|a, b| natural_cmp(&a.policy_id, &b.policy_id));
    v
}

fn cmp_lists(a: &[String], b: &[String]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match natural_cmp(x, y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// All subsets of size at most `cap`, the empty one included.
fn subsets_upto(items: &[String], cap: usize) -> Vec<Vec<String>> {
    let mut out = vec![Vec::new()];
    fn rec(items: &[String], start: usize, cap: usize, cur: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
        if cur.len() == cap {
            return;
        }
        for i in start..items.len() {
            cur.push(items[i].clone());
            out.push(cur.clone());
            rec(items, i + 1, cap, cur, out);
            cur.pop();
        }
    }
    rec(items, 0, cap, &mut Vec::new(), &mut out);
    out
}

/// The `idx`-th point of the `k`-fold grid product, first coordinate slowest.
fn combo(mut idx: usize, k: usize, points: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; k];
    for slot in v.iter_mut().rev() {
        *slot = points[idx % points.len()];
        idx /= points.len();
    }
    v
}

pub fn grid_test(cpem: &Cpem, policies: &[PolicyInstance], settings: &Settings) -> Result<GridOutcome> {
    Validator::new(cpem, settings.dt, settings.horizon)?.grid_test(policies, settings)
}

pub fn falsify(cpem: &Cpem, policy: &PolicyInstance, search: &SearchConfig, settings: &Settings) -> Result<FalsifyOutcome> {
    Validator::new(cpem, settings.dt, settings.horizon)?.falsify(policy, search)
}

pub fn validate_all(cpem: &Cpem, policies: &[PolicyInstance], engine: &Engine, settings: &Settings) -> Result<Validation> {
    Validator::new(cpem, settings.dt, settings.horizon)?.validate_all(policies, engine, settings)
}

/// Reports as pretty JSON, in a stable order.
pub fn reports_json(reports: &[ViolationReport]) -> String {
    serde_json::to_string_pretty(reports).expect("reports serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parse() {
        let g: GridSpec = "0:10:60".parse().unwrap();
        assert_eq!(g.points(), vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0]);
        assert!("0:0:60".parse::<GridSpec>().is_err());
        assert!("60:10:0".parse::<GridSpec>().is_err());
        assert!("a:b".parse::<GridSpec>().is_err());
        assert_eq!(g.to_string(), "0:10:60");
    }

    #[test]
    fn subsets_and_combos() {
        let items: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(subsets_upto(&items, 2).len(), 1 + 3 + 3);
        assert_eq!(subsets_upto(&items, 5).len(), 8);
        let pts = [0.0, 1.0, 2.0];
        assert_eq!(combo(0, 2, &pts), vec![0.0, 0.0]);
        assert_eq!(combo(5, 2, &pts), vec![1.0, 2.0]);
    }

    #[test]
    fn natural_order() {
        let mut v = vec!["App10", "App2", "App1", "App21"];
        v.sort_by(|a, b| natural_cmp(a, b));
        assert_eq!(v, vec!["App1", "App2", "App10", "App21"]);
    }
}
