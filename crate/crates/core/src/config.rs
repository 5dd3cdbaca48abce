//! Home configuration file: devices, sensors, apps, labels and policy
//! parameters in one TOML document.

use crate::calibration::estimate_distance;
use crate::composition::{compose, AppRule, Command, CommandKind, CompositionError, Condition, Cpem, Device, Handler, HomeModel, Trigger};
use crate::pem::{ActuatorPem, Baselines, Environment, Flow, Label, PhysicsSettings, SensorPem};
use crate::physics::{Channel, ReadingKind};
use crate::policy::{device_centric_library, generate_labels, instantiate_intent_policies, DcParams, Instantiated, LabelOverride, PolicyError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;
const REFERENCE: &str = include_str!("../fixtures/reference_home.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error(transparent)]
    Composition(#[from] CompositionError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { path: path.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    /// Step, seconds.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Horizon, minutes.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

fn default_dt() -> f64 {
    1.0
}
fn default_horizon() -> f64 {
    60.0
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection { dt: default_dt(), horizon: default_horizon() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub id: String,
    pub channel: Channel,
    pub sensitivity: f64,
    #[serde(default = "default_dt")]
    pub sample_period: f64,
    pub kind: ReadingKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_speed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depends_on: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Diffusion,
    Hvac,
    Vapor,
    Dependency,
    Light,
    Sound,
    Motion,
    Smoke,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfluenceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub channel: Channel,
    pub model: ModelKind,
    /// Device parameter in the model's unit (absent for dependency).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setpoint: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_distance: Option<f64>,
    pub sensor: String,
    /// Meters; estimated from the RSSI table when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OperatingTime {
    Minutes(f64),
    /// "setpoint": runs until switched off.
    Keyword(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_command: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub off_command: Option<String>,
    pub operating_time: OperatingTime,
    #[serde(default)]
    pub latch: bool,
    #[serde(default)]
    pub influences: Vec<InfluenceSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandlerSpec {
    pub trigger: String,
    #[serde(default)]
    pub conditions: Vec<String>,
    pub commands: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppSpec {
    pub id: String,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conditions: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub commands: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub handlers: Vec<HandlerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RssiReading {
    pub device: String,
    pub sensor: String,
    pub rssi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RssiSection {
    pub p0: f64,
    #[serde(default = "default_path_loss")]
    pub n: f64,
    #[serde(default)]
    pub readings: Vec<RssiReading>,
}

fn default_path_loss() -> f64 {
    2.5
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSection {
    #[serde(default)]
    pub activity_map: BTreeMap<String, BTreeSet<String>>,
    #[serde(default)]
    pub overrides: Vec<LabelOverride>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    /// Classes or ids to run ("G1", "G2", "G3", "DC1".."DC10"); empty means all.
    #[serde(default)]
    pub enabled: BTreeSet<String>,
    #[serde(default)]
    pub t: BTreeMap<String, f64>,
    #[serde(default)]
    pub bindings: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "default_grid")]
    pub grid: String,
    #[serde(default = "default_intent_cap")]
    pub intent_subset_cap: usize,
    #[serde(default = "default_dc_cap")]
    pub dc_subset_cap: usize,
    #[serde(default = "default_budget")]
    pub max_combinations: u64,
    #[serde(default = "default_iters")]
    pub max_iters: usize,
}

fn default_grid() -> String {
    "0:10:60".into()
}
fn default_intent_cap() -> usize {
    4
}
fn default_dc_cap() -> usize {
    2
}
fn default_budget() -> u64 {
    2_000_000
}
fn default_iters() -> usize {
    100
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            grid: default_grid(),
            intent_subset_cap: default_intent_cap(),
            dc_subset_cap: default_dc_cap(),
            max_combinations: default_budget(),
            max_iters: default_iters(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomeConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub calibrated: bool,
    #[serde(default)]
    pub baselines: Baselines,
    #[serde(default)]
    pub physics: PhysicsSettings,
    #[serde(default)]
    pub simulation: SimulationSection,
    pub modes: Vec<String>,
    pub initial_mode: String,
    #[serde(default)]
    pub notifications: Vec<String>,
    pub sensors: Vec<SensorSpec>,
    pub devices: Vec<DeviceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rssi: Option<RssiSection>,
    #[serde(default)]
    pub apps: Vec<AppSpec>,
    #[serde(default)]
    pub labels: LabelSection,
    #[serde(default)]
    pub policies: PolicySection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

/// A validated home: the labeled graph plus the settings needed to analyse it.
#[derive(Debug, Clone, PartialEq)]
pub struct Home {
    pub config: HomeConfig,
    pub cpem: Cpem,
}

pub fn load_config(path: impl AsRef<Path>) -> Result<HomeConfig, ConfigError> {
    let p = path.as_ref();
    let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.display().to_string(), source })?;
    HomeConfig::from_toml(&text)
}

/// The bundled reference deployment.
pub fn reference_config() -> HomeConfig {
    HomeConfig::from_toml(REFERENCE).expect("bundled reference config is valid")
}

pub fn reference_toml() -> &'static str {
    REFERENCE
}

fn channel_tag(c: Channel) -> &'static str {
    match c {
        Channel::Temperature => "temp",
        Channel::Humidity => "hum",
        Channel::Illuminance => "illum",
        Channel::Sound => "sound",
        Channel::Motion => "motion",
        Channel::Smoke => "smoke",
    }
}

impl HomeConfig {
    pub fn from_toml(text: &str) -> Result<HomeConfig, ConfigError> {
        let cfg: HomeConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn on_command(d: &DeviceSpec) -> String {
        d.on_command.clone().unwrap_or_else(|| format!("{}.on", d.name))
    }

    pub fn pem_id(d: &DeviceSpec, i: &InfluenceSpec) -> String {
        i.id.clone().unwrap_or_else(|| format!("{}_{}", d.name, channel_tag(i.channel)))
    }

    /// Unit and cross-reference checks that do not need the composed graph.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid("schema_version", format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        let s = &self.simulation;
        if !(s.dt > 0.0) || !(s.horizon > 0.0) {
            return Err(invalid("simulation", "dt and horizon must be > 0"));
        }
        let p = &self.physics;
        for (name, v) in [("room_volume", p.room_volume), ("heat_alpha", p.heat_alpha), ("heat_dx", p.heat_dx), ("heat_length", p.heat_length)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(format!("physics.{name}"), "must be > 0"));
            }
        }
        if !(0.0..=100.0).contains(&self.baselines.humidity) {
            return Err(invalid("baselines.humidity", "must be within [0, 100] RH%"));
        }
        let sensors: BTreeMap<&str, &SensorSpec> = self.sensors.iter().map(|s| (s.id.as_str(), s)).collect();
        for (i, sp) in self.sensors.iter().enumerate() {
            if !(sp.sensitivity > 0.0) {
                return Err(invalid(format!("sensors[{i}].sensitivity"), "must be > 0"));
            }
            if !(sp.sample_period > 0.0) {
                return Err(invalid(format!("sensors[{i}].sample_period"), "must be > 0"));
            }
            if let Some(d) = &sp.depends_on {
                if !sensors.contains_key(d.as_str()) {
                    return Err(invalid(format!("sensors[{i}].depends_on"), format!("unknown sensor '{d}'")));
                }
            }
        }
        for (di, d) in self.devices.iter().enumerate() {
            if let OperatingTime::Keyword(k) = &d.operating_time {
                if k != "setpoint" {
                    return Err(invalid(format!("devices[{di}].operating_time"), format!("expected minutes or \"setpoint\", got \"{k}\"")));
                }
            }
            if let OperatingTime::Minutes(m) = d.operating_time {
                if !(m > 0.0) {
                    return Err(invalid(format!("devices[{di}].operating_time"), "must be > 0 minutes"));
                }
            }
            for (ii, inf) in d.influences.iter().enumerate() {
                let path = format!("devices[{di}].influences[{ii}]");
                let Some(sensor) = sensors.get(inf.sensor.as_str()) else {
                    return Err(invalid(format!("{path}.sensor"), format!("unknown sensor '{}'", inf.sensor)));
                };
                if sensor.channel != inf.channel {
                    return Err(invalid(format!("{path}.channel"), format!("{} influence routed to {} sensor '{}'", inf.channel, sensor.channel, sensor.id)));
                }
                if let Some(x) = inf.distance {
                    if !(x > 0.0) || !x.is_finite() {
                        return Err(invalid(format!("{path}.distance"), format!("must be a positive length in meters (got {x})")));
                    }
                }
                let expected = match inf.model {
                    ModelKind::Diffusion | ModelKind::Hvac => Channel::Temperature,
                    ModelKind::Vapor | ModelKind::Dependency => Channel::Humidity,
                    ModelKind::Light => Channel::Illuminance,
                    ModelKind::Sound => Channel::Sound,
                    ModelKind::Motion => Channel::Motion,
                    ModelKind::Smoke => Channel::Smoke,
                };
                if expected != inf.channel {
                    return Err(invalid(format!("{path}.model"), format!("{:?} model cannot drive the {} channel", inf.model, inf.channel)));
                }
                match (inf.model, inf.value) {
                    (ModelKind::Dependency, _) => {}
                    (_, None) => return Err(invalid(format!("{path}.value"), "missing device parameter")),
                    (m, Some(v)) => {
                        let non_negative = matches!(m, ModelKind::Light | ModelKind::Sound | ModelKind::Motion | ModelKind::Smoke);
                        if !v.is_finite() || (non_negative && v < 0.0) {
                            return Err(invalid(format!("{path}.value"), format!("invalid {} parameter {v}", inf.channel)));
                        }
                    }
                }
                if inf.model == ModelKind::Motion && !inf.start_distance.is_some_and(|x| x >= 0.0) {
                    return Err(invalid(format!("{path}.start_distance"), "motion sources need a start distance >= 0"));
                }
            }
        }
        if let Some(r) = &self.rssi {
            if !(r.n > 0.0) {
                return Err(invalid("rssi.n", "path-loss exponent must be > 0"));
            }
        }
        Ok(())
    }

    fn distance_for(&self, d: &DeviceSpec, inf: &InfluenceSpec, path: &str) -> Result<f64, ConfigError> {
        if let Some(x) = inf.distance {
            return Ok(x);
        }
        let r = self.rssi.as_ref().ok_or_else(|| invalid(format!("{path}.distance"), "no distance and no RSSI table"))?;
        let reading = r
            .readings
            .iter()
            .find(|x| x.device == d.name && x.sensor == inf.sensor)
            .ok_or_else(|| invalid(format!("{path}.distance"), format!("no distance and no RSSI reading for ({}, {})", d.name, inf.sensor)))?;
        Ok(estimate_distance(reading.rssi, r.p0, r.n))
    }

    /// Translate into the graph model (no apps).
    pub fn home_model(&self) -> Result<HomeModel, ConfigError> {
        let env = Environment { baselines: self.baselines, physics: self.physics };
        let mut model = HomeModel { env, modes: self.modes.clone(), initial_mode: self.initial_mode.clone(), ..Default::default() };

        for s in &self.sensors {
            let depends_on = s.depends_on.clone().or_else(|| {
                if s.channel != Channel::Humidity {
                    return None;
                }
                let temps: Vec<&SensorSpec> = self.sensors.iter().filter(|t| t.channel == Channel::Temperature).collect();
                (temps.len() == 1).then(|| temps[0].id.clone())
            });
            model.sensors.push(SensorPem {
                id: s.id.clone(),
                channel: s.channel,
                sensitivity: s.sensitivity,
                sample_period: s.sample_period,
                output_kind: s.kind,
                min_speed: s.min_speed.unwrap_or(0.1),
                depends_on,
            });
        }

        for m in &self.modes {
            model.commands.push(Command { name: format!("mode.{m}"), kind: CommandKind::SetMode(m.clone()) });
        }
        for n in &self.notifications {
            model.commands.push(Command { name: n.clone(), kind: CommandKind::Notify });
        }

        for (di, d) in self.devices.iter().enumerate() {
            let on = Self::on_command(d);
            let operating_time = match d.operating_time {
                OperatingTime::Minutes(m) => Some(m),
                OperatingTime::Keyword(_) => None,
            };
            model.devices.push(Device { name: d.name.clone(), on_command: on.clone(), off_command: d.off_command.clone(), operating_time, latch: d.latch });
            model.commands.push(Command { name: on.clone(), kind: CommandKind::DeviceOn(d.name.clone()) });
            if let Some(off) = &d.off_command {
                model.commands.push(Command { name: off.clone(), kind: CommandKind::DeviceOff(d.name.clone()) });
            }

            // One PeM per (command, channel); a channel listed for several sensors shares its PeM.
            let mut by_channel: BTreeMap<Channel, ActuatorPem> = BTreeMap::new();
            for (ii, inf) in d.influences.iter().enumerate() {
                let path = format!("devices[{di}].influences[{ii}]");
                let distance = self.distance_for(d, inf, &path)?;
                let id = Self::pem_id(d, inf);
                let v = inf.value.unwrap_or(0.0);
                let flow = match inf.model {
                    ModelKind::Diffusion => Flow::Diffusion { surface_temp: v },
                    ModelKind::Hvac => Flow::Hvac { rate: v, setpoint: inf.setpoint },
                    ModelKind::Vapor => Flow::Vapor { rate: v },
                    ModelKind::Dependency => {
                        let src = d
                            .influences
                            .iter()
                            .find(|x| x.channel == Channel::Temperature)
                            .ok_or_else(|| invalid(format!("{path}.model"), "dependency influence needs a temperature influence on the same device"))?;
                        Flow::Dependency { source: Self::pem_id(d, src) }
                    }
                    ModelKind::Light => Flow::Light { lumens: v },
                    ModelKind::Sound => Flow::Sound { level: v },
                    ModelKind::Motion => Flow::Motion { speed: v, start_distance: inf.start_distance.unwrap_or(0.0) },
                    ModelKind::Smoke => Flow::Smoke { rate: v },
                };
                let pem = by_channel.entry(inf.channel).or_insert_with(|| ActuatorPem {
                    id,
                    device: d.name.clone(),
                    command: on.clone(),
                    channel: inf.channel,
                    flow: flow.clone(),
                    distances: BTreeMap::new(),
                    operating_time,
                    labels: BTreeMap::new(),
                });
                if pem.flow != flow {
                    return Err(invalid(path, format!("conflicting {} models for device '{}'", inf.channel, d.name)));
                }
                pem.distances.insert(inf.sensor.clone(), distance);
            }
            model.actuators.extend(by_channel.into_values());
        }
        Ok(model)
    }

    pub fn app_rules(&self) -> Result<Vec<AppRule>, ConfigError> {
        let mut out = Vec::new();
        for (ai, a) in self.apps.iter().enumerate() {
            let path = format!("apps[{ai}] ({})", a.id);
            let mut specs = a.handlers.clone();
            if let Some(t) = &a.trigger {
                specs.insert(0, HandlerSpec { trigger: t.clone(), conditions: a.conditions.clone(), commands: a.commands.clone() });
            } else if !a.commands.is_empty() || !a.conditions.is_empty() {
                return Err(invalid(path, "commands given without a trigger"));
            }
            if specs.is_empty() {
                return Err(invalid(path, "app has no trigger"));
            }
            let mut handlers = Vec::new();
            for (hi, h) in specs.iter().enumerate() {
                let trigger = Trigger::parse(&h.trigger).map_err(|m| invalid(format!("{path}.handlers[{hi}].trigger"), m))?;
                let conditions = h
                    .conditions
                    .iter()
                    .map(|c| Condition::parse(c))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|m| invalid(format!("{path}.handlers[{hi}].conditions"), m))?;
                handlers.push(Handler { trigger, conditions, commands: h.commands.clone() });
            }
            out.push(AppRule { id: a.id.clone(), description: a.description.clone(), activity: a.activity.clone(), handlers });
        }
        Ok(out)
    }

    /// Compose the labeled graph.
    pub fn build(&self) -> Result<Home, ConfigError> {
        let cpem = compose(self.home_model()?, self.app_rules()?)?;
        let labels = generate_labels(&cpem, &self.labels.activity_map, &self.labels.overrides)?;
        Ok(Home { config: self.clone(), cpem: cpem.with_labels(labels) })
    }

    pub fn dc_params(&self) -> DcParams {
        let enabled = self.policies.enabled.iter().filter(|e| e.starts_with("DC")).cloned().collect();
        DcParams { enabled, t: self.policies.t.clone(), bindings: self.policies.bindings.clone() }
    }
}

impl Home {
    /// All enabled policy instances (intent-based first, then device-centric).
    pub fn policies(&self) -> Result<Instantiated, ConfigError> {
        let enabled = &self.config.policies.enabled;
        let wants = |class: &str| enabled.is_empty() || enabled.contains(class);
        let mut out = Instantiated::default();
        for p in instantiate_intent_policies(&self.cpem, &self.cpem.labels) {
            if wants(&p.class.name()) {
                out.instances.push(p);
            }
        }
        let dc_enabled = enabled.is_empty() || enabled.iter().any(|e| e.starts_with("DC"));
        if dc_enabled {
            let dc = device_centric_library(&self.cpem, &self.config.dc_params())?;
            out.instances.extend(dc.instances);
            out.warnings.extend(dc.warnings);
        }
        Ok(out)
    }

    pub fn label(&self, command: &str, app: &str) -> Option<Label> {
        self.cpem.labels.get(command, app)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_loads() {
        let cfg = reference_config();
        assert_eq!(cfg.devices.len(), 14);
        assert_eq!(cfg.sensors.len(), 6);
        assert_eq!(cfg.apps.len(), 39);
        let home = cfg.build().unwrap();
        assert_eq!(home.cpem.model.actuators.len(), 24);
    }

    #[test]
    fn unknown_sensor_names_the_app() {
        let mut cfg = reference_config();
        let app = cfg.apps.iter_mut().find(|a| a.id == "App18").unwrap();
        app.trigger = Some("kitchen_sound detected".into());
        let err = cfg.build().unwrap_err().to_string();
        assert!(err.contains("App18") && err.contains("kitchen_sound"), "{err}");
    }

    #[test]
    fn negative_distance_rejected() {
        let mut text = reference_toml().to_string();
        text = text.replacen("distance = 2.8", "distance = -2.8", 1);
        let err = HomeConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("distance") && err.contains("positive"), "{err}");
    }
}
