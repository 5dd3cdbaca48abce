//! Physical execution models: one hybrid automaton per (command, channel)
//! pair on the actuator side, one sampled threshold automaton per sensor.

use crate::physics::{self, Channel, DeviceProperty, HeatField, PhysicsError, ReadingKind, SensorReading};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Int,
    UnInt,
}

/// Flow function of an actuator PeM together with its device parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Flow {
    /// Point heat source at `surface_temp` °F diffusing along one axis.
    Diffusion { surface_temp: f64 },
    /// Uniform convective drift at `rate` °F/min, optionally stopping at a set-point.
    Hvac { rate: f64, setpoint: Option<f64> },
    /// Vapor generation or removal, g/min over the room volume.
    Vapor { rate: f64 },
    /// Humidity influence that exists only through the temperature change of
    /// another PeM of the same device (`source`).
    Dependency { source: String },
    Light { lumens: f64 },
    /// Sound pressure level at 1 m.
    Sound { level: f64 },
    /// Straight-line approach toward the sensor.
    Motion { speed: f64, start_distance: f64 },
    Smoke { rate: f64 },
}

impl Flow {
    pub fn channel(&self) -> Option<Channel> {
        Some(match self {
            Flow::Diffusion { .. } | Flow::Hvac { .. } => Channel::Temperature,
            Flow::Vapor { .. } => Channel::Humidity,
            Flow::Dependency { .. } => return None,
            Flow::Light { .. } => Channel::Illuminance,
            Flow::Sound { .. } => Channel::Sound,
            Flow::Motion { .. } => Channel::Motion,
            Flow::Smoke { .. } => Channel::Smoke,
        })
    }

    pub fn property(&self) -> Option<DeviceProperty> {
        Some(match *self {
            Flow::Diffusion { surface_temp } => DeviceProperty::SurfaceTemp(surface_temp),
            Flow::Hvac { rate, .. } => DeviceProperty::HvacRate(rate),
            Flow::Vapor { rate } => DeviceProperty::VaporRate(rate),
            Flow::Dependency { .. } => return None,
            Flow::Light { lumens } => DeviceProperty::Lumens(lumens),
            Flow::Sound { level } => DeviceProperty::SoundLevel(level),
            Flow::Motion { speed, .. } => DeviceProperty::Speed(speed),
            Flow::Smoke { rate } => DeviceProperty::SmokeRate(rate),
        })
    }

    /// Replace the device parameter, keeping the rest of the model.
    pub fn with_property(&self, v: f64) -> Flow {
        let mut f = self.clone();
        match &mut f {
            Flow::Diffusion { surface_temp } => *surface_temp = v,
            Flow::Hvac { rate, .. } => *rate = v,
            Flow::Vapor { rate } => *rate = v,
            Flow::Dependency { .. } => {}
            Flow::Light { lumens } => *lumens = v,
            Flow::Sound { level } => *level = v,
            Flow::Motion { speed, .. } => *speed = v,
            Flow::Smoke { rate } => *rate = v,
        }
        f
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorPem {
    pub id: String,
    pub device: String,
    pub command: String,
    pub channel: Channel,
    pub flow: Flow,
    pub distances: BTreeMap<String, f64>,
    /// Minutes until auto-off; `None` for set-point devices that run until told otherwise.
    pub operating_time: Option<f64>,
    #[serde(default)]
    pub labels: BTreeMap<String, Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorPem {
    pub id: String,
    pub channel: Channel,
    pub sensitivity: f64,
    pub sample_period: f64,
    pub output_kind: ReadingKind,
    /// Minimum source speed a motion sensor responds to, m/min.
    #[serde(default)]
    pub min_speed: f64,
    /// Temperature sensor whose channel value feeds this sensor's threshold function.
    #[serde(default)]
    pub depends_on: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Baselines {
    pub temperature: f64,
    pub humidity: f64,
    pub illuminance: f64,
    pub sound: f64,
    pub smoke: f64,
}

impl Default for Baselines {
    fn default() -> Self {
        Baselines { temperature: 70.0, humidity: 45.0, illuminance: 0.0, sound: 30.0, smoke: 0.0 }
    }
}

impl Baselines {
    pub fn of(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Temperature => self.temperature,
            Channel::Humidity => self.humidity,
            Channel::Illuminance => self.illuminance,
            Channel::Sound => self.sound,
            Channel::Motion => 0.0,
            Channel::Smoke => self.smoke,
        }
    }

    /// Absolute vapor content (g/m³) implied by the humidity and temperature baselines.
    pub fn vapor(&self) -> f64 {
        self.humidity / 100.0 * physics::humidity_capacity(self.temperature)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsSettings {
    pub room_volume: f64,
    pub heat_alpha: f64,
    pub heat_dx: f64,
    pub heat_length: f64,
    /// First-order decay of temperature/humidity influence after off, 1/min.
    #[serde(default)]
    pub decay_per_min: Option<f64>,
}

impl Default for PhysicsSettings {
    fn default() -> Self {
        PhysicsSettings { room_volume: 40.0, heat_alpha: 2.2e-5, heat_dx: 0.25, heat_length: 5.0, decay_per_min: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Environment {
    pub baselines: Baselines,
    pub physics: PhysicsSettings,
}

#[derive(Debug, Clone, PartialEq)]
enum Continuous {
    None,
    Heat(HeatField),
    /// Accumulated offset from baseline in channel units (°F, g/m³ or mg/m³).
    Offset(f64),
}

/// Mutable state of one actuator PeM inside one execution.
#[derive(Debug, Clone, PartialEq)]
pub struct PemState {
    pub on: bool,
    pub on_since: f64,
    pub expires_at: Option<f64>,
    cont: Continuous,
}

impl PemState {
    pub fn is_on(&self) -> bool {
        self.on
    }
}

impl ActuatorPem {
    pub fn initial_state(&self, env: &Environment) -> Result<PemState, PhysicsError> {
        let cont = match self.flow {
            Flow::Diffusion { surface_temp } => {
                let p = env.physics;
                let t0 = env.baselines.temperature;
                let mut field = HeatField::new(p.heat_length, p.heat_dx, p.heat_alpha, t0, t0)?;
                field.boundary_source = surface_temp;
                Continuous::Heat(field)
            }
            Flow::Hvac { .. } | Flow::Vapor { .. } | Flow::Smoke { .. } => Continuous::Offset(0.0),
            _ => Continuous::None,
        };
        Ok(PemState { on: false, on_since: 0.0, expires_at: None, cont })
    }

    /// Switch on at `t` seconds. Returns false (and changes nothing) if already on.
    pub fn invoke(&self, st: &mut PemState, t: f64) -> bool {
        if st.on {
            log::debug!("{}: invoke at {t}s ignored, already on", self.id);
            return false;
        }
        st.on = true;
        st.on_since = t;
        st.expires_at = self.operating_time.map(|m| t + m * 60.0);
        if let Continuous::Heat(f) = &mut st.cont {
            f.grid[0] = f.boundary_source;
        }
        true
    }

    pub fn expire(&self, st: &mut PemState) {
        st.on = false;
        st.expires_at = None;
    }

    /// Advance continuous state by `dt` seconds.
    pub fn advance(&self, st: &mut PemState, env: &Environment, dt: f64) -> Result<(), PhysicsError> {
        let dt_min = dt / 60.0;
        match (&self.flow, &mut st.cont) {
            (Flow::Diffusion { .. }, Continuous::Heat(field)) => {
                if st.on {
                    field.step(dt)?;
                } else if let Some(k) = env.physics.decay_per_min {
                    let f = (-k * dt_min).exp();
                    let t0 = field.boundary_far;
                    for v in field.grid.iter_mut() {
                        *v = t0 + (*v - t0) * f;
                    }
                }
            }
            (Flow::Hvac { rate, setpoint }, Continuous::Offset(d)) => {
                if st.on {
                    let base = env.baselines.temperature;
                    *d = physics::hvac_step(base + *d, *rate, true, dt_min, *setpoint) - base;
                } else {
                    decay(d, env, dt_min);
                }
            }
            (Flow::Vapor { rate }, Continuous::Offset(d)) => {
                if st.on {
                    let base = env.baselines.vapor();
                    *d = physics::vapor_step(base + *d, *rate, env.physics.room_volume, true, dt_min) - base;
                } else {
                    decay(d, env, dt_min);
                }
            }
            (Flow::Smoke { rate }, Continuous::Offset(d)) => {
                if st.on {
                    *d = physics::smoke_step(*d, *rate, true, dt_min);
                } else {
                    decay(d, env, dt_min);
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Influence of this PeM at `distance` meters at time `t` seconds.
    ///
    /// Units: temperature ΔT °F, vapor Δw g/m³, lux, dB (`-inf` when silent),
    /// motion 0/1, smoke Δ mg/m³. Dependency PeMs have no influence of their
    /// own; callers evaluate the source PeM at this PeM's distance instead.
    pub fn output_at(&self, st: &PemState, distance: f64, t: f64, motion_range: f64, min_speed: f64) -> f64 {
        match (&self.flow, &st.cont) {
            (Flow::Diffusion { .. }, Continuous::Heat(field)) => field.sample(distance) - field.boundary_far,
            (_, Continuous::Offset(d)) => *d,
            (Flow::Light { lumens }, _) if st.on => physics::illuminance_at(*lumens, distance).unwrap_or(0.0),
            (Flow::Sound { level }, _) if st.on => physics::sound_at(*level, distance).unwrap_or(f64::NEG_INFINITY),
            (Flow::Motion { speed, start_distance }, _) if st.on => {
                let elapsed_min = (t - st.on_since) / 60.0;
                let d = (start_distance - speed * elapsed_min).max(0.0);
                f64::from(u8::from(physics::motion_detect(d, *speed, motion_range, min_speed)))
            }
            (Flow::Sound { .. }, _) => f64::NEG_INFINITY,
            _ => 0.0,
        }
    }

    /// Influence at a named sensor.
    pub fn actuator_output(&self, st: &PemState, sensor: &SensorPem, t: f64) -> Result<f64, PemError> {
        let d = *self
            .distances
            .get(&sensor.id)
            .ok_or_else(|| PemError::UnknownSensor { pem: self.id.clone(), sensor: sensor.id.clone() })?;
        Ok(self.output_at(st, d, t, sensor.sensitivity, sensor.min_speed))
    }
}

fn decay(d: &mut f64, env: &Environment, dt_min: f64) {
    if let Some(k) = env.physics.decay_per_min {
        *d *= (-k * dt_min).exp();
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PemError {
    #[error("PeM {pem} has no distance to sensor {sensor}")]
    UnknownSensor { pem: String, sensor: String },
}

impl SensorPem {
    pub fn sensor_output(&self, ambient: f64, baseline: f64) -> SensorReading {
        match self.channel {
            Channel::Motion => SensorReading::Detected(ambient > 0.5),
            _ => physics::sensor_read(ambient, self.sensitivity, self.output_kind, baseline),
        }
    }

    /// Number of simulation steps between readings.
    pub fn period_steps(&self, dt: f64) -> usize {
        ((self.sample_period / dt).round() as usize).max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tv_sound() -> ActuatorPem {
        ActuatorPem {
            id: "tv_sound".into(),
            device: "tv".into(),
            command: "tv.on".into(),
            channel: Channel::Sound,
            flow: Flow::Sound { level: 62.0 },
            distances: [("sound".to_string(), 2.0)].into(),
            operating_time: Some(25.0),
            labels: BTreeMap::new(),
        }
    }

    fn sound_sensor() -> SensorPem {
        SensorPem {
            id: "sound".into(),
            channel: Channel::Sound,
            sensitivity: 55.0,
            sample_period: 1.0,
            output_kind: ReadingKind::Boolean,
            min_speed: 0.0,
            depends_on: None,
        }
    }

    #[test]
    fn tv_sound_output() {
        let env = Environment::default();
        let pem = tv_sound();
        let mut st = pem.initial_state(&env).unwrap();
        let s = sound_sensor();
        assert_eq!(pem.actuator_output(&st, &s, 0.0).unwrap(), f64::NEG_INFINITY);
        pem.invoke(&mut st, 0.0);
        assert_abs_diff_eq!(pem.actuator_output(&st, &s, 0.0).unwrap(), 55.98, epsilon = 0.005);
        let other = SensorPem { id: "illum".into(), ..s };
        assert!(pem.actuator_output(&st, &other, 0.0).is_err());
    }

    #[test]
    fn invoke_is_idempotent() {
        let env = Environment::default();
        let pem = ActuatorPem { operating_time: Some(3.0), ..tv_sound() };
        let mut st = pem.initial_state(&env).unwrap();
        assert!(pem.invoke(&mut st, 0.0));
        assert!(!pem.invoke(&mut st, 60.0));
        assert_eq!(st.expires_at, Some(180.0));
        assert_eq!(st.on_since, 0.0);
    }

    #[test]
    fn vacuum_approach() {
        let env = Environment::default();
        let pem = ActuatorPem {
            id: "vacuum_motion".into(),
            device: "vacuum".into(),
            command: "vacuum.on".into(),
            channel: Channel::Motion,
            flow: Flow::Motion { speed: 1.0, start_distance: 2.0 },
            distances: [("motion".to_string(), 2.0)].into(),
            operating_time: Some(20.0),
            labels: BTreeMap::new(),
        };
        let mut st = pem.initial_state(&env).unwrap();
        pem.invoke(&mut st, 600.0);
        assert_eq!(pem.output_at(&st, 2.0, 659.0, 1.0, 0.1), 0.0);
        assert_eq!(pem.output_at(&st, 2.0, 660.0, 1.0, 0.1), 1.0);
    }

    #[test]
    fn sensor_output_examples() {
        let s = sound_sensor();
        assert_eq!(s.sensor_output(56.25, 30.0), SensorReading::Detected(true));
        let m = SensorPem { channel: Channel::Motion, sensitivity: 1.0, ..sound_sensor() };
        assert_eq!(m.sensor_output(0.0, 0.0), SensorReading::Detected(false));
        let t = SensorPem { channel: Channel::Temperature, sensitivity: 1.8, output_kind: ReadingKind::Numeric, ..sound_sensor() };
        assert_eq!(t.sensor_output(71.7, 70.0), SensorReading::Level(70.0));
    }

    #[test]
    fn hvac_offset_clamps() {
        let env = Environment::default();
        let pem = ActuatorPem {
            id: "heater_temp".into(),
            device: "heater".into(),
            command: "heater.on".into(),
            channel: Channel::Temperature,
            flow: Flow::Hvac { rate: 0.5, setpoint: Some(82.0) },
            distances: [("temp".to_string(), 2.8)].into(),
            operating_time: None,
            labels: BTreeMap::new(),
        };
        let mut st = pem.initial_state(&env).unwrap();
        pem.invoke(&mut st, 0.0);
        for _ in 0..3600 {
            pem.advance(&mut st, &env, 1.0).unwrap();
        }
        assert_abs_diff_eq!(pem.output_at(&st, 2.8, 3600.0, 0.0, 0.0), 12.0, epsilon = 1e-9);
    }
}
