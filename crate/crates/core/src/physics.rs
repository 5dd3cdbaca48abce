//! Flow functions and sensor threshold functions for the six physical channels.
//!
//! Everything here is a pure function of its arguments. Temperatures are in °F,
//! humidity content in g/m³, illuminance in lux, sound in dB SPL, distances in
//! meters and smoke density in mg/m³.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhysicsError {
    #[error("unstable heat step: dt = {dt} s exceeds the admissible {max_dt} s for dx = {dx} m")]
    Cfl { dt: f64, max_dt: f64, dx: f64 },
    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, PhysicsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Temperature,
    Humidity,
    Illuminance,
    Sound,
    Motion,
    Smoke,
}

impl Channel {
    pub const ALL: [Channel; 6] = [
        Channel::Temperature,
        Channel::Humidity,
        Channel::Illuminance,
        Channel::Sound,
        Channel::Motion,
        Channel::Smoke,
    ];

    pub fn unit(self) -> &'static str {
        match self {
            Channel::Temperature => "°F",
            Channel::Humidity => "RH%",
            Channel::Illuminance => "lux",
            Channel::Sound => "dB",
            Channel::Motion => "m",
            Channel::Smoke => "mg/m³",
        }
    }

    pub fn is_log_scale(self) -> bool {
        self == Channel::Sound
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Temperature => "temperature",
            Channel::Humidity => "humidity",
            Channel::Illuminance => "illuminance",
            Channel::Sound => "sound",
            Channel::Motion => "motion",
            Channel::Smoke => "smoke",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadingKind {
    Boolean,
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SensorReading {
    Detected(bool),
    Level(f64),
}

impl SensorReading {
    /// Numeric view used for traces: booleans become 0/1.
    pub fn value(self) -> f64 {
        match self {
            SensorReading::Detected(b) => f64::from(u8::from(b)),
            SensorReading::Level(v) => v,
        }
    }
}

/// The device-side parameter of a flow function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum DeviceProperty {
    /// Surface temperature of a diffusion source, °F.
    SurfaceTemp(f64),
    /// HVAC rate, °F/min. Negative for cooling.
    HvacRate(f64),
    /// Vapor generation (positive) or removal (negative), g/min.
    VaporRate(f64),
    Lumens(f64),
    /// Sound pressure level at 1 m, dB.
    SoundLevel(f64),
    /// Approach speed, m/min.
    Speed(f64),
    /// Smoke generation rate, mg/m³/min.
    SmokeRate(f64),
}

impl DeviceProperty {
    pub fn value(self) -> f64 {
        match self {
            DeviceProperty::SurfaceTemp(v)
            | DeviceProperty::HvacRate(v)
            | DeviceProperty::VaporRate(v)
            | DeviceProperty::Lumens(v)
            | DeviceProperty::SoundLevel(v)
            | DeviceProperty::Speed(v)
            | DeviceProperty::SmokeRate(v) => v,
        }
    }

    pub fn with_value(self, v: f64) -> Self {
        match self {
            DeviceProperty::SurfaceTemp(_) => DeviceProperty::SurfaceTemp(v),
            DeviceProperty::HvacRate(_) => DeviceProperty::HvacRate(v),
            DeviceProperty::VaporRate(_) => DeviceProperty::VaporRate(v),
            DeviceProperty::Lumens(_) => DeviceProperty::Lumens(v),
            DeviceProperty::SoundLevel(_) => DeviceProperty::SoundLevel(v),
            DeviceProperty::Speed(_) => DeviceProperty::Speed(v),
            DeviceProperty::SmokeRate(_) => DeviceProperty::SmokeRate(v),
        }
    }

    pub fn channel(self) -> Channel {
        match self {
            DeviceProperty::SurfaceTemp(_) | DeviceProperty::HvacRate(_) => Channel::Temperature,
            DeviceProperty::VaporRate(_) => Channel::Humidity,
            DeviceProperty::Lumens(_) => Channel::Illuminance,
            DeviceProperty::SoundLevel(_) => Channel::Sound,
            DeviceProperty::Speed(_) => Channel::Motion,
            DeviceProperty::SmokeRate(_) => Channel::Smoke,
        }
    }

    pub fn validate(self) -> Result<()> {
        let v = self.value();
        if !v.is_finite() {
            return Err(PhysicsError::Domain(format!("{self:?} is not finite")));
        }
        let non_negative = matches!(
            self,
            DeviceProperty::Lumens(_)
                | DeviceProperty::SoundLevel(_)
                | DeviceProperty::Speed(_)
                | DeviceProperty::SmokeRate(_)
        );
        if non_negative && v < 0.0 {
            return Err(PhysicsError::Domain(format!("{self:?} must be >= 0")));
        }
        Ok(())
    }
}

/// 1-D temperature profile between a heat source (x = 0) and a far boundary (x = e).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatField {
    pub grid: Vec<f64>,
    pub dx: f64,
    pub alpha: f64,
    pub boundary_source: f64,
    pub boundary_far: f64,
}

impl HeatField {
    /// Field at uniform `t0` with the source boundary already at `source`.
    pub fn new(length: f64, dx: f64, alpha: f64, t0: f64, source: f64) -> Result<Self> {
        if !(dx > 0.0) || !(alpha > 0.0) || !(length > 0.0) {
            return Err(PhysicsError::Domain(format!(
                "heat field needs positive length, dx and alpha (got {length}, {dx}, {alpha})"
            )));
        }
        let cells = (length / dx).round() as usize;
        if cells < 2 {
            return Err(PhysicsError::Domain(format!(
                "heat field with length {length} and dx {dx} has fewer than 3 points"
            )));
        }
        let mut grid = vec![t0; cells + 1];
        grid[0] = source;
        Ok(HeatField { grid, dx, alpha, boundary_source: source, boundary_far: t0 })
    }

    pub fn max_stable_dt(&self) -> f64 {
        0.5 * self.dx * self.dx / self.alpha
    }

    pub fn length(&self) -> f64 {
        self.dx * (self.grid.len() - 1) as f64
    }

    /// In-place explicit step. See [`heat_diffusion_step`].
    pub fn step(&mut self, dt: f64) -> Result<()> {
        let max_dt = self.max_stable_dt();
        if !(dt >= 0.0) || dt > max_dt {
            return Err(PhysicsError::Cfl { dt, max_dt, dx: self.dx });
        }
        let r = self.alpha * dt / (self.dx * self.dx);
        let n = self.grid.len();
        let mut prev = self.grid[0];
        for i in 1..n - 1 {
            let cur = self.grid[i];
            self.grid[i] = cur + r * (prev - 2.0 * cur + self.grid[i + 1]);
            prev = cur;
        }
        self.grid[0] = self.boundary_source;
        self.grid[n - 1] = self.boundary_far;
        Ok(())
    }

    /// Linear interpolation of the profile at distance `x` from the source.
    /// Beyond the far boundary the far value is returned.
    pub fn sample(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return self.grid[0];
        }
        let pos = x / self.dx;
        let i = pos.floor() as usize;
        if i >= self.grid.len() - 1 {
            return self.grid[self.grid.len() - 1];
        }
        let frac = pos - i as f64;
        self.grid[i] * (1.0 - frac) + self.grid[i + 1] * frac
    }
}

/// One forward-Euler step of the heat equation with pinned boundaries.
pub fn heat_diffusion_step(field: &HeatField, dt: f64) -> Result<HeatField> {
    let mut next = field.clone();
    next.step(dt)?;
    Ok(next)
}

/// HVAC temperature ODE. `dt` in minutes. A set-point stops the drift but
/// never pushes a value that is already past it back toward it.
pub fn hvac_step(t: f64, t_delta: f64, on: bool, dt: f64, setpoint: Option<f64>) -> f64 {
    if !on {
        return t;
    }
    let next = t + t_delta * dt;
    match setpoint {
        Some(sp) if t_delta > 0.0 => next.min(t.max(sp)),
        Some(sp) if t_delta < 0.0 => next.max(t.min(sp)),
        _ => next,
    }
}

/// Saturation vapor content (g/m³) at temperature `t` (°F).
pub fn humidity_capacity(t: f64) -> f64 {
    2.6055 * (0.0262 * t).exp()
}

pub fn relative_humidity(w: f64, ws: f64) -> Result<f64> {
    if !(ws > 0.0) {
        return Err(PhysicsError::Domain(format!("vapor capacity must be > 0 (got {ws})")));
    }
    Ok((100.0 * w.max(0.0) / ws).clamp(0.0, 100.0))
}

/// Vapor content ODE. `rate` in g/min, `dt` in minutes.
pub fn vapor_step(w: f64, rate: f64, room_volume: f64, on: bool, dt: f64) -> f64 {
    if !on {
        return w;
    }
    (w + rate / room_volume * dt).max(0.0)
}

pub fn illuminance_at(lumens: f64, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(PhysicsError::Domain(format!("distance must be > 0 (got {x})")));
    }
    Ok(lumens / (4.0 * std::f64::consts::PI * x * x))
}

pub fn sound_at(sp1: f64, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(PhysicsError::Domain(format!("distance must be > 0 (got {x})")));
    }
    Ok(sp1 + 20.0 * (1.0 / x).log10())
}

/// Smoke density ODE. `dt` in minutes.
pub fn smoke_step(density: f64, rate: f64, on: bool, dt: f64) -> f64 {
    if !on {
        return density;
    }
    (density + rate * dt).max(0.0)
}

pub fn motion_detect(source_distance: f64, speed: f64, range: f64, min_speed: f64) -> bool {
    source_distance <= range && speed >= min_speed
}

/// Threshold function of a sensor. Numeric sensors report the baseline plus
/// whole multiples of the sensitivity, so smaller changes are invisible.
pub fn sensor_read(v: f64, th: f64, kind: ReadingKind, baseline: f64) -> SensorReading {
    match kind {
        ReadingKind::Boolean => SensorReading::Detected(v >= th),
        ReadingKind::Numeric => {
            let q = (v - baseline) / th;
            // Absorb rounding so exact multiples land on their own level.
            let steps = (q + 1e-9 * q.signum()).trunc();
            SensorReading::Level(baseline + steps * th)
        }
    }
}

/// Combine simultaneous influences on one channel. Sound adds on a power
/// scale and ignores silent (`-inf`) sources; motion is a logical OR over
/// 0/1 values. `None` for an empty list.
pub fn aggregate(channel: Channel, influences: &[f64]) -> Option<f64> {
    if influences.is_empty() {
        return None;
    }
    Some(match channel {
        Channel::Sound => {
            let power: f64 = influences
                .iter()
                .filter(|v| v.is_finite())
                .map(|v| 10f64.powf(v / 10.0))
                .sum();
            if power > 0.0 {
                10.0 * power.log10()
            } else {
                f64::NEG_INFINITY
            }
        }
        Channel::Motion => {
            if influences.iter().any(|v| *v > 0.5) {
                1.0
            } else {
                0.0
            }
        }
        _ => influences.iter().sum(),
    })
}
