//! Browser bindings over the bundled reference home.
//!
//! Each export takes and returns JSON strings; the plain functions behind
//! them are public so they can be tested natively.

use physchan::analysis::{reports_json, Engine, SearchConfig, Settings, Validator};
use physchan::calibration::pem_trace;
use physchan::config::{reference_config, Home};
use physchan::physics::{aggregate, sound_at, Channel};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use wasm_bindgen::prelude::*;

fn home() -> Result<Home, String> {
    reference_config().build().map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoundSource {
    pub device: String,
    /// dB at 1 m.
    pub level: f64,
    /// Meters to the sound sensor.
    pub distance: f64,
}

/// Sound-emitting devices of the reference home and their placement.
pub fn sound_sources() -> Result<Vec<SoundSource>, String> {
    let cfg = reference_config();
    Ok(cfg
        .devices
        .iter()
        .flat_map(|d| {
            d.influences.iter().filter(|i| i.channel == Channel::Sound).map(|i| SoundSource {
                device: d.name.clone(),
                level: i.value.unwrap_or_default(),
                distance: i.distance.unwrap_or(1.0),
            })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoundMix {
    pub at_sensor: BTreeMap<String, f64>,
    /// Ambient level including the room baseline.
    pub ambient: f64,
    pub threshold: f64,
    pub detected: bool,
}

/// Combined level at the sound sensor for the given running sources.
pub fn sound_mix(sources: &[SoundSource]) -> Result<SoundMix, String> {
    let home = home()?;
    let sensor = home.cpem.sensor("sound").ok_or("reference home has no sound sensor")?;
    let mut at_sensor = BTreeMap::new();
    for s in sources {
        at_sensor.insert(s.device.clone(), sound_at(s.level, s.distance).map_err(|e| e.to_string())?);
    }
    let levels: Vec<f64> = at_sensor.values().copied().collect();
    let ambient = aggregate(Channel::Sound, &levels).unwrap_or(home.cpem.model.env.baselines.sound);
    Ok(SoundMix { at_sensor, ambient, threshold: sensor.sensitivity, detected: ambient >= sensor.sensitivity })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatProfile {
    pub minutes: Vec<f64>,
    /// °F at the temperature sensor.
    pub ambient: Vec<f64>,
    /// First minute the rise reaches the sensor's resolution.
    pub first_visible: Option<f64>,
}

/// Ambient temperature at the sensor while a heat source runs.
pub fn heat_profile(surface_temp: f64, distance: f64, minutes: f64) -> Result<HeatProfile, String> {
    if !(minutes > 0.0 && minutes <= 240.0) {
        return Err(format!("minutes must be in (0, 240], got {minutes}"));
    }
    let home = home()?;
    let env = home.cpem.model.env;
    let sensor = home.cpem.sensor("temp").ok_or("reference home has no temperature sensor")?;
    let mut oven = home.cpem.actuator("oven_temp").ok_or("reference home has no oven")?.clone();
    oven.flow = oven.flow.with_property(surface_temp);
    oven.distances.insert(sensor.id.clone(), distance);
    oven.operating_time = None;
    let times: Vec<f64> = (0..=(minutes * 60.0) as u32).step_by(10).map(f64::from).collect();
    let ambient = pem_trace(&oven, sensor, &env, &times).map_err(|e| e.to_string())?;
    let first_visible =
        times.iter().zip(&ambient).find(|(_, v)| **v - env.baselines.temperature >= sensor.sensitivity).map(|(t, _)| t / 60.0);
    Ok(HeatProfile { minutes: times.iter().map(|t| t / 60.0).collect(), ambient, first_visible })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsifyResult {
    pub summary: String,
    pub simulations: u64,
    pub violations: serde_json::Value,
}

/// Falsify the selected policies (classes or ids, comma separated) on the reference home.
pub fn falsify(selection: &str, seed: u64) -> Result<FalsifyResult, String> {
    let home = home()?;
    let wanted: Vec<&str> = selection.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let policies: Vec<_> = home
        .policies()
        .map_err(|e| e.to_string())?
        .instances
        .into_iter()
        .filter(|p| wanted.is_empty() || wanted.iter().any(|w| *w == p.id || *w == p.class.name()))
        .collect();
    if policies.is_empty() {
        return Err(format!("no policy matches '{selection}'"));
    }
    let settings = Settings::from_config(&home.config).map_err(|e| e.to_string())?;
    let v = Validator::new(&home.cpem, settings.dt, settings.horizon).map_err(|e| e.to_string())?;
    let engine = Engine::Falsify(SearchConfig { seed, bounds: (0.0, settings.horizon), ..SearchConfig::default() });
    let out = v.validate_all(&policies, &engine, &settings).map_err(|e| e.to_string())?;
    let violations = serde_json::from_str(&reports_json(&out.reports)).map_err(|e| e.to_string())?;
    Ok(FalsifyResult { summary: out.summary_table(), simulations: out.simulations, violations })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = soundSources)]
pub fn sound_sources_js() -> Result<String, JsError> {
    to_js(sound_sources())
}

#[wasm_bindgen(js_name = soundMix)]
pub fn sound_mix_js(sources: &str) -> Result<String, JsError> {
    let sources: Vec<SoundSource> = serde_json::from_str(sources).map_err(|e| JsError::new(&e.to_string()))?;
    to_js(sound_mix(&sources))
}

#[wasm_bindgen(js_name = heatProfile)]
pub fn heat_profile_js(surface_temp: f64, distance: f64, minutes: f64) -> Result<String, JsError> {
    to_js(heat_profile(surface_temp, distance, minutes))
}

#[wasm_bindgen(js_name = falsify)]
pub fn falsify_js(selection: &str, seed: u32) -> Result<String, JsError> {
    to_js(falsify(selection, u64::from(seed)))
}
