//! Browser bindings for the homeostatic agent: trace arithmetic and whole
//! scenario runs, returned as JSON strings for the static demo page.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use homeostatic_agent::metrics::compute_metrics;
use homeostatic_agent::scenario::{Ablation, ScenarioConfig};
use homeostatic_agent::sim::run;
use homeostatic_agent::trace::{effective_memory_horizon, trace_update, Signal, TemporalTrace};
use homeostatic_agent::Result;

/// Longest run the page will ask for; keeps the tab responsive.
pub const MAX_TICKS: i64 = 5000;
pub const MAX_STEPS: u32 = 500;

pub const SCENARIOS: [(&str, &str); 5] = [
    ("cold_world", include_str!("../../../scenarios/cold_world.toml")),
    ("fever", include_str!("../../../scenarios/fever.toml")),
    ("looming", include_str!("../../../scenarios/looming.toml")),
    ("fast_goal", include_str!("../../../scenarios/fast_goal.toml")),
    ("forgetting_phases", include_str!("../../../scenarios/forgetting_phases.toml")),
];

pub fn builtin(name: &str) -> Option<&'static str> {
    SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Trace of a constant signal `s` folded `steps` times from `m0`, with the
/// closed form alongside and the 1% memory horizon.
pub fn trace_curve_json(delta: f64, m0: f64, s: f64, steps: u32) -> Result<String> {
    let steps = steps.min(MAX_STEPS);
    let signal = Signal::new(vec![s])?;
    let mut m = TemporalTrace::new(vec![m0], delta)?;
    let mut values = vec![m0];
    let mut closed = vec![m0];
    for n in 1..=steps {
        m = trace_update(&m, &signal, delta)?;
        values.push(m.values()[0]);
        closed.push(s + (1.0 - delta).powi(n as i32) * (m0 - s));
    }
    Ok(json!({
        "values": values,
        "closed_form": closed,
        "horizon": effective_memory_horizon(delta, 0.01)?,
    })
    .to_string())
}

/// Runs a scenario given as TOML text and returns the series the page plots.
pub fn run_scenario_json(text: &str, seed: u64, ticks: i64, ablations: &str) -> Result<String> {
    let mut cfg = ScenarioConfig::from_toml_str(text, "scenario")?;
    cfg.seed = seed;
    cfg.ticks = ticks.clamp(0, MAX_TICKS);
    let extra = ablations
        .split(',')
        .map(str::trim)
        .filter(|a| !a.is_empty())
        .map(Ablation::parse)
        .collect::<Result<Vec<_>>>()?;
    cfg.add_ablations(&extra);
    cfg.validate()?;
    let (log, _) = run(&cfg)?;
    let metrics = compute_metrics(&log, Some(cfg.ticks as u64))?;

    let hvars: serde_json::Map<String, Value> = log
        .layout
        .hvars
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let current: Vec<f64> = log.rows.iter().map(|r| r.hvars[i].current).collect();
            let target: Vec<f64> = log.rows.iter().map(|r| r.hvars[i].target).collect();
            (q.clone(), json!({ "current": current, "target": target }))
        })
        .collect();
    let modes: serde_json::Map<String, Value> = log
        .layout
        .subsystems
        .iter()
        .enumerate()
        .map(|(i, (name, _))| {
            let m: Vec<&str> = log.rows.iter().map(|r| r.subsystems[i].mode.as_str()).collect();
            (name.clone(), json!(m))
        })
        .collect();
    let actions: Vec<&str> = log.rows.iter().map(|r| r.action.label()).collect();
    let path: Vec<[i64; 2]> = log.rows.iter().map(|r| [r.x, r.y]).collect();
    Ok(json!({
        "name": cfg.name,
        "seed": cfg.seed,
        "ticks": log.rows.len(),
        "truncation": log.truncation,
        "actions": actions,
        "path": path,
        "hvars": hvars,
        "modes": modes,
        "metrics": serde_json::to_value(&metrics).expect("metrics serialise"),
    })
    .to_string())
}

fn js(e: homeostatic_agent::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn scenario_names() -> String {
    json!(SCENARIOS.iter().map(|(n, _)| *n).collect::<Vec<_>>()).to_string()
}

#[wasm_bindgen]
pub fn scenario_text(name: &str) -> std::result::Result<String, JsError> {
    builtin(name)
        .map(str::to_string)
        .ok_or_else(|| JsError::new(&format!("no scenario named {name}")))
}

#[wasm_bindgen]
pub fn trace_curve(delta: f64, m0: f64, s: f64, steps: u32) -> std::result::Result<String, JsError> {
    trace_curve_json(delta, m0, s, steps).map_err(js)
}

#[wasm_bindgen]
pub fn memory_horizon(delta: f64, epsilon: f64) -> std::result::Result<u32, JsError> {
    effective_memory_horizon(delta, epsilon).map_err(js)
}

#[wasm_bindgen]
pub fn run_scenario(text: &str, seed: u64, ticks: i64, ablations: &str) -> std::result::Result<String, JsError> {
    run_scenario_json(text, seed, ticks, ablations).map_err(js)
}
