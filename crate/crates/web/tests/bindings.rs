use homeostat_web::{builtin, run_scenario_json, trace_curve_json, SCENARIOS};
use serde_json::Value;

#[test]
fn trace_curve_matches_closed_form() {
    let v: Value = serde_json::from_str(&trace_curve_json(0.5, 0.0, 1.0, 3).unwrap()).unwrap();
    let values: Vec<f64> = serde_json::from_value(v["values"].clone()).unwrap();
    assert_eq!(values, vec![0.0, 0.5, 0.75, 0.875]);
    assert_eq!(v["closed_form"], v["values"]);
    assert_eq!(v["horizon"], 7);
    assert!(trace_curve_json(0.0, 0.0, 1.0, 3).is_err());
}

#[test]
fn every_builtin_scenario_runs() {
    for (name, text) in SCENARIOS {
        let v: Value = serde_json::from_str(&run_scenario_json(text, 3, 50, "").unwrap()).unwrap();
        assert_eq!(v["name"], name);
        assert_eq!(v["ticks"], 50);
        assert_eq!(v["actions"].as_array().unwrap().len(), 50);
        assert_eq!(v["hvars"]["body.core_temp"]["current"].as_array().unwrap().len(), 50);
    }
}

#[test]
fn ablations_and_bad_input() {
    let text = builtin("fever").unwrap();
    let v: Value = serde_json::from_str(&run_scenario_json(text, 1, 20, "no_memory, no_topdown").unwrap()).unwrap();
    assert_eq!(v["metrics"]["imprints"], 0);
    assert!(run_scenario_json(text, 1, 20, "no_such").is_err());
    assert!(run_scenario_json("ticks = ", 1, 20, "").is_err());
    assert!(builtin("nowhere").is_none());
}

#[test]
fn runs_are_capped() {
    let text = builtin("looming").unwrap();
    let v: Value = serde_json::from_str(&run_scenario_json(text, 1, 1_000_000, "").unwrap()).unwrap();
    assert_eq!(v["ticks"], 5000);
}
