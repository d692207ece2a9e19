//! Browser bindings for the demo page. Every export takes plain values and
//! returns a JSON string; errors come back as `{"error": "..."}`.

use hazsynth_core::extract::{dedup_projections, enumerate_unsafe, project_proactive, ExtractOptions};
use hazsynth_core::sim::{classify_trace, run_episode, InfeasiblePolicy, Scenario, DEFAULT_THRESHOLD};
use hazsynth_core::{bundled, parse_model, synthesize_model, HazError};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn render(r: Result<Value, HazError>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e.to_string() }).to_string(),
    }
}

pub fn synthesize_json(src: &str) -> String {
    render((|| {
        let model = parse_model(src)?;
        let sup = synthesize_model(&model)?;
        Ok(json!({
            "states": sup.automaton.num_states(),
            "transitions": sup.automaton.num_transitions(),
            "unrestricted_states": sup.unrestricted_states,
            "unrestricted_transitions": sup.unrestricted_transitions,
            "removed_states": sup.removed_states.len(),
            "empty": sup.empty,
            "dot": sup.automaton.to_dot(),
        }))
    })())
}

pub fn extract_json(src: &str, horizon: usize, count_terminal_event: bool) -> String {
    render((|| {
        let model = parse_model(src)?;
        let sup = synthesize_model(&model)?;
        if sup.empty {
            return Ok(json!({ "full": [], "proactive": [] }));
        }
        let mut opts = ExtractOptions::new(horizon);
        opts.count_terminal_event = count_terminal_event;
        let full = enumerate_unsafe(&sup, opts)?;
        let table = model.event_table();
        let proj = full
            .iter()
            .map(|s| project_proactive(s, &table))
            .collect::<Result<Vec<_>, _>>()?;
        let proj = dedup_projections(&proj);
        Ok(json!({
            "full": full.iter().map(|s| s.joined()).collect::<Vec<_>>(),
            "proactive": proj.iter().map(|s| s.joined()).collect::<Vec<_>>(),
        }))
    })())
}

pub fn simulate_json(sequence: &str, seed: u64, latency: f64, braking: f64) -> String {
    render((|| {
        let mut sc = Scenario::scenario_a();
        sc.robot.detection_latency = latency;
        sc.robot.braking_time = braking;
        sc.validate()?;
        let events: Vec<String> = sequence.split_whitespace().map(String::from).collect();
        if events.is_empty() {
            return Err(HazError::Config("empty sequence".into()));
        }
        let tr = run_episode(&sc, &events, seed, InfeasiblePolicy::Skip)?;
        let areas: Vec<Value> = sc.areas.iter().map(|(k, r)| json!({ "name": k, "region": r })).collect();
        Ok(json!({
            "verdict": classify_trace(&tr, DEFAULT_THRESHOLD),
            "summary": tr.summary(),
            "path": sc.robot.path,
            "areas": areas,
            "samples": tr.samples.iter().map(|s| json!([s.t, s.human[0], s.human[1], s.tcp[0], s.tcp[1], s.v_r, s.r, s.contact])).collect::<Vec<_>>(),
        }))
    })())
}

#[wasm_bindgen]
pub fn synthesize(src: &str) -> String {
    synthesize_json(src)
}

#[wasm_bindgen]
pub fn extract(src: &str, horizon: usize, count_terminal_event: bool) -> String {
    extract_json(src, horizon, count_terminal_event)
}

#[wasm_bindgen]
pub fn simulate(sequence: &str, seed: u32, latency: f64, braking: f64) -> String {
    simulate_json(sequence, seed as u64, latency, braking)
}

#[wasm_bindgen]
pub fn bundled_model(name: &str) -> String {
    match name {
        "intro" => bundled::INTRO_DES.to_string(),
        _ => bundled::SCENARIO_A_DES.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn synthesize_reports_sizes() {
        let v = parse(&synthesize_json(bundled::INTRO_DES));
        assert_eq!(v["states"], 3);
        assert_eq!(v["removed_states"], 2);
        let v = parse(&synthesize_json("model m; event"));
        assert!(v["error"].as_str().unwrap().contains("1:"));
    }

    #[test]
    fn extract_lists_sequences() {
        let v = parse(&extract_json(bundled::SCENARIO_A_DES, 10, true));
        assert_eq!(v["proactive"].as_array().unwrap().len(), 2);
        assert_eq!(v["full"][1], "b2 r t1 u_S r t1 t2 d_R c");
    }

    #[test]
    fn simulate_returns_frames() {
        let v = parse(&simulate_json("b2 r t1 u_S r t1 t2 d_R", 3, 0.1, 0.3));
        assert_eq!(v["verdict"], "unsafe");
        assert!(v["samples"].as_array().unwrap().len() > 10);
        let v = parse(&simulate_json("", 3, 0.1, 0.3));
        assert!(v.get("error").is_some());
        let v = parse(&simulate_json("t1", 3, -1.0, 0.3));
        assert!(v.get("error").is_some());
    }
}
