//! Browser bindings: a lattice explorer, training curves and NDG paths.
//! Every entry point takes a run configuration as JSON and returns JSON.

use rldf::config::RunConfiguration;
use rldf::environment::Action;
use rldf::grammar::{EncodedState, Grammar};
use rldf::harness::{build_environment, greedy_rollout, probe_start, train};
use rldf::ndg::{ndg_start, run_ndg};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

type Out = Result<String, String>;

fn parse(config: &str) -> Result<RunConfiguration, String> {
    let doc: Value = serde_json::from_str(config).map_err(|e| e.to_string())?;
    RunConfiguration::from_value(doc, None, &[]).map_err(|e| e.to_string())
}

fn coords_of(s: &EncodedState) -> Vec<usize> {
    s.coords().to_vec()
}

fn prompt(g: &Grammar, s: &EncodedState) -> Result<String, String> {
    g.decode(s).map(|r| r.0).map_err(|e| e.to_string())
}

/// Axes, vocabularies and state count of the configured grammar.
pub fn grammar_json(config: &str) -> Out {
    let g = parse(config)?.load_grammar().map_err(|e| e.to_string())?;
    let axes: Vec<Value> = g
        .axes()
        .iter()
        .map(|a| json!({"name": a.name, "vocabulary": a.vocabulary}))
        .collect();
    Ok(json!({"axes": axes, "states": g.num_states()}).to_string())
}

/// Prompt, reward and distance of a state and of its one-step neighbours.
pub fn explore_json(config: &str, coords: &[i64]) -> Out {
    let resolved = parse(config)?.resolve().map_err(|e| e.to_string())?;
    let mut env = build_environment(&resolved).map_err(|e| e.to_string())?;
    let g = resolved.grammar.clone();
    let state = g.state_from_signed(coords).map_err(|e| e.to_string())?;
    let mut view = |s: &EncodedState| -> Result<Value, String> {
        let reward = env.evaluate(s).map_err(|e| e.to_string())?.1;
        Ok(json!({
            "coords": coords_of(s),
            "prompt": prompt(&g, s)?,
            "reward": reward,
            "distance": env.distance_to_terminal(s),
        }))
    };
    let here = view(&state)?;
    let mut neighbours = Vec::new();
    for a in Action::all(g.num_axes()) {
        let next = g.slide(&state, a.axis, i64::from(a.direction));
        if next != state {
            let mut v = view(&next)?;
            v["axis"] = json!(g.axes()[a.axis].name);
            v["direction"] = json!(a.direction);
            neighbours.push(v);
        }
    }
    Ok(json!({"state": here, "terminal": coords_of(&resolved.environment.terminal_state), "neighbours": neighbours}).to_string())
}

/// Per-episode distances and returns, the final statistics and the greedy
/// path from the first probe start.
pub fn train_json(config: &str) -> Out {
    let resolved = parse(config)?.resolve().map_err(|e| e.to_string())?;
    let mut env = build_environment(&resolved).map_err(|e| e.to_string())?;
    let out = train(&mut env, &resolved.agent, false).map_err(|e| e.to_string())?;
    let episodes: Vec<Value> = out
        .trajectories
        .iter()
        .map(|t| {
            let d = t.distances();
            json!({
                "episode": t.episode,
                "start_distance": t.start_distance,
                "final_distance": d.last().copied().unwrap_or(t.start_distance),
                "min_distance": d.iter().min().copied().unwrap_or(t.start_distance),
                "total_reward": t.total_reward(),
                "steps": t.steps.len(),
                "reached": t.reached_terminal,
            })
        })
        .collect();
    let g = &resolved.grammar;
    let terminal = &resolved.environment.terminal_state;
    let start = probe_start(g, &resolved.environment, 0).map_err(|e| e.to_string())?;
    let path = greedy_rollout(&out.q, g, &start, terminal, 4 * g.num_states().min(64))
        .iter()
        .map(|s| Ok(json!({"coords": coords_of(s), "prompt": prompt(g, s)?})))
        .collect::<Result<Vec<Value>, String>>()?;
    Ok(json!({
        "episodes": episodes,
        "statistics": out.statistics,
        "oracle_calls": out.oracle_calls,
        "greedy_path": path,
    })
    .to_string())
}

/// The visited states of one NDG run with their rewards.
pub fn ndg_json(config: &str) -> Out {
    let resolved = parse(config)?.resolve().map_err(|e| e.to_string())?;
    let mut env = build_environment(&resolved).map_err(|e| e.to_string())?;
    let start = ndg_start(&env, &resolved.ndg).map_err(|e| e.to_string())?;
    let result = run_ndg(&mut env, &start, &resolved.ndg).map_err(|e| e.to_string())?;
    let g = &resolved.grammar;
    let start_reward = env.evaluate(&start).map_err(|e| e.to_string())?.1;
    let mut path = vec![
        json!({"coords": coords_of(&start), "prompt": prompt(g, &start)?, "reward": start_reward, "distance": result.trajectory.start_distance}),
    ];
    for step in &result.trajectory.steps {
        path.push(json!({
            "coords": coords_of(&step.next_state),
            "prompt": prompt(g, &step.next_state)?,
            "reward": step.reward,
            "distance": step.distance_to_terminal,
        }));
    }
    Ok(json!({
        "status": result.status,
        "iterations": result.iterations,
        "oracle_calls": env.oracle().generations(),
        "path": path,
    })
    .to_string())
}

fn js(r: Out) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = grammar)]
pub fn grammar_js(config: &str) -> Result<String, JsError> {
    js(grammar_json(config))
}

#[wasm_bindgen(js_name = explore)]
pub fn explore_js(config: &str, coords: &[i32]) -> Result<String, JsError> {
    let coords: Vec<i64> = coords.iter().map(|&c| i64::from(c)).collect();
    js(explore_json(config, &coords))
}

#[wasm_bindgen(js_name = train)]
pub fn train_js(config: &str) -> Result<String, JsError> {
    js(train_json(config))
}

#[wasm_bindgen(js_name = ndg)]
pub fn ndg_js(config: &str) -> Result<String, JsError> {
    js(ndg_json(config))
}
