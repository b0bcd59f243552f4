//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export returns a flat `Float64Array` with a fixed record layout
//! documented on the function. The plain functions in [`demo`] carry the
//! logic and are tested natively; the exports only convert errors.

use wasm_bindgen::prelude::*;

pub mod demo;

fn js(e: pvn_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Values of `count` random policies of the two-state MDP:
/// `[v1, v2, j]` per policy.
#[wasm_bindgen]
pub fn sample_polytope(count: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    demo::sample_polytope(count, seed).map_err(js)
}

/// Exact gradient of `J` on a `resolution x resolution` grid of cell centres
/// in policy space: `[p1, p2, g1, g2]` per cell.
#[wasm_bindgen]
pub fn gradient_field(resolution: usize) -> Result<Vec<f64>, JsError> {
    demo::gradient_field(resolution).map_err(js)
}

/// Exact gradient ascent from `(p1, p2)`: `[p1, p2, v1, v2, j]` per step.
#[wasm_bindgen]
pub fn ascend(p1: f64, p2: f64, steps: usize, lr: f64) -> Result<Vec<f64>, JsError> {
    demo::ascend(p1, p2, steps, lr).map_err(js)
}

/// One episode of a random linear softmax policy: `[x, theta]` per visited
/// state. The episode length is the return.
#[wasm_bindgen]
pub fn cartpole_episode(seed: u64, temperature: f64) -> Result<Vec<f64>, JsError> {
    demo::cartpole_episode(seed, temperature).map_err(js)
}
