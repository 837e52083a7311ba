//! wasm-bindgen exports for the static demo page in `www/`. Each call returns
//! a JSON string (or throws with the library's error message).

use wasm_bindgen::prelude::*;

pub mod demo;

fn to_js<T: serde::Serialize>(value: emphscore_core::Result<T>) -> Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

/// Demo vocabulary, its simulated-language map, and voice names.
#[wasm_bindgen]
pub fn vocabulary() -> Result<String, JsError> {
    to_js(demo::vocabulary())
}

/// F0, energy and frame probabilities of a synthesized sentence, plus per-word decisions.
#[wasm_bindgen]
pub fn analyze(sentence: &str, emphasized: usize, voice: &str) -> Result<String, JsError> {
    to_js(demo::analyze(sentence, emphasized, voice))
}

/// Audio of the sentence `analyze` looks at, as 16 kHz mono samples.
#[wasm_bindgen]
pub fn samples(sentence: &str, emphasized: usize, voice: &str) -> Result<Vec<f32>, JsError> {
    let w = demo::samples(sentence, emphasized, voice).map_err(|e| JsError::new(&e.to_string()))?;
    Ok(w.samples().iter().map(|&s| s as f32).collect())
}

/// Similarity matrix and links; `scorer` is "chargram" or "lexicon".
#[wasm_bindgen]
pub fn align(src: &str, tgt: &str, scorer: &str) -> Result<String, JsError> {
    to_js(demo::align(src, tgt, scorer))
}

/// Simulated translation of the sentence, scored for emphasis transfer.
#[wasm_bindgen]
pub fn translate(sentence: &str, emphasized: usize, voice: &str, order_seed: u32) -> Result<String, JsError> {
    to_js(demo::translate(sentence, emphasized, voice, order_seed as u64))
}
