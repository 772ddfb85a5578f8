//! WebAssembly bindings for the in-browser demo: projecting a score vector
//! with softmax or fusedmax, total-variation denoising, and extracting spans
//! from typed text with the phrase lexicon or a weight threshold.
//!
//! The plain functions return `Result<_, String>` and are tested natively;
//! the `#[wasm_bindgen]` wrappers only convert errors.

use serde::Serialize;
use spanattn::baseline::{phrase_extract, Lexicon};
use spanattn::data::ATTRIBUTES;
use spanattn::projections::{project_values, tv_prox, ProjectionConfig, ProjectionKind};
use wasm_bindgen::prelude::*;

pub fn projection(scores: &[f64], kind: &str, temperature: f64, tv_weight: f64) -> Result<Vec<f64>, String> {
    let kind: ProjectionKind = kind.parse().map_err(|e: spanattn::Error| e.to_string())?;
    let cfg = ProjectionConfig {
        kind,
        temperature,
        tv_weight,
    };
    cfg.validate().map_err(|e| e.to_string())?;
    project_values(scores, &cfg).map(|w| w.into_inner()).map_err(|e| e.to_string())
}

pub fn denoise(scores: &[f64], lambda: f64) -> Result<Vec<f64>, String> {
    tv_prox(scores, lambda).map_err(|e| e.to_string())
}

/// 1 where the weight is strictly above the threshold.
pub fn threshold(weights: &[f64], threshold: f64) -> Vec<u8> {
    weights.iter().map(|&w| u8::from(w > threshold)).collect()
}

#[derive(Serialize, Debug, PartialEq)]
pub struct PhraseHit {
    pub attribute: &'static str,
    pub class: &'static str,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

/// Whitespace tokens of `text` and the longest lexicon match per attribute.
pub fn phrases(text: &str) -> (Vec<String>, Vec<PhraseHit>) {
    let tokens: Vec<String> = text
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()).to_string())
        .filter(|t| !t.is_empty())
        .collect();
    let lex = Lexicon::default_lexicon();
    let hits = ATTRIBUTES
        .iter()
        .filter_map(|&a| {
            phrase_extract(&tokens, a, &lex).map(|m| PhraseHit {
                attribute: a.name(),
                class: a.class_name(m.class),
                start: m.start,
                end: m.end,
                text: tokens[m.start..m.end].join(" "),
            })
        })
        .collect();
    (tokens, hits)
}

fn js_err(e: String) -> JsValue {
    JsValue::from_str(&e)
}

#[wasm_bindgen]
pub fn project(scores: &[f64], kind: &str, temperature: f64, tv_weight: f64) -> Result<Vec<f64>, JsValue> {
    projection(scores, kind, temperature, tv_weight).map_err(js_err)
}

#[wasm_bindgen]
pub fn tv_denoise(scores: &[f64], lambda: f64) -> Result<Vec<f64>, JsValue> {
    denoise(scores, lambda).map_err(js_err)
}

#[wasm_bindgen]
pub fn threshold_mask(weights: &[f64], t: f64) -> Vec<u8> {
    threshold(weights, t)
}

/// JSON `{"tokens": [...], "hits": [{attribute, class, start, end, text}]}`.
#[wasm_bindgen]
pub fn extract_phrases(text: &str) -> String {
    #[derive(Serialize)]
    struct Out {
        tokens: Vec<String>,
        hits: Vec<PhraseHit>,
    }
    let (tokens, hits) = phrases(text);
    serde_json::to_string(&Out { tokens, hits }).expect("plain data serializes")
}
