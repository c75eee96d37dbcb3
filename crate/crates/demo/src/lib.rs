//! Browser bindings for three small operations. Each takes plain strings and
//! returns a JSON string, so the page needs no glue beyond the generated
//! module. The `*_json` functions hold the logic and run natively in tests.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use fusegram::anomaly::{fit_iforest, iforest_score};
use fusegram::codec::{decode, encode_channels};
use fusegram::data::{synthesize, FusedSample, Label, SynthSpec};
use fusegram::kernels::KernelTag;
use fusegram::prob::{to_prob, ProbConfig};
use fusegram::util::squared_distance;
use fusegram::N_CHANNELS;

fn parse_channels(text: &str) -> Result<[f64; N_CHANNELS], String> {
    let values: Vec<f64> = text
        .split([',', ' ', '\n', '\t'])
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| format!("'{s}' is not a number"))
        })
        .collect::<Result<_, _>>()?;
    values
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected {N_CHANNELS} values, got {}", v.len()))
}

fn json(value: &impl Serialize) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Encoded {
    pixels: Vec<u8>,
    scale_min: f64,
    scale_max: f64,
    decoded: Vec<f64>,
    max_error: f64,
    half_step: f64,
}

/// Encodes 14 channel values as a 4×4 image and decodes them again.
pub fn encode_json(channels: &str) -> Result<String, String> {
    let ch = parse_channels(channels)?;
    let img = encode_channels(&ch).map_err(|e| e.to_string())?;
    let back = decode(&img).map_err(|e| e.to_string())?;
    let max_error = ch
        .iter()
        .zip(&back.channels)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    json(&Encoded {
        pixels: img.pixels.to_vec(),
        scale_min: img.scale_min,
        scale_max: img.scale_max,
        decoded: back.channels.to_vec(),
        max_error,
        half_step: img.half_step(),
    })
}

#[derive(Serialize)]
struct KernelResult {
    kernel: String,
    divergence: f64,
    value: f64,
}

/// Kernel value between two samples under a `family:mean:form` tag.
pub fn kernel_json(a: &str, b: &str, tag: &str, sigma: f64) -> Result<String, String> {
    let tag: KernelTag = tag.parse().map_err(|e: fusegram::Error| e.to_string())?;
    let cfg = ProbConfig::default();
    let spec = tag
        .with_params(sigma, cfg.epsilon)
        .map_err(|e| e.to_string())?;
    let x = FusedSample::new(0, parse_channels(a)?, None);
    let y = FusedSample::new(1, parse_channels(b)?, None);
    let p = to_prob(&x, &cfg).map_err(|e| e.to_string())?;
    let q = to_prob(&y, &cfg).map_err(|e| e.to_string())?;
    let divergence = if spec.uses_divergence() {
        spec.divergence(&p, &q).map_err(|e| e.to_string())?
    } else {
        0.0
    };
    json(&KernelResult {
        kernel: spec.tag(),
        divergence,
        value: spec.evaluate(divergence, squared_distance(&x.channels, &y.channels)),
    })
}

#[derive(Serialize)]
struct Novelty {
    score: f64,
    /// Median score of the reference samples themselves.
    reference_median: f64,
    trees: usize,
}

/// Isolation-forest score of a sample against synthetic resting data.
pub fn novelty_json(channels: &str, seed: u64) -> Result<String, String> {
    let x = parse_channels(channels)?;
    let ds = synthesize(&SynthSpec::separated(256, 10.0, 1.0, seed)).map_err(|e| e.to_string())?;
    let reference = ds.filter_label(Label::NoGesture).channel_rows();
    let trees = 100;
    let model = fit_iforest(&reference, trees, 256, seed).map_err(|e| e.to_string())?;
    let mut own: Vec<f64> = reference.iter().map(|r| iforest_score(&model, r)).collect();
    own.sort_by(f64::total_cmp);
    json(&Novelty {
        score: iforest_score(&model, &x),
        reference_median: own[own.len() / 2],
        trees,
    })
}

#[wasm_bindgen]
pub fn encode_signal(channels: &str) -> Result<String, JsValue> {
    encode_json(channels).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn kernel_between(a: &str, b: &str, tag: &str, sigma: f64) -> Result<String, JsValue> {
    kernel_json(a, b, tag, sigma).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn novelty_score(channels: &str, seed: u32) -> Result<String, JsValue> {
    novelty_json(channels, u64::from(seed)).map_err(|e| JsValue::from_str(&e))
}
