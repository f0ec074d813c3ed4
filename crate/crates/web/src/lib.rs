//! Browser bindings for the `www/` demo page.
//!
//! Every export takes plain numbers or strings and returns a JSON string, so
//! the page needs no bundler and no generated TypeScript types.

use psum_core::attacks::{apply_signal_attack, AttackKind, AttackSpec};
use psum_core::codes::{generate_code, trace, CodeParams, PiratedCodeword, ThresholdPolicy};
use psum_core::harness::{run_scenario, synthetic_audio, ScenarioConfig};
use psum_core::transform::{analyze_content, make_base_file, reconstruct, Content, PartitionParams};
use psum_core::watermark::{ber, psnr, psnr_bound, qim_extract};
use serde_json::json;
use wasm_bindgen::prelude::*;

const DEMO_RATE: u32 = 16_000;
const DEMO_SECONDS: f64 = 1.0;

type Result<T> = std::result::Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn js(r: Result<String>) -> std::result::Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

fn bit_string(bits: &[u8]) -> String {
    bits.iter().map(|b| char::from(b'0' + b)).collect()
}

/// Generates a code book and returns its length and rows.
#[wasm_bindgen(js_name = generateCode)]
pub fn generate_code_js(users: u32, c: u16, epsilon: f64, seed: u64) -> std::result::Result<String, JsError> {
    js(generate_code_json(users, c, epsilon, seed))
}

fn generate_code_json(users: u32, c: u16, epsilon: f64, seed: u64) -> Result<String> {
    let book = generate_code(&CodeParams::new(users, c, epsilon, seed)).map_err(err)?;
    let rows: Vec<String> = (0..book.num_users()).map(|i| bit_string(book.codeword(i))).collect();
    Ok(json!({ "length": book.len(), "rows": rows }).to_string())
}

/// Fingerprints one second of synthetic audio for `buyer`, applies `attack`
/// (compact form such as `awgn:30`, empty for none), then extracts and traces.
#[wasm_bindgen(js_name = fingerprintAndTrace)]
pub fn fingerprint_and_trace_js(
    users: u32,
    buyer: usize,
    delta: f64,
    attack: &str,
    seed: u64,
) -> std::result::Result<String, JsError> {
    js(fingerprint_and_trace(users, buyer, delta, attack, seed))
}

fn fingerprint_and_trace(users: u32, buyer: usize, delta: f64, attack: &str, seed: u64) -> Result<String> {
    let book = generate_code(&CodeParams::new(users, 2, 0.01, seed)).map_err(err)?;
    if buyer >= book.num_users() {
        return Err(format!("buyer must be below {}", book.num_users()));
    }
    let original = Content::Audio(synthetic_audio(seed, DEMO_RATE, DEMO_SECONDS, 1));
    let partition = make_base_file(&original, &PartitionParams::new(book.len(), delta)).map_err(err)?;
    let approx = partition.base.select(book.codeword(buyer)).map_err(err)?;
    let mut copy = reconstruct(&approx, &partition.supplementary).map_err(err)?;
    let quality = psnr(samples(&original), samples(&copy), 1.0).map_err(err)?;
    if !attack.trim().is_empty() {
        let kind = AttackKind::parse(attack.trim()).map_err(err)?;
        copy = apply_signal_attack(&copy, &AttackSpec::new(kind, seed)).map_err(err)?;
    }
    let coeffs = analyze_content(&copy, &partition.base.meta).map_err(err)?;
    let bits = qim_extract(&coeffs, book.len(), &partition.base.qim).map_err(err)?;
    let policy = ThresholdPolicy::Calibrated { samples: 1000, seed };
    let traced = trace(&PiratedCodeword::from_bits(&bits), &book, policy).map_err(err)?;
    Ok(json!({
        "code_length": book.len(),
        "embedded": bit_string(book.codeword(buyer)),
        "extracted": bit_string(&bits),
        "ber": ber(book.codeword(buyer), &bits).map_err(err)?,
        "psnr": quality,
        "psnr_bound": psnr_bound(1.0, delta),
        "scores": traced.scores,
        "threshold": traced.threshold,
        "accused": traced.accused,
    })
    .to_string())
}

fn samples(content: &Content) -> &[f64] {
    match content {
        Content::Audio(a) => &a.channels[0],
        Content::Frames(_) => &[],
    }
}

/// Runs a whole scenario from its JSON configuration and returns the report.
/// Content must be synthetic; the browser has no file system.
#[wasm_bindgen(js_name = runScenario)]
pub fn run_scenario_js(config: &str) -> std::result::Result<String, JsError> {
    js(run_scenario_json(config))
}

fn run_scenario_json(config: &str) -> Result<String> {
    let config = ScenarioConfig::from_json(config).map_err(err)?;
    let run = run_scenario(&config, std::path::Path::new(""), None).map_err(err)?;
    serde_json::to_string_pretty(&run.report).map_err(err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn code_rows_match_length() {
        let v: serde_json::Value = serde_json::from_str(&generate_code_json(4, 2, 0.01, 1).unwrap()).unwrap();
        let m = v["length"].as_u64().unwrap() as usize;
        assert_eq!(v["rows"].as_array().unwrap().len(), 4);
        assert!(v["rows"].as_array().unwrap().iter().all(|r| r.as_str().unwrap().len() == m));
    }

    #[test]
    fn clean_copy_is_traced_to_its_buyer() {
        let v: serde_json::Value =
            serde_json::from_str(&fingerprint_and_trace(8, 3, 0.25, "", 2).unwrap()).unwrap();
        assert_eq!(v["ber"], 0.0);
        assert_eq!(v["accused"], json!([3]));
        assert!(v["psnr"].as_f64().unwrap() >= v["psnr_bound"].as_f64().unwrap());
    }

    #[test]
    fn noisy_copy_still_traces() {
        let v: serde_json::Value =
            serde_json::from_str(&fingerprint_and_trace(8, 1, 0.25, "awgn:30", 3).unwrap()).unwrap();
        assert_eq!(v["accused"], json!([1]));
    }

    #[test]
    fn bad_input_is_reported_as_text() {
        assert!(fingerprint_and_trace(4, 9, 0.25, "", 1).unwrap_err().contains("below"));
        assert!(run_scenario_json("{}").is_err());
    }

    #[test]
    fn scenario_report_round_trips() {
        let cfg = r#"{"seed": 5, "N": 4, "c": 2, "epsilon": 0.01, "buyers": 2, "n_proxies": 2,
            "content": {"synthetic": {"kind": "audio", "seconds": 0.5, "sample_rate": 8000, "channels": 1}}}"#;
        let v: serde_json::Value = serde_json::from_str(&run_scenario_json(cfg).unwrap()).unwrap();
        assert!(v["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true), "{v}");
    }
}
