//! Browser bindings for the interactive demo page.
//!
//! Every export takes plain numbers or JSON text and returns JSON text, so
//! the page needs no generated type glue. The `*_json` functions hold the
//! logic and are tested natively.

use noma_secrecy::eval::{capacity_fraction, region_curve, Precoder, RegionCurve};
use noma_secrecy::gsvd::gsvd_precode;
use noma_secrecy::pipeline::{alpha_grid, split_solve, SplitConfig};
use noma_secrecy::secrecy_rates::evaluate_rates;
use noma_secrecy::wiretap::PgaOptions;
use noma_secrecy::{channels::sample_set, sample_channel_pair, ChannelDims, ChannelPair, CovariancePair, SymMatrix};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest antenna count the page offers.
pub const MAX_ANTENNAS: usize = 4;
/// Cap on the channel count of a region sweep, to keep the page responsive.
pub const MAX_CHANNELS: usize = 500;

#[derive(Serialize)]
struct Design {
    #[serde(rename = "Q1")]
    q1: SymMatrix,
    #[serde(rename = "Q2")]
    q2: SymMatrix,
    #[serde(rename = "R1")]
    r1: f64,
    #[serde(rename = "R2")]
    r2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
}

#[derive(Serialize)]
struct Comparison {
    alpha: f64,
    #[serde(rename = "P")]
    power: f64,
    solver: Design,
    gsvd: Design,
}

#[derive(Serialize)]
struct Region {
    solver: RegionCurve,
    gsvd: RegionCurve,
    /// GSVD sum rate as a percentage of the solver's, when defined.
    gsvd_fraction: Option<f64>,
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn check_dims(n_t: usize, n1: usize, n2: usize) -> Result<ChannelDims, String> {
    if [n_t, n1, n2].iter().any(|&n| n > MAX_ANTENNAS) {
        return Err(format!("antenna counts are limited to {MAX_ANTENNAS} in the demo"));
    }
    ChannelDims::new(n_t, n1, n2).map_err(err)
}

fn design(q: CovariancePair, ch: &ChannelPair, iterations: Option<usize>) -> Result<Design, String> {
    let rates = evaluate_rates(&q, ch).map_err(err)?;
    Ok(Design {
        q1: q.q1,
        q2: q.q2,
        r1: rates.r1,
        r2: rates.r2,
        iterations,
    })
}

/// Seeded Rayleigh channel pair as `{"h1": rows, "h2": rows}`.
pub fn sample_channel_json(n_t: usize, n1: usize, n2: usize, seed: u64) -> Result<String, String> {
    check_dims(n_t, n1, n2)?;
    let ch = sample_channel_pair(n_t, n1, n2, seed).map_err(err)?;
    serde_json::to_string(&ch).map_err(err)
}

/// Solver and GSVD designs for one channel at one split factor.
pub fn compare_json(channel: &str, power: f64, alpha: f64) -> Result<String, String> {
    let ch: ChannelPair = serde_json::from_str(channel).map_err(|e| format!("channel: {e}"))?;
    let d = ch.dims();
    check_dims(d.n_t, d.n1, d.n2)?;
    let cfg = SplitConfig {
        alpha,
        power,
        solver: PgaOptions::default(),
    };
    let sol = split_solve(&ch, &cfg).map_err(err)?;
    let iterations = sol.stage1.iterations + sol.stage2.iterations;
    let out = Comparison {
        alpha,
        power,
        solver: design(sol.covariances, &ch, Some(iterations))?,
        gsvd: design(gsvd_precode(&ch, power, alpha).map_err(err)?, &ch, None)?,
    };
    serde_json::to_string(&out).map_err(err)
}

/// Mean rate regions of the solver and GSVD over `count` seeded channels.
pub fn region_json(
    n_t: usize,
    n1: usize,
    n2: usize,
    power: f64,
    seed: u64,
    count: usize,
    step: f64,
) -> Result<String, String> {
    let d = check_dims(n_t, n1, n2)?;
    if count == 0 || count > MAX_CHANNELS {
        return Err(format!("channel count must lie in 1..={MAX_CHANNELS}"));
    }
    let alphas = alpha_grid(0.0, step, 1.0).map_err(err)?;
    let channels = sample_set(d, seed, count).map_err(err)?;
    let solver = region_curve(
        &Precoder::Solver(PgaOptions::default()),
        &channels,
        power,
        &alphas,
        seed,
    )
    .map_err(err)?;
    let gsvd = region_curve(&Precoder::Gsvd, &channels, power, &alphas, seed).map_err(err)?;
    let gsvd_fraction = capacity_fraction(&gsvd, &solver).ok();
    serde_json::to_string(&Region {
        solver,
        gsvd,
        gsvd_fraction,
    })
    .map_err(err)
}

fn to_js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = sampleChannel)]
pub fn sample_channel(n_t: usize, n1: usize, n2: usize, seed: u32) -> Result<String, JsValue> {
    to_js(sample_channel_json(n_t, n1, n2, seed as u64))
}

#[wasm_bindgen]
pub fn compare(channel: &str, power: f64, alpha: f64) -> Result<String, JsValue> {
    to_js(compare_json(channel, power, alpha))
}

#[wasm_bindgen]
pub fn region(
    n_t: usize,
    n1: usize,
    n2: usize,
    power: f64,
    seed: u32,
    count: usize,
    step: f64,
) -> Result<String, JsValue> {
    to_js(region_json(n_t, n1, n2, power, seed as u64, count, step))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn compare_round_trips_a_sampled_channel() {
        let ch = sample_channel_json(2, 1, 1, 5).unwrap();
        let v: Value = serde_json::from_str(&compare_json(&ch, 10.0, 0.5).unwrap()).unwrap();
        let s = v["solver"]["R1"].as_f64().unwrap() + v["solver"]["R2"].as_f64().unwrap();
        let g = v["gsvd"]["R1"].as_f64().unwrap() + v["gsvd"]["R2"].as_f64().unwrap();
        assert!(s >= g - 1e-6, "solver {s} below gsvd {g}");
        assert!(v["solver"]["iterations"].as_u64().unwrap() > 0);
    }

    #[test]
    fn alpha_zero_leaves_user_one_silent() {
        let ch = sample_channel_json(3, 2, 2, 1).unwrap();
        let v: Value = serde_json::from_str(&compare_json(&ch, 10.0, 0.0).unwrap()).unwrap();
        assert_eq!(v["solver"]["R1"], 0.0);
    }

    #[test]
    fn region_has_one_point_per_alpha() {
        let v: Value = serde_json::from_str(&region_json(2, 1, 1, 10.0, 3, 5, 0.25).unwrap()).unwrap();
        assert_eq!(v["solver"]["points"].as_array().unwrap().len(), 5);
        assert_eq!(v["gsvd"]["points"].as_array().unwrap().len(), 5);
        assert!(v["gsvd_fraction"].as_f64().unwrap() <= 100.0 + 1e-6);
    }

    #[test]
    fn bad_requests_are_errors() {
        assert!(sample_channel_json(5, 1, 1, 0).is_err());
        assert!(compare_json("{}", 10.0, 0.5).is_err());
        assert!(compare_json(&sample_channel_json(2, 1, 1, 0).unwrap(), 10.0, 1.5).is_err());
        assert!(region_json(2, 1, 1, 10.0, 0, 0, 0.1).is_err());
    }
}
