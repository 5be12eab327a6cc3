//! Browser bindings. Each export takes plain numbers and returns a JSON
//! string; the `*_json` functions are the native equivalents.

use serde_json::json;
use wasm_bindgen::prelude::*;

use prulab::flatness::check_flattening;
use prulab::permcomb::class_table;
use prulab::qcore::StateVector;
use prulab::sampling::SeededStream;
use prulab::verify::verify_almost_invariance;
use prulab::{Error, Result};

const MAX_FLATTEN_BITS: usize = 16;
const MAX_TWIRL_BITS: usize = 5;

/// Flatness of `s` basis-state inputs after one random phase and the
/// Hadamard layer, over `trials` seeded draws.
pub fn flatten_json(n: usize, s: usize, trials: usize, seed: u64) -> Result<String> {
    if n == 0 || n > MAX_FLATTEN_BITS {
        return Err(Error::InvalidParameter(format!("n must be in 1..={MAX_FLATTEN_BITS}")));
    }
    let states = (0..s).map(|j| StateVector::basis(n, j)).collect::<Result<Vec<_>>>()?;
    let report = check_flattening(&states, prulab::flatness::DEFAULT_C, trials, &SeededStream::new(seed, 0))?;
    Ok(json!({
        "n": n,
        "threshold": report.threshold,
        "floor": 1.0 / (1u64 << n) as f64,
        "max_observed": report.max_observed,
        "failed_trials": report.failed_trials,
        "per_trial": report.values,
    })
    .to_string())
}

/// Congruence classes of `S_st` under block-preserving moves.
pub fn classes_json(s: usize, t: usize) -> Result<String> {
    Ok(serde_json::to_string(&class_table(s, t)?).expect("rows serialize"))
}

/// `TD(rho_uni, twirl rho_uni)` for `n = 2..=max_n` at `s = 2`, `t = 1`.
pub fn invariance_json(max_n: usize) -> Result<String> {
    if !(2..=MAX_TWIRL_BITS).contains(&max_n) {
        return Err(Error::InvalidParameter(format!("max_n must be in 2..={MAX_TWIRL_BITS}")));
    }
    let ns: Vec<usize> = (2..=max_n).collect();
    let row = verify_almost_invariance(2, 1, &ns)?;
    Ok(json!({ "n": ns, "defect": row.measured, "fitted_c": row.details["fitted_c"] }).to_string())
}

fn js(r: Result<String>) -> std::result::Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn flatten(n: usize, s: usize, trials: usize, seed: u64) -> std::result::Result<String, JsError> {
    js(flatten_json(n, s, trials, seed))
}

#[wasm_bindgen]
pub fn classes(s: usize, t: usize) -> std::result::Result<String, JsError> {
    js(classes_json(s, t))
}

#[wasm_bindgen]
pub fn invariance(max_n: usize) -> std::result::Result<String, JsError> {
    js(invariance_json(max_n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_reports_uniform_outputs() {
        let v: serde_json::Value = serde_json::from_str(&flatten_json(6, 3, 4, 1).unwrap()).unwrap();
        assert_eq!(v["failed_trials"], 0);
        assert_eq!(v["per_trial"].as_array().unwrap().len(), 4);
        assert!(flatten_json(0, 1, 1, 1).is_err());
    }

    #[test]
    fn class_table_for_two_blocks() {
        let v: serde_json::Value = serde_json::from_str(&classes_json(2, 2).unwrap()).unwrap();
        let sizes: u64 = v.as_array().unwrap().iter().map(|r| r["class_size"].as_u64().unwrap()).sum();
        assert_eq!(sizes, 24);
    }

    #[test]
    fn invariance_curve_decreases() {
        let v: serde_json::Value = serde_json::from_str(&invariance_json(3).unwrap()).unwrap();
        let d: Vec<f64> = v["defect"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert!((d[0] - 0.2).abs() < 1e-12);
        assert!(d[1] < d[0]);
        assert!(invariance_json(9).is_err());
    }
}
