//! Flattening by a random phase followed by the Hadamard layer.
//!
//! A state is `eps`-flat when its largest squared computational-basis
//! amplitude is at most `eps`. `H^n U_f` makes any fixed input
//! `c n / 2^n`-flat except with probability `2 exp(-(c/4 - ln 2) n)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::oracles::{apply_hadamard_all, apply_phase};
use crate::par::map_indexed;
use crate::qcore::StateVector;
use crate::sampling::{sample_binary_function, SeededStream};

pub const DEFAULT_C: f64 = 8.0;

/// `max_x |alpha_x|^2`, by a full scan.
pub fn flatness_of(state: &StateVector) -> f64 {
    state.amps().iter().map(|a| a.norm_sqr()).fold(0.0, f64::max)
}

/// `c n / 2^n`.
pub fn flatness_threshold(n: usize, c: f64) -> f64 {
    c * n as f64 / (1u64 << n) as f64
}

/// Union bound `2 s exp(-(c/4 - ln 2) n)` on the probability that some of
/// `s` flattened states exceeds the threshold.
pub fn hoeffding_failure_bound(n: usize, s: usize, c: f64) -> f64 {
    2.0 * s as f64 * (-(c / 4.0 - std::f64::consts::LN_2) * n as f64).exp()
}

#[derive(Clone, Debug, Serialize)]
pub struct FlatnessReport {
    pub n: usize,
    pub states: usize,
    pub c: f64,
    pub threshold: f64,
    pub trials: usize,
    pub stream: SeededStream,
    /// Measured flatness per trial, per input state.
    pub values: Vec<Vec<f64>>,
    /// Trials in which at least one state exceeded the threshold.
    pub failed_trials: usize,
    pub failure_rate: f64,
    pub bound: f64,
    pub min_observed: f64,
    pub max_observed: f64,
    pub mean_observed: f64,
}

impl FlatnessReport {
    pub fn all_flat(&self) -> bool {
        self.failed_trials == 0
    }
}

/// For each trial, samples `f` and measures the flatness of `H^n U_f` applied
/// to every input state.
pub fn check_flattening(
    states: &[StateVector],
    c: f64,
    trials: usize,
    stream: &SeededStream,
) -> Result<FlatnessReport> {
    let first = states.first().ok_or(Error::EmptyInput("no input states"))?;
    let n = first.n();
    if let Some(bad) = states.iter().find(|s| s.n() != n) {
        return Err(Error::DimensionMismatch { expected: 1 << n, got: bad.dim() });
    }
    if c <= 4.0 * std::f64::consts::LN_2 {
        return Err(Error::VacuousBound { c });
    }
    let threshold = flatness_threshold(n, c);
    let values: Vec<Vec<f64>> = map_indexed(trials, |trial| {
        let mut rng = stream.substream(trial as u64).rng();
        let f = sample_binary_function(n, &mut rng).expect("n already validated by state construction");
        states
            .iter()
            .map(|s| {
                let mut out = s.clone();
                apply_phase(&mut out, &f).expect("matching n");
                apply_hadamard_all(&mut out);
                flatness_of(&out)
            })
            .collect()
    });
    let failed_trials = values.iter().filter(|v| v.iter().any(|&e| e > threshold)).count();
    let flat: Vec<f64> = values.iter().flatten().copied().collect();
    let count = flat.len().max(1) as f64;
    Ok(FlatnessReport {
        n,
        states: states.len(),
        c,
        threshold,
        trials,
        stream: *stream,
        failed_trials,
        failure_rate: failed_trials as f64 / trials.max(1) as f64,
        bound: hoeffding_failure_bound(n, states.len(), c),
        min_observed: flat.iter().copied().fold(f64::INFINITY, f64::min),
        max_observed: flat.iter().copied().fold(0.0, f64::max),
        mean_observed: flat.iter().sum::<f64>() / count,
        values,
    })
}
