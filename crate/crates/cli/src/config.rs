//! Run configuration: a TOML file mirrored one-to-one by command-line flags.

use std::path::{Path, PathBuf};

use serde::Deserialize;

/// Upper limits applied before a check runs; a check whose size exceeds a
/// cap is reported as skipped.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Caps {
    pub dense_dim: u64,
    pub tuple_budget: u64,
    pub pi_enumeration: u64,
}

impl Default for Caps {
    fn default() -> Self {
        Self { dense_dim: 4096, tuple_budget: 500_000_000, pi_enumeration: 40_320 }
    }
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Option<String>,
    pub n: Option<usize>,
    pub s: Option<usize>,
    pub t: Option<usize>,
    pub st: Option<usize>,
    pub c: Option<f64>,
    pub trials: Option<usize>,
    pub shots: Option<usize>,
    pub samples: Option<usize>,
    pub resamples: Option<usize>,
    pub backing: Option<String>,
    /// Decimal integer or `0x`-prefixed hex string.
    pub seed: Option<toml::Value>,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub caps: Caps,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        let c = &self.caps;
        if c.dense_dim == 0 || c.tuple_budget == 0 || c.pi_enumeration == 0 {
            return Err("caps must be positive".into());
        }
        if let (Some(n), Some(s), Some(t)) = (self.n, self.s, self.t) {
            if n < 64 && (s * t) as u64 > 1u64 << n {
                return Err(format!("st = {} exceeds 2^n = {}", s * t, 1u64 << n));
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> Result<Option<u64>, String> {
        match &self.seed {
            None => Ok(None),
            Some(toml::Value::Integer(v)) => u64::try_from(*v).map(Some).map_err(|_| format!("negative seed {v}")),
            Some(toml::Value::String(s)) => parse_seed(s).map(Some),
            Some(other) => Err(format!("seed must be an integer or hex string, got {other}")),
        }
    }
}

/// Decimal or `0x`-prefixed hexadecimal.
pub fn parse_seed(s: &str) -> Result<u64, String> {
    let s = s.trim();
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).map_err(|e| format!("bad hex seed `{s}`: {e}")),
        None => s.parse().map_err(|e| format!("bad seed `{s}`: {e}")),
    }
}
