//! Check results and the line-delimited JSON report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// Not evaluated: out of the hypothesis regime, vacuous, or capped.
    Skipped,
    /// Evaluated, but statistical error too large to decide.
    Inconclusive,
}

/// Whether the hypotheses of the bound being checked hold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Identity or bound without hypotheses.
    Unconditional,
    InRegime,
    OutOfRegime,
    /// The bound is at least the trivial maximum of the measured quantity.
    Vacuous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub check: String,
    pub params: BTreeMap<String, Value>,
    pub seed: Option<u64>,
    pub measured: Value,
    pub bound: Option<f64>,
    pub regime: Regime,
    pub pass: bool,
    pub status: Status,
    pub runtime_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

impl CheckResult {
    pub fn new(check: impl Into<String>) -> Self {
        Self {
            check: check.into(),
            params: BTreeMap::new(),
            seed: None,
            measured: Value::Null,
            bound: None,
            regime: Regime::Unconditional,
            pass: false,
            status: Status::Fail,
            runtime_ms: None,
            details: Value::Null,
        }
    }

    pub fn param(mut self, key: &str, value: impl Serialize) -> Self {
        self.params.insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn details(mut self, details: impl Serialize) -> Self {
        self.details = serde_json::to_value(details).unwrap_or(Value::Null);
        self
    }

    pub fn regime(mut self, regime: Regime) -> Self {
        self.regime = regime;
        self
    }

    pub fn measured(mut self, measured: impl Serialize) -> Self {
        self.measured = serde_json::to_value(measured).unwrap_or(Value::Null);
        self
    }

    /// Passes iff `|measured| <= tol`.
    pub fn identity(self, measured: f64, tol: f64) -> Self {
        let mut r = self.measured(measured);
        r.bound = Some(tol);
        r.decide(measured.abs() <= tol)
    }

    /// Passes iff `measured <= bound + tol`. Out-of-regime and vacuous
    /// bounds are reported but skipped.
    pub fn bounded(self, measured: f64, bound: f64, tol: f64) -> Self {
        let mut r = self.measured(measured);
        r.bound = Some(bound);
        match r.regime {
            Regime::OutOfRegime | Regime::Vacuous => r.skip(),
            _ => r.decide(measured <= bound + tol),
        }
    }

    pub fn decide(mut self, ok: bool) -> Self {
        self.pass = ok;
        self.status = if ok { Status::Pass } else { Status::Fail };
        self
    }

    pub fn skip(mut self) -> Self {
        self.pass = false;
        self.status = Status::Skipped;
        self
    }

    pub fn inconclusive(mut self) -> Self {
        self.pass = false;
        self.status = Status::Inconclusive;
        self
    }

    /// Failed row for a check that could not run.
    pub fn errored(check: impl Into<String>, err: &crate::Error) -> Self {
        let skipped = matches!(err, crate::Error::CapExceeded { .. });
        let r = Self::new(check).details(serde_json::json!({ "error": err.to_string() }));
        if skipped {
            r.skip()
        } else {
            r.decide(false)
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    pub skipped: usize,
    pub inconclusive: usize,
    pub all_pass: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<CheckResult>,
}

impl Report {
    pub fn new(rows: Vec<CheckResult>) -> Self {
        Self { rows }
    }

    pub fn summary(&self) -> Summary {
        let count = |s: Status| self.rows.iter().filter(|r| r.status == s).count();
        let (passed, failed, skipped, inconclusive) =
            (count(Status::Pass), count(Status::Fail), count(Status::Skipped), count(Status::Inconclusive));
        Summary { total: self.rows.len(), passed, failed, skipped, inconclusive, all_pass: failed + inconclusive == 0 }
    }

    /// Every non-skipped row passed.
    pub fn all_pass(&self) -> bool {
        self.summary().all_pass
    }

    /// One JSON object per row, then `{"summary": ...}`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&serde_json::to_string(row).expect("rows serialize"));
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&serde_json::json!({ "summary": self.summary() })).expect("summary"));
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str) -> serde_json::Result<Self> {
        let mut rows = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let v: Value = serde_json::from_str(line)?;
            if v.get("summary").is_none() {
                rows.push(serde_json::from_value(v)?);
            }
        }
        Ok(Self { rows })
    }
}
