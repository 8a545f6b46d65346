//! JSON reports with sorted keys and rationals as "p/q".

use crate::check::{Check, CheckReport};
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use num_rational::Rational64;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

/// `p/q` with an explicit denominator, so 0 prints as `0/1`.
pub fn rational(r: Rational64) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// sha256 of the canonical TOML serialization.
pub fn scenario_hash(sc: &Scenario) -> Result<String> {
    let text = sc.to_toml()?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub command: String,
    pub scenario: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub flags: Map<String, Value>,
    pub checks: Vec<Check>,
    pub results: Map<String, Value>,
    pub pass: bool,
    /// Excluded from reproducibility comparisons.
    pub wall_time_ms: f64,
}

impl Report {
    pub fn new(command: &str, sc: &Scenario, seed: u64) -> Result<Report> {
        Ok(Report {
            command: command.into(),
            scenario: sc.name.clone(),
            scenario_hash: scenario_hash(sc)?,
            seed,
            flags: Map::new(),
            checks: Vec::new(),
            results: Map::new(),
            pass: true,
            wall_time_ms: 0.0,
        })
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn checks(&mut self, prefix: &str, rep: CheckReport) {
        for mut c in rep.checks {
            if !prefix.is_empty() {
                c.name = format!("{prefix}/{}", c.name);
            }
            self.checks.push(c);
        }
    }

    pub fn set(&mut self, key: &str, v: impl Serialize) {
        self.results.insert(key.into(), serde_json::to_value(v).unwrap_or(Value::Null));
    }

    pub fn finish(&mut self) {
        self.pass = self.checks.iter().all(Check::passed);
    }

    /// Pretty JSON; object keys come out sorted.
    pub fn to_json(&self) -> Result<String> {
        let v = serde_json::to_value(self).map_err(|e| Error::Io(e.to_string()))?;
        serde_json::to_string_pretty(&v).map_err(|e| Error::Io(e.to_string()))
    }

    /// JSON with the wall time removed, for byte comparisons.
    pub fn to_json_without_time(&self) -> Result<String> {
        let mut v = serde_json::to_value(self).map_err(|e| Error::Io(e.to_string()))?;
        if let Value::Object(m) = &mut v {
            m.remove("wall_time_ms");
        }
        serde_json::to_string_pretty(&v).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            1
        }
    }
}
