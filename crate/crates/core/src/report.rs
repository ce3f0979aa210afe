//! JSON run records and CSV tables.

use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::stats::hole_bound;
use crate::testfn::BumpPair;

/// Universal constants of the bump pair in dimension `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub d: usize,
    /// Bump scale `a` (cube side `a/b`).
    pub a: f64,
    /// `(psi_hat * psi_hat)(0)`.
    pub autocorr0: f64,
    /// `r0(b) b`.
    pub kappa: f64,
}

impl Constants {
    pub fn for_dimension(d: usize) -> Result<Self> {
        let pair = BumpPair::build(d)?;
        let bound = hole_bound(1.0, &pair)?;
        Ok(Self { d, a: pair.a, autocorr0: pair.autocorr0, kappa: bound.kappa })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Predicate {
    /// Passes when `value <= tolerance`.
    pub fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, tolerance, pass: value <= tolerance }
    }

    /// Passes when `value >= tolerance`.
    pub fn at_least(name: &str, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, tolerance, pass: value >= tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub version: String,
    pub inputs_hash: String,
    pub config: Value,
    pub constants: Option<Constants>,
    pub predicates: Vec<Predicate>,
    pub results: Value,
    pub pass: bool,
    pub timestamp: String,
    pub determinism_hash: String,
}

/// SHA-256 of the compact JSON text of `value`. Object keys are sorted by
/// `serde_json`, so equal values hash equally.
pub fn hash_json(value: &Value) -> String {
    let text = serde_json::to_string(value).unwrap_or_default();
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl Report {
    pub fn new(
        command: &str,
        config: Value,
        constants: Option<Constants>,
        predicates: Vec<Predicate>,
        results: Value,
    ) -> Self {
        let pass = predicates.iter().all(|p| p.pass);
        let mut report = Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            inputs_hash: hash_json(&config),
            config,
            constants,
            predicates,
            results,
            pass,
            timestamp: String::new(),
            determinism_hash: String::new(),
        };
        report.determinism_hash = report.compute_determinism_hash();
        report.timestamp = match SystemTime::now().duration_since(UNIX_EPOCH) {
            Ok(t) => format!("{}", t.as_secs()),
            Err(_) => "0".into(),
        };
        report
    }

    /// Hash of the report with the timestamp and the hash itself blanked.
    pub fn compute_determinism_hash(&self) -> String {
        let mut copy = self.clone();
        copy.timestamp.clear();
        copy.determinism_hash.clear();
        hash_json(&serde_json::to_value(&copy).unwrap_or(Value::Null))
    }

    pub fn failing(&self) -> Vec<&str> {
        self.predicates.iter().filter(|p| !p.pass).map(|p| p.name.as_str()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

/// Rows of numbers under a header, written as CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.header.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn determinism_hash_ignores_timestamp() {
        let a = Report::new("x", json!({"b": 1, "a": 2}), None, vec![Predicate::at_most("p", 0.0, 1.0)], json!([1.5]));
        let mut b = a.clone();
        b.timestamp = "999".into();
        assert_eq!(a.determinism_hash, b.compute_determinism_hash());
        assert!(a.pass);
        let c = Report::new("x", json!({"a": 2, "b": 1}), None, vec![], json!([1.5]));
        assert_eq!(a.inputs_hash, c.inputs_hash);
    }

    #[test]
    fn csv_table() {
        let mut t = Table::new(&["l", "var"]);
        t.push(vec![8.0, 0.5]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "l,var\n8e0,5e-1\n");
    }
}
