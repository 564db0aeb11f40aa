//! Independent oracles for the `augmax` crate.
//!
//! [`reference`] holds naive double-precision scalar implementations that
//! share no numerics with the library. [`cases`] registers one
//! [`OracleCase`] per reference check, each with a stable identifier, plus
//! the cross-module invariants. [`run_suite`] executes them and collects a
//! [`SuiteReport`] with per-case diagnostics.

pub mod cases;
pub mod checks;
pub mod fixtures;
pub mod reference;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use augmax::seed::{self, Rng};
use augmax::{Error, Result};

use crate::fixtures::Fixtures;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    FiniteDifference,
    ScalarLoop,
    GridSearch,
    Recomputation,
    MonteCarlo,
}

impl fmt::Display for OracleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            OracleKind::FiniteDifference => "finite-difference",
            OracleKind::ScalarLoop => "scalar-loop",
            OracleKind::GridSearch => "grid-search",
            OracleKind::Recomputation => "recomputation",
            OracleKind::MonteCarlo => "monte-carlo",
        };
        f.write_str(name)
    }
}

/// What a case observed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub passed: bool,
    pub inputs: String,
    pub expected: String,
    pub actual: String,
}

impl Outcome {
    pub fn new(passed: bool, inputs: impl Into<String>, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Self {
            passed,
            inputs: inputs.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}

/// Shared state handed to every case.
pub struct Context {
    pub seed: u64,
    pub fixtures: Fixtures,
}

impl Context {
    pub fn new(seed: u64, cache_dir: Option<PathBuf>) -> Self {
        Self {
            seed,
            fixtures: Fixtures::new(cache_dir),
        }
    }

    /// A random stream private to one case.
    pub fn rng(&self, purpose: &str) -> Rng {
        seed::stream(self.seed, purpose, 0)
    }

    pub fn sub_seed(&self, purpose: &str, index: u64) -> u64 {
        seed::derive_seed(self.seed, purpose, index)
    }
}

pub type CaseFn = fn(&mut Context) -> Result<Outcome>;

/// One registered oracle check.
#[derive(Clone, Copy)]
pub struct OracleCase {
    /// Stable identifier `module.operation.check`.
    pub id: &'static str,
    pub module: &'static str,
    pub operation: &'static str,
    pub kind: OracleKind,
    pub tolerance: &'static str,
    /// Needs a model trained on the fixture toyset.
    pub trained: bool,
    pub run: CaseFn,
}

impl fmt::Debug for OracleCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OracleCase")
            .field("id", &self.id)
            .field("kind", &self.kind)
            .field("tolerance", &self.tolerance)
            .finish()
    }
}

/// Result of one case.
#[derive(Debug, Clone, Serialize)]
pub struct CaseRecord {
    pub id: String,
    pub module: String,
    pub operation: String,
    pub kind: OracleKind,
    pub tolerance: String,
    pub passed: bool,
    pub inputs: String,
    pub expected: String,
    pub actual: String,
    /// Set when the case aborted with an error instead of a verdict.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub seconds: f64,
}

impl CaseRecord {
    pub fn line(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        match &self.error {
            Some(e) => format!("{verdict} {} error: {e}", self.id),
            None => format!(
                "{verdict} {} [{}; tol {}] expected {} actual {} ({:.1}s)",
                self.id, self.kind, self.tolerance, self.expected, self.actual, self.seconds
            ),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub filter: String,
    pub records: Vec<CaseRecord>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.records.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> Vec<&CaseRecord> {
        self.records.iter().filter(|r| !r.passed).collect()
    }

    /// 0 when every case passed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    pub fn text(&self) -> String {
        let mut out: String = self.records.iter().map(|r| r.line() + "\n").collect();
        let failed = self.failures().len();
        out.push_str(&format!("{} cases, {} passed, {} failed\n", self.records.len(), self.records.len() - failed, failed));
        out
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Whether `id` is selected by `filter`: empty selects everything, otherwise
/// any comma-separated substring must occur in the id.
pub fn matches(filter: &str, id: &str) -> bool {
    let parts: Vec<&str> = filter.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
    parts.is_empty() || parts.iter().any(|p| id.contains(p))
}

/// Runs one case, turning errors into failure records.
pub fn run_case(case: &OracleCase, ctx: &mut Context) -> CaseRecord {
    let started = Instant::now();
    let result = (case.run)(ctx);
    let seconds = started.elapsed().as_secs_f64();
    let mut record = CaseRecord {
        id: case.id.into(),
        module: case.module.into(),
        operation: case.operation.into(),
        kind: case.kind,
        tolerance: case.tolerance.into(),
        passed: false,
        inputs: String::new(),
        expected: String::new(),
        actual: String::new(),
        error: None,
        seconds,
    };
    match result {
        Ok(o) => {
            record.passed = o.passed;
            record.inputs = o.inputs;
            record.expected = o.expected;
            record.actual = o.actual;
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

/// Runs every registered case (oracles, then invariants) selected by
/// `filter`.
pub fn run_suite(filter: &str, ctx: &mut Context) -> SuiteReport {
    let records = cases::all()
        .iter()
        .filter(|c| matches(filter, c.id))
        .map(|c| run_case(c, ctx))
        .collect();
    SuiteReport {
        seed: ctx.seed,
        filter: filter.to_string(),
        records,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filters() {
        assert!(matches("", "a.b"));
        assert!(matches("  ", "a.b"));
        assert!(matches("x, b", "a.b"));
        assert!(!matches("x,y", "a.b"));
    }
}
