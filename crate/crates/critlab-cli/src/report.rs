//! Machine-readable run report.
//!
//! A report serializes with a fixed field order and carries the fully
//! materialized config it was produced from, so two runs of the same config
//! differ only in `wall_clock_seconds`.

use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    /// Subcommand that produced the report.
    pub command: String,
    /// Library version the run used.
    pub version: String,
    /// True iff `failures` and `falsifications` are both empty.
    pub pass: bool,
    /// Checks that did not meet their threshold.
    pub failures: Vec<String>,
    /// Outcomes that would contradict a claim whose hypotheses held.
    /// These are surfaced separately because they mean something stronger
    /// than a numeric miss.
    pub falsifications: Vec<String>,
    /// Total run time. The only nondeterministic field.
    pub wall_clock_seconds: f64,
    /// Echo of the config after defaults were filled in.
    pub config: serde_json::Value,
    /// Command-specific payload.
    pub results: serde_json::Value,
}

impl Report {
    pub fn render(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Process exit code the report maps to: 0 when everything passed,
    /// 1 otherwise. (Usage and config problems exit 2 before a report
    /// exists.)
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            1
        }
    }
}
