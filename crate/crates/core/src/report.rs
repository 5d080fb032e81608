//! Check records and the `trace-report/v1` report container.

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub const REPORT_SCHEMA: &str = "trace-report/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Pass,
    Fail,
    Info,
}

/// One verified identity or measured diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    /// Level index, absent for instance-wide checks.
    pub level: Option<i32>,
    /// Stable identifier of the identity being checked.
    pub tag: String,
    pub status: Status,
    pub value: f64,
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
    pub wall_ms: f64,
}

impl Check {
    /// Gating check passing iff `value <= tol`.
    pub fn bound(name: &str, level: Option<i32>, tag: &str, value: f64, tol: f64) -> Self {
        let ok = value <= tol;
        Self {
            name: name.into(),
            level,
            tag: tag.into(),
            status: if ok { Status::Pass } else { Status::Fail },
            value,
            tolerance: Some(tol),
            detail: String::new(),
            wall_ms: 0.0,
        }
    }

    /// Gating check with an explicit verdict.
    pub fn verdict(name: &str, level: Option<i32>, tag: &str, ok: bool, value: f64) -> Self {
        Self {
            name: name.into(),
            level,
            tag: tag.into(),
            status: if ok { Status::Pass } else { Status::Fail },
            value,
            tolerance: None,
            detail: String::new(),
            wall_ms: 0.0,
        }
    }

    /// Non-gating diagnostic.
    pub fn info(name: &str, level: Option<i32>, tag: &str, value: f64) -> Self {
        Self {
            name: name.into(),
            level,
            tag: tag.into(),
            status: Status::Info,
            value,
            tolerance: None,
            detail: String::new(),
            wall_ms: 0.0,
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    pub fn timed(mut self, start: Instant) -> Self {
        self.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        self
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
}

/// Sorts checks by level (instance-wide first), then name.
pub fn canonical_order(checks: &mut [Check]) {
    checks.sort_by(|a, b| {
        a.level
            .unwrap_or(i32::MIN)
            .cmp(&b.level.unwrap_or(i32::MIN))
            .then_with(|| a.name.cmp(&b.name))
    });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub tool_version: String,
    pub instance: serde_json::Value,
    pub seed: u64,
    pub tolerances: serde_json::Value,
    pub verdict: Status,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn new(
        instance: serde_json::Value,
        seed: u64,
        tolerances: serde_json::Value,
        mut checks: Vec<Check>,
    ) -> Self {
        canonical_order(&mut checks);
        let verdict = if checks.iter().all(Check::passed) { Status::Pass } else { Status::Fail };
        Self {
            schema: REPORT_SCHEMA.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            instance,
            seed,
            tolerances,
            verdict,
            checks,
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Status::Pass
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.status == Status::Fail)
    }

    pub fn find(&self, name: &str, level: Option<i32>) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name && c.level == level)
    }

    /// The report with all timings zeroed, for reproducibility comparisons.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        for c in &mut r.checks {
            c.wall_ms = 0.0;
        }
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}
