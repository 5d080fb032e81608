//! Numerical tolerances shared by every check.

use serde::{Deserialize, Serialize};

use crate::linalg::RankPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Scale factor of the singular-value rank threshold.
    pub rank_factor: f64,
    /// Width of the band around the threshold reported as unstable.
    pub rank_band: f64,
    /// Generic gate for identities evaluated in floating point.
    pub identity: f64,
    /// Gate for identities that are exact on integer-incidence instances.
    pub exact: f64,
    /// Gate for graph-Gram consistency.
    pub graph_gram: f64,
    /// Gate for range lifts into the next domain model.
    pub lift: f64,
    /// Gate for trace extensions and section residuals.
    pub extension: f64,
    /// Slack on norm bounds such as `||K|| <= 1`.
    pub norm_slack: f64,
    /// Slack on monotone refinement sequences.
    pub monotone_slack: f64,
    /// Random samples per level for sampled bounds.
    pub samples: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rank_factor: 1e3,
            rank_band: 10.0,
            identity: 1e-10,
            exact: 1e-12,
            graph_gram: 1e-12,
            lift: 1e-10,
            extension: 1e-9,
            norm_slack: 1e-12,
            monotone_slack: 1e-6,
            samples: 10_000,
        }
    }
}

impl Tolerances {
    pub fn rank_policy(&self) -> RankPolicy {
        RankPolicy { factor: self.rank_factor, band: self.rank_band }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("tolerances serialise")
    }
}
