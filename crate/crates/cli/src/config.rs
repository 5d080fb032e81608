//! Run configuration: checked-in defaults, an optional override file, then
//! per-field flags (each mirrored by an `HTRACE_*` environment variable).

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use hilbert_traces::Tolerances;
use serde::Deserialize;

/// The checked-in defaults, compiled into the binary.
pub const DEFAULTS: &str = include_str!("../tolerances.toml");

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Self::parse(DEFAULTS).context("built-in defaults"),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("parsing {}", p.display()))
            }
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML file replacing the built-in defaults.
    #[arg(long, global = true, env = "HTRACE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Disable data parallelism.
    #[arg(long, global = true, env = "HTRACE_SEQUENTIAL")]
    pub sequential: bool,
    /// Seed of every random stream.
    #[arg(long, global = true, env = "HTRACE_SEED")]
    pub seed: Option<u64>,
    /// Generic gate for floating-point identities.
    #[arg(long, global = true, env = "HTRACE_TOL")]
    pub tol: Option<f64>,
    #[arg(long, global = true, env = "HTRACE_RANK_FACTOR")]
    pub rank_factor: Option<f64>,
    #[arg(long, global = true, env = "HTRACE_RANK_BAND")]
    pub rank_band: Option<f64>,
    #[arg(long, global = true, env = "HTRACE_EXACT")]
    pub exact: Option<f64>,
    #[arg(long, global = true, env = "HTRACE_GRAPH_GRAM")]
    pub graph_gram: Option<f64>,
    #[arg(long, global = true, env = "HTRACE_LIFT")]
    pub lift: Option<f64>,
    #[arg(long, global = true, env = "HTRACE_EXTENSION")]
    pub extension: Option<f64>,
    #[arg(long, global = true, env = "HTRACE_NORM_SLACK")]
    pub norm_slack: Option<f64>,
    #[arg(long, global = true, env = "HTRACE_MONOTONE_SLACK")]
    pub monotone_slack: Option<f64>,
    #[arg(long, global = true, env = "HTRACE_SAMPLES")]
    pub samples: Option<usize>,
}

impl RunArgs {
    /// Defaults, then the config file, then flags and environment.
    pub fn resolve(&self) -> Result<(Tolerances, u64)> {
        let cfg = RunConfig::load(self.config.as_deref())?;
        let mut t = cfg.tolerances;
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut t.identity, self.tol);
        set(&mut t.rank_factor, self.rank_factor);
        set(&mut t.rank_band, self.rank_band);
        set(&mut t.exact, self.exact);
        set(&mut t.graph_gram, self.graph_gram);
        set(&mut t.lift, self.lift);
        set(&mut t.extension, self.extension);
        set(&mut t.norm_slack, self.norm_slack);
        set(&mut t.monotone_slack, self.monotone_slack);
        if let Some(s) = self.samples {
            t.samples = s;
        }
        Ok((t, self.seed.unwrap_or(cfg.seed)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checked_in_defaults_match_library_defaults() {
        let cfg = RunConfig::parse(DEFAULTS).unwrap();
        assert_eq!(cfg.tolerances, Tolerances::default());
        assert_eq!(cfg.seed, 0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("[tolerances]\nidentiy = 1.0\n").is_err());
    }
}
