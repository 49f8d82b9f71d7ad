//! Configuration files.
//!
//! Both commands read TOML: flat `key = value` pairs plus `[section]`
//! tables. A sweep file written by `sweep -o` as `<output>.manifest` is
//! itself a valid sweep config; its `[run]` table is informational.

use coopmud::montecarlo::{Scenario, SweepConfig, SweepVariable};
use coopmud::protocols::ProtocolSpec;
use serde::{Deserialize, Serialize};

/// A sweep configuration as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    pub variable: SweepVariable,
    pub grid: Vec<f64>,
    pub protocols: Vec<ProtocolSpec>,
    pub trials: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Emit one row per user in addition to the mean row.
    #[serde(default)]
    pub per_user: bool,
    pub scenario: Scenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunInfo>,
}

/// Provenance recorded in a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    pub command: String,
    pub tool_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub output: String,
    pub started: String,
    pub finished: String,
}

impl SweepFile {
    pub fn from_config(config: &SweepConfig, per_user: bool) -> Self {
        Self {
            variable: config.variable,
            grid: config.grid.clone(),
            protocols: config.protocols.clone(),
            trials: config.trials,
            seed: Some(config.seed),
            per_user,
            scenario: config.scenario.clone(),
            run: None,
        }
    }

    /// The library config, with `default_seed` filling in a missing seed.
    pub fn to_config(&self, default_seed: u64) -> SweepConfig {
        SweepConfig {
            variable: self.variable,
            grid: self.grid.clone(),
            protocols: self.protocols.clone(),
            trials: self.trials,
            seed: self.seed.unwrap_or(default_seed),
            scenario: self.scenario.clone(),
        }
    }
}

/// Inputs for the closed-form report. Every section is optional and only
/// printed when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeFile {
    pub sigma: f64,
    #[serde(default = "default_spreading_gain")]
    pub spreading_gain: usize,
    /// Received amplitude of each user at the base station.
    pub amplitudes: Vec<f64>,
    /// Pairwise cross-correlation shared by all pairs; enables the union
    /// bounds.
    #[serde(default)]
    pub correlation: Option<f64>,
    /// Full cross-correlation matrix; overrides `correlation`.
    #[serde(default)]
    pub correlation_rows: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub relay_single: Option<RelaySingleSection>,
    #[serde(default)]
    pub relay_coded: Option<RelayCodedSection>,
    #[serde(default)]
    pub coding_gain: Option<CodingGainSection>,
    #[serde(default)]
    pub mimo_bound: Option<MimoSection>,
    #[serde(default)]
    pub spectral_efficiency: Option<SpectralSection>,
}

fn default_spreading_gain() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaySingleSection {
    pub p_direct: f64,
    pub p_source_relay: f64,
    pub p_relay_base: f64,
}

/// One relay coding `members` (1-based labels, any order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelayCodedSection {
    pub target: usize,
    pub members: Vec<usize>,
    /// Per member: direct error rate at the base station.
    pub p_direct: Vec<f64>,
    /// Per member: error rate of the member's bit at the relay.
    pub p_relay_in: Vec<f64>,
    pub p_relay_out: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodingGainSection {
    pub p_top_old: f64,
    pub p_top_new: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MimoSection {
    pub p_direct: f64,
    pub p_relay_links: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralSection {
    pub users: usize,
    pub relays: usize,
}

/// Manifest written next to an `analyze` result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeManifest {
    pub input: AnalyzeFile,
    pub run: RunInfo,
}

/// Manifest written next to an `efficiency` result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyManifest {
    pub a1: f64,
    pub a2: f64,
    pub rho: f64,
    pub ar: Vec<f64>,
    pub run: RunInfo,
}
