//! Generation metadata stored alongside each record.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcomes {
    pub scored_cells: usize,
    pub assigned_worlds: usize,
    pub constant_worlds: usize,
    pub max_intervened_per_variable: usize,
    pub heldout_novelty: f64,
    pub min_local_support: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SurvivorStats {
    pub initial_pool: usize,
    pub remaining: usize,
    pub kill_fraction: f64,
    pub threshold: f64,
    pub iterations: usize,
    pub candidates_proposed: usize,
    pub worlds_added: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DisambiguationStats {
    pub alternatives: usize,
    pub ruled_out: usize,
    pub worlds_added: usize,
    pub timed_out: bool,
}

/// Bounded ambiguity search outcome. A zero count means nothing was found
/// within budget, not that nothing exists.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    pub kind: String,
    pub per_variable: BTreeMap<String, usize>,
    pub pairs: usize,
    pub states_capped: bool,
    pub timed_out: bool,
    /// Wall-clock time; not persisted so record files stay reproducible.
    #[serde(skip)]
    pub seconds: f64,
}

impl AuditResult {
    pub fn total(&self) -> usize {
        self.per_variable.values().sum::<usize>() + self.pairs
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StratumThresholds {
    pub name: String,
    pub scored_cells: usize,
    pub scored_worlds: usize,
    pub assigned_worlds: usize,
    pub constant_worlds: usize,
    pub max_intervened_per_variable: usize,
    pub kill_fraction: f64,
    pub novelty_low: f64,
    pub novelty_high: f64,
    pub shortcut_floor: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub master_seed: u64,
    pub index: u64,
    pub attempt: u32,
    pub stratum: StratumThresholds,
    pub max_predecessors: usize,
    pub probe_size: usize,
    pub filters: FilterOutcomes,
    pub survivors: SurvivorStats,
    pub disambiguation: DisambiguationStats,
    #[serde(default)]
    pub audits: Vec<AuditResult>,
    #[serde(default)]
    pub added_worlds: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage_before: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage_after: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternatives_separated: Option<usize>,
    #[serde(default)]
    pub nondeterministic: bool,
}
