use serde::{Deserialize, Serialize};

use super::meta::StratumThresholds;
use crate::worlds::ENV_LEVELS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchBudget {
    pub slack: usize,
    pub cap: usize,
    pub states_per_size: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairAuditBudget {
    pub slack: usize,
    pub cap: usize,
    pub states_per_size: usize,
    pub upstream_alternatives: usize,
    pub seconds: f64,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            slack: 2,
            cap: 8,
            states_per_size: 50_000,
            seconds: 2.5,
        }
    }
}

impl Default for PairAuditBudget {
    fn default() -> Self {
        PairAuditBudget {
            slack: 3,
            cap: 9,
            states_per_size: 80_000,
            upstream_alternatives: 5,
            seconds: 120.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub min_variables: usize,
    pub max_variables: usize,
    pub roots: usize,
    /// (bound, weight) pairs for the per-problem predecessor bound.
    pub max_predecessors: Vec<(usize, f64)>,
    pub min_ast_size: usize,
    pub max_ast_size: usize,
    pub min_depth: usize,
    pub max_depth: usize,
    pub mechanism_attempts: usize,
    pub negation_rate: f64,
    pub units: usize,
    pub min_rows: usize,
    pub max_rows: usize,
    pub min_compact_rows: usize,
    pub max_compact_rows: usize,
    pub train_worlds: usize,
    pub max_train_worlds: usize,
    pub heldout_worlds: usize,
    pub env_levels: Vec<f64>,
    pub assigned_bias: Vec<f64>,
    pub max_targets: usize,
    pub forced_focus_rate: f64,
    pub strata: Vec<StratumThresholds>,
    pub probe_size: usize,
    pub large_probe_rate: f64,
    pub min_local_support: f64,
    pub shortcut_cap: usize,
    pub shortcut_max_parents: usize,
    pub min_candidate_worlds: usize,
    pub max_candidate_worlds: usize,
    pub min_iterations: usize,
    pub max_iterations: usize,
    pub disambiguation: SearchBudget,
    pub disambiguation_max_worlds: usize,
    pub disambiguation_min_kills: usize,
    pub disambiguation_candidates: usize,
    pub local_audit: SearchBudget,
    pub pair_audit: PairAuditBudget,
    pub run_audits: bool,
    pub max_attempts: u32,
    pub extra_worlds_min: usize,
    pub extra_worlds_max: usize,
    pub extra_worlds_fourth_below: f64,
}

pub fn default_strata() -> Vec<StratumThresholds> {
    vec![
        StratumThresholds {
            name: "base".into(),
            scored_cells: 33,
            scored_worlds: 3,
            assigned_worlds: 3,
            constant_worlds: 1,
            max_intervened_per_variable: 5,
            kill_fraction: 0.75,
            novelty_low: 0.20,
            novelty_high: 0.72,
            shortcut_floor: 2,
        },
        StratumThresholds {
            name: "firm".into(),
            scored_cells: 40,
            scored_worlds: 4,
            assigned_worlds: 3,
            constant_worlds: 1,
            max_intervened_per_variable: 5,
            kill_fraction: 0.85,
            novelty_low: 0.25,
            novelty_high: 0.70,
            shortcut_floor: 2,
        },
        StratumThresholds {
            name: "strict".into(),
            scored_cells: 44,
            scored_worlds: 4,
            assigned_worlds: 4,
            constant_worlds: 2,
            max_intervened_per_variable: 4,
            kill_fraction: 0.95,
            novelty_low: 0.25,
            novelty_high: 0.65,
            shortcut_floor: 3,
        },
    ]
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            min_variables: 6,
            max_variables: 10,
            roots: 3,
            max_predecessors: vec![(2, 0.05), (3, 0.15), (4, 0.65), (5, 0.15)],
            min_ast_size: 3,
            max_ast_size: 14,
            min_depth: 2,
            max_depth: 6,
            mechanism_attempts: 500,
            negation_rate: 0.2,
            units: 12,
            min_rows: 10,
            max_rows: 12,
            min_compact_rows: 4,
            max_compact_rows: 8,
            train_worlds: 8,
            max_train_worlds: 11,
            heldout_worlds: 8,
            env_levels: ENV_LEVELS.to_vec(),
            assigned_bias: vec![0.3, 0.5, 0.7],
            max_targets: 3,
            forced_focus_rate: 0.05,
            strata: default_strata(),
            probe_size: 3,
            large_probe_rate: 0.05,
            min_local_support: 0.5,
            shortcut_cap: 5,
            shortcut_max_parents: 4,
            min_candidate_worlds: 170,
            max_candidate_worlds: 340,
            min_iterations: 8,
            max_iterations: 17,
            disambiguation: SearchBudget::default(),
            disambiguation_max_worlds: 3,
            disambiguation_min_kills: 2,
            disambiguation_candidates: 40,
            local_audit: SearchBudget {
                slack: 4,
                cap: 10,
                states_per_size: 80_000,
                seconds: 4.0,
            },
            pair_audit: PairAuditBudget::default(),
            run_audits: true,
            max_attempts: 200,
            extra_worlds_min: 3,
            extra_worlds_max: 4,
            extra_worlds_fourth_below: 0.9,
        }
    }
}

impl GeneratorConfig {
    pub fn check(&self) -> Result<(), String> {
        let bad = |m: &str| Err(m.to_owned());
        if self.min_variables < self.roots + 1 || self.min_variables > self.max_variables {
            return bad("variable range must allow at least one endogenous variable");
        }
        if self.max_variables > 16 {
            return bad("at most 16 observed variables are supported");
        }
        if self.max_predecessors.is_empty()
            || self.max_predecessors.iter().any(|(b, w)| *b == 0 || *w < 0.0)
        {
            return bad("predecessor bounds must be positive with nonnegative weights");
        }
        if self.max_predecessors.iter().any(|(b, _)| *b > 6) {
            return bad("predecessor bound above 6 is unsupported");
        }
        if self.min_rows == 0 || self.min_rows > self.max_rows || self.max_rows > self.units {
            return bad("row range must be positive and fit in the unit pool");
        }
        if self.min_compact_rows == 0 || self.min_compact_rows > self.max_compact_rows {
            return bad("compact row range is empty");
        }
        if self.max_compact_rows > self.units {
            return bad("compact worlds need no more rows than units");
        }
        if self.train_worlds == 0 || self.train_worlds > self.max_train_worlds {
            return bad("training world counts are inconsistent");
        }
        if self.env_levels.is_empty() || self.assigned_bias.is_empty() || self.strata.is_empty() {
            return bad("environment levels, biases and strata must be nonempty");
        }
        if self.probe_size == 0 || self.probe_size > 4 {
            return bad("probe size must be 1..=4");
        }
        if self.shortcut_max_parents == 0 || self.shortcut_max_parents > 6 {
            return bad("shortcut parent bound must be 1..=6");
        }
        if self.min_candidate_worlds > self.max_candidate_worlds
            || self.min_iterations == 0
            || self.min_iterations > self.max_iterations
        {
            return bad("survivor-reduction budget ranges are inconsistent");
        }
        if self.extra_worlds_min > self.extra_worlds_max {
            return bad("extra-world range is empty");
        }
        Ok(())
    }
}
