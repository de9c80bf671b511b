use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use super::config::GeneratorConfig;
use crate::scm::Scm;
use crate::worlds::{simulate_compiled, Intervention, Mode, Signature, Unit, World};

pub fn unit_id(i: usize) -> String {
    format!("u{i:02}")
}

pub fn make_units<R: Rng>(roots: &[String], start: usize, count: usize, rng: &mut R) -> Vec<Unit> {
    (start..start + count)
        .map(|i| Unit {
            id: unit_id(i),
            thresholds: roots.iter().map(|r| (r.clone(), rng.gen::<f64>())).collect(),
        })
        .collect()
}

pub fn random_env<R: Rng>(roots: &[String], cfg: &GeneratorConfig, rng: &mut R) -> BTreeMap<String, f64> {
    roots
        .iter()
        .map(|r| (r.clone(), *cfg.env_levels.choose(rng).expect("levels")))
        .collect()
}

pub fn target_size<R: Rng>(cfg: &GeneratorConfig, n: usize, rng: &mut R) -> usize {
    let size = if rng.gen_bool(cfg.forced_focus_rate) {
        cfg.max_targets + 1
    } else {
        rng.gen_range(1..=cfg.max_targets)
    };
    size.min(n)
}

/// Row assignments with the given bias; an all-equal vector of two or more
/// rows has its last entry flipped.
pub fn assigned_vector<R: Rng>(rows: usize, bias: f64, rng: &mut R) -> Vec<bool> {
    let mut v: Vec<bool> = (0..rows).map(|_| rng.gen_bool(bias)).collect();
    if rows >= 2 && v.iter().all(|b| *b == v[0]) {
        let last = rows - 1;
        v[last] = !v[last];
    }
    v
}

pub fn intervention<R: Rng>(
    mode: Mode,
    targets: &[String],
    rows: usize,
    cfg: &GeneratorConfig,
    rng: &mut R,
) -> Intervention {
    match mode {
        Mode::None => Intervention::none(),
        Mode::HardConstant => {
            Intervention::constant(targets.iter().map(|t| (t.clone(), rng.gen_bool(0.5))).collect())
        }
        Mode::HardAssigned => Intervention::assigned(
            targets
                .iter()
                .map(|t| {
                    let bias = *cfg.assigned_bias.choose(rng).expect("biases");
                    (t.clone(), assigned_vector(rows, bias, rng))
                })
                .collect(),
        ),
    }
}

/// A world before simulation: which units, which environment, which
/// intervention.
#[derive(Clone, Debug)]
pub struct WorldSpec {
    pub units: Vec<usize>,
    pub env: BTreeMap<String, f64>,
    pub iv: Intervention,
}

impl WorldSpec {
    pub fn simulate(&self, id: String, gold: &Scm, compiled: &crate::scm::CompiledScm, pool: &[Unit]) -> World {
        let units: Vec<Unit> = self.units.iter().map(|&i| pool[i].clone()).collect();
        simulate_compiled(id, gold, compiled, &units, &self.env, &self.iv).expect("spec is well formed")
    }
}

pub fn ordinary_units<R: Rng>(cfg: &GeneratorConfig, rng: &mut R) -> Vec<usize> {
    (0..rng.gen_range(cfg.min_rows..=cfg.max_rows)).collect()
}

pub fn compact_units<R: Rng>(cfg: &GeneratorConfig, pool: usize, rng: &mut R) -> Vec<usize> {
    let rows = rng.gen_range(cfg.min_compact_rows..=cfg.max_compact_rows).min(pool);
    let mut picked: Vec<usize> = (0..pool).collect::<Vec<_>>().choose_multiple(rng, rows).copied().collect();
    picked.sort_unstable();
    picked
}

/// Uniform over modes and targets within the target-size rules.
pub fn propose<R: Rng>(
    cfg: &GeneratorConfig,
    gold: &Scm,
    units: Vec<usize>,
    rng: &mut R,
) -> WorldSpec {
    let mode = *[Mode::None, Mode::HardConstant, Mode::HardAssigned]
        .choose(rng)
        .expect("modes");
    spec_with_mode(cfg, gold, units, mode, rng)
}

pub fn spec_with_mode<R: Rng>(
    cfg: &GeneratorConfig,
    gold: &Scm,
    units: Vec<usize>,
    mode: Mode,
    rng: &mut R,
) -> WorldSpec {
    let env = random_env(gold.roots(), cfg, rng);
    let targets: Vec<String> = if mode == Mode::None {
        Vec::new()
    } else {
        let size = target_size(cfg, gold.observed().len(), rng);
        let mut t: Vec<String> = gold.observed().choose_multiple(rng, size).cloned().collect();
        t.sort();
        t
    };
    let iv = intervention(mode, &targets, units.len(), cfg, rng);
    WorldSpec { units, env, iv }
}

/// Number of training worlds intervening on each endogenous variable.
pub fn intervened_counts(gold: &Scm, worlds: &[World]) -> BTreeMap<String, usize> {
    gold.endogenous()
        .iter()
        .map(|v| {
            let c = worlds
                .iter()
                .filter(|w| w.intervention.targets().contains(v))
                .count();
            (v.clone(), c)
        })
        .collect()
}

pub fn target_sets(worlds: &[World]) -> BTreeSet<Vec<String>> {
    worlds
        .iter()
        .map(|w| w.intervention.signature().0)
        .filter(|t| !t.is_empty())
        .collect()
}

/// Fraction of held-out worlds whose target set never appears in training.
pub fn heldout_novelty(train: &[World], heldout: &[World]) -> f64 {
    if heldout.is_empty() {
        return 0.0;
    }
    let seen = target_sets(train);
    let novel = heldout
        .iter()
        .filter(|w| !seen.contains(&w.intervention.signature().0))
        .count();
    novel as f64 / heldout.len() as f64
}

pub fn signatures(worlds: &[World]) -> BTreeSet<Signature> {
    worlds.iter().map(|w| w.intervention.signature()).collect()
}
