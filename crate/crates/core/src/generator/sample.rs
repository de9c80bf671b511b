use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use super::config::GeneratorConfig;
use super::GenError;
use crate::dsl::{Expr, Op};
use crate::scm::Scm;

#[derive(Clone, Debug)]
pub struct SampledScm {
    pub scm: Scm,
    pub latent_order: Vec<String>,
    pub max_predecessors: usize,
}

pub fn pick_weighted<R: Rng>(rng: &mut R, items: &[(usize, f64)]) -> usize {
    let total: f64 = items.iter().map(|(_, w)| w).sum();
    let mut x = rng.gen::<f64>() * total;
    for (v, w) in items {
        if x < *w {
            return *v;
        }
        x -= w;
    }
    items.last().expect("nonempty").0
}

/// Admissible parent-count range for a window of `available` predecessors.
pub fn parent_count_range(available: usize) -> (usize, usize) {
    let lo = if available >= 2 { 2 } else { 1 };
    (lo.min(available), available)
}

fn build<R: Rng>(leaves: &[String], rng: &mut R, outer: Option<Op>, negation_rate: f64) -> Expr {
    if leaves.len() == 1 {
        let v = Expr::var(leaves[0].clone());
        return if rng.gen_bool(negation_rate) { Expr::not(v) } else { v };
    }
    let ops: Vec<Op> = Op::NARY.into_iter().filter(|o| Some(*o) != outer).collect();
    let op = *ops.choose(rng).expect("ops");
    let groups = rng.gen_range(2..=leaves.len().min(3));
    let mut cuts: Vec<usize> = (1..leaves.len()).collect();
    cuts.shuffle(rng);
    let mut cuts: Vec<usize> = cuts.into_iter().take(groups - 1).collect();
    cuts.sort_unstable();
    let mut children = Vec::with_capacity(groups);
    let mut start = 0;
    for c in cuts.into_iter().chain(std::iter::once(leaves.len())) {
        children.push(build(&leaves[start..c], rng, Some(op), negation_rate));
        start = c;
    }
    let e = Expr::apply(op, children);
    if rng.gen_bool(negation_rate / 2.0) {
        Expr::not(e)
    } else {
        e
    }
}

/// Random formula using every parent at least once.
pub fn random_mechanism<R: Rng>(parents: &[String], rng: &mut R, negation_rate: f64) -> Expr {
    let mut leaves: Vec<String> = parents.to_vec();
    if parents.len() >= 2 {
        for _ in 0..rng.gen_range(0..=2) {
            leaves.push(parents.choose(rng).expect("parents").clone());
        }
    }
    leaves.shuffle(rng);
    build(&leaves, rng, None, negation_rate)
}

pub fn mechanism_ok(e: &Expr, parents: &[String], cfg: &GeneratorConfig) -> bool {
    let m = e.metrics();
    if m.size < cfg.min_ast_size
        || m.size > cfg.max_ast_size
        || m.depth < cfg.min_depth
        || m.depth > cfg.max_depth
    {
        return false;
    }
    let declared: BTreeSet<String> = parents.iter().cloned().collect();
    if e.effective_parents() != declared {
        return false;
    }
    !e.signature().table.is_constant()
}

/// Samples a latent SCM: roots occupy the first latent slots, each
/// endogenous slot draws parents from its nearest predecessors.
pub fn sample_scm<R: Rng>(cfg: &GeneratorConfig, rng: &mut R) -> Result<SampledScm, GenError> {
    let n = rng.gen_range(cfg.min_variables..=cfg.max_variables);
    let observed: Vec<String> = (1..=n).map(|i| format!("X{i}")).collect();
    let mut latent_order = observed.clone();
    latent_order.shuffle(rng);
    let max_pred = pick_weighted(rng, &cfg.max_predecessors);
    let roots: Vec<String> = latent_order[..cfg.roots].to_vec();
    let mut mechanisms = BTreeMap::new();
    for slot in cfg.roots..n {
        let window_start = slot.saturating_sub(max_pred);
        let window = &latent_order[window_start..slot];
        let (lo, hi) = parent_count_range(window.len());
        let mut found = None;
        for _ in 0..cfg.mechanism_attempts {
            let count = rng.gen_range(lo..=hi);
            let mut parents: Vec<String> = window.choose_multiple(rng, count).cloned().collect();
            parents.sort();
            let e = random_mechanism(&parents, rng, cfg.negation_rate).canonicalize();
            if mechanism_ok(&e, &parents, cfg) {
                found = Some(e);
                break;
            }
        }
        let e = found.ok_or_else(|| {
            GenError::BudgetExhausted(format!("no admissible mechanism for {}", latent_order[slot]))
        })?;
        mechanisms.insert(latent_order[slot].clone(), e);
    }
    let scm = Scm::new(observed, roots, mechanisms).map_err(|e| GenError::Internal(e.to_string()))?;
    Ok(SampledScm {
        scm,
        latent_order,
        max_predecessors: max_pred,
    })
}
