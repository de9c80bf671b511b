//! Local mechanism alternatives: formulas over predecessor subsets that fit
//! the training rows of one variable but differ from its gold mechanism.

use std::time::Instant;

use itertools::Itertools;

use crate::dsl::Expr;
use crate::enumerate::{full_mask, semantic_bank, Bank, Partial};
use crate::scm::Scm;
use crate::worlds::World;

/// Row bits of training rows where `v` is not intervened.
pub fn scored_rows(train: &[World], v: &str) -> Vec<u64> {
    train
        .iter()
        .filter(|w| !w.intervention.targets().contains(v))
        .flat_map(|w| w.rows.iter().map(|r| r.bits))
        .collect()
}

/// Assignment index of `idxs` (first most significant) in a row.
pub fn pattern(row: u64, idxs: &[usize]) -> usize {
    idxs.iter().fold(0, |acc, &i| acc << 1 | (row >> i & 1) as usize)
}

/// Required outputs of `vi` keyed by parent pattern; `None` on conflict.
pub fn partial_table(rows: &[u64], idxs: &[usize], vi: usize) -> Option<Partial> {
    let mut defined = 0u64;
    let mut values = 0u64;
    for &row in rows {
        let p = pattern(row, idxs);
        let bit = row >> vi & 1;
        if defined >> p & 1 == 1 {
            if values >> p & 1 != bit {
                return None;
            }
        } else {
            defined |= 1 << p;
            values |= bit << p;
        }
    }
    Some(Partial {
        k: idxs.len(),
        defined,
        values,
    })
}

#[derive(Clone, Debug)]
pub struct LocalAlt {
    pub var: String,
    pub vi: usize,
    pub parents: Vec<String>,
    pub idxs: Vec<usize>,
    pub table: u64,
    pub size: usize,
    pub expr: Expr,
}

impl LocalAlt {
    pub fn output(&self, row: u64) -> bool {
        self.table >> pattern(row, &self.idxs) & 1 == 1
    }

    /// Whether replacing the gold mechanism by this one keeps the world exact.
    pub fn consistent_with(&self, w: &World) -> bool {
        if w.intervention.targets().contains(&self.var) {
            return true;
        }
        w.rows
            .iter()
            .all(|r| self.output(r.bits) == (r.bits >> self.vi & 1 == 1))
    }
}

/// Table of the gold mechanism over `subset` when its effective parents are
/// exactly that subset.
fn gold_table_on(gold: &Scm, v: &str, subset: &[String]) -> Option<u64> {
    let e = gold.mechanism(v)?;
    let eff = e.effective_parents();
    if eff.len() != subset.len() || !subset.iter().all(|s| eff.contains(s)) {
        return None;
    }
    let t = e.truth_table(subset).ok()?;
    Some(
        t.outputs
            .iter()
            .enumerate()
            .fold(0, |acc, (i, b)| acc | (*b as u64) << i),
    )
}

/// Search bounds for one alternative scan.
#[derive(Clone, Copy, Debug)]
pub struct Scan {
    pub max_parents: usize,
    pub min_size: usize,
    pub cap: usize,
    pub states_per_size: usize,
    pub deadline: Option<Instant>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ScanOutcome {
    pub states_capped: bool,
    pub timed_out: bool,
}

/// Every formula with all of `subset` effective, within the size bounds,
/// consistent with `rows` and semantically different from gold. Visits
/// subsets of `pool` up to the parent bound that pass `subset_ok`; `keep`
/// receives each hit and returns false to stop.
pub fn scan_alternatives(
    gold: &Scm,
    v: &str,
    rows: &[u64],
    pool: &[String],
    scan: Scan,
    subset_ok: impl Fn(&[String]) -> bool,
    mut keep: impl FnMut(LocalAlt) -> bool,
) -> ScanOutcome {
    let observed = gold.observed();
    let vi = gold.index_of(v).expect("observed");
    let mut out = ScanOutcome::default();
    let max_k = scan.max_parents.min(pool.len()).min(6);
    'sizes: for k in 1..=max_k {
        let bank: std::sync::Arc<Bank> = semantic_bank(k, scan.cap, scan.states_per_size);
        out.states_capped |= bank.truncated;
        for subset in pool.iter().cloned().combinations(k) {
            if !subset_ok(&subset) {
                continue;
            }
            if let Some(d) = scan.deadline {
                if Instant::now() >= d {
                    out.timed_out = true;
                    break 'sizes;
                }
            }
            let idxs: Vec<usize> = subset
                .iter()
                .map(|s| observed.iter().position(|o| o == s).expect("observed"))
                .collect();
            let Some(partial) = partial_table(rows, &idxs, vi) else {
                continue;
            };
            let gold_table = gold_table_on(gold, v, &subset);
            for &n in bank.with_effective(((1u16 << k) - 1) as u8) {
                let node = bank.nodes()[n as usize];
                let size = node.size as usize;
                if size < scan.min_size || size > scan.cap || !partial.accepts(node.table) {
                    continue;
                }
                if gold_table == Some(node.table & full_mask(k)) {
                    continue;
                }
                let alt = LocalAlt {
                    var: v.to_owned(),
                    vi,
                    parents: subset.clone(),
                    idxs: idxs.clone(),
                    table: node.table & full_mask(k),
                    size,
                    expr: bank.expr(node.how, &subset),
                };
                if !keep(alt) {
                    break 'sizes;
                }
            }
        }
    }
    out
}

/// Variables preceding `v` in the latent order.
pub fn predecessors(latent_order: &[String], v: &str) -> Vec<String> {
    let pos = latent_order.iter().position(|x| x == v).expect("in order");
    latent_order[..pos].to_vec()
}

/// Keeps alternatives within `slack` sizes of the smallest one, at most
/// `limit` of them, smallest first.
pub fn within_slack(mut alts: Vec<LocalAlt>, slack: usize, limit: usize) -> Vec<LocalAlt> {
    alts.sort_by(|a, b| a.size.cmp(&b.size).then_with(|| a.expr.render().cmp(&b.expr.render())));
    let Some(min) = alts.first().map(|a| a.size) else {
        return alts;
    };
    alts.retain(|a| a.size <= min + slack);
    alts.truncate(limit);
    alts
}
