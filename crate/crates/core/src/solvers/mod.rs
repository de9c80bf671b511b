//! Non-LLM baselines: staged symbolic exact search, and score-based
//! structure proposals feeding the same exact fitter.

pub mod hybrid;
pub mod structure;
pub mod symbolic;

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::dsl::Expr;
use crate::enumerate::{semantic_bank, Partial};
use crate::generator::local::{partial_table as table_of_rows, scored_rows};
use crate::harness::submission::{Answer, Submission};
use crate::metrics::score_scm;
use crate::scm::{Scm, Setting};
use crate::worlds::ProblemRecord;

pub use hybrid::hybrid_solve;
pub use symbolic::symbolic_exact_search;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageBudget {
    pub cap: usize,
    pub slack: usize,
    pub max_candidates: usize,
    pub states_per_size: usize,
    pub seconds: f64,
    pub max_parents: usize,
}

/// Full symbolic stages: caps 8/10/12 with 2 s, 20 s and 600 s.
pub fn symbolic_stages() -> Vec<StageBudget> {
    vec![
        StageBudget {
            cap: 8,
            slack: 2,
            max_candidates: 32,
            states_per_size: 50_000,
            seconds: 2.0,
            max_parents: 5,
        },
        StageBudget {
            cap: 10,
            slack: 2,
            max_candidates: 32,
            states_per_size: 50_000,
            seconds: 20.0,
            max_parents: 5,
        },
        StageBudget {
            cap: 12,
            slack: 3,
            max_candidates: 256,
            states_per_size: 100_000,
            seconds: 600.0,
            max_parents: 5,
        },
    ]
}

/// The first two symbolic stages only.
pub fn desk_stages() -> Vec<StageBudget> {
    symbolic_stages().into_iter().take(2).collect()
}

/// Training-row requirements for `v` over `parents`, or `None` when two
/// rows with equal parent values disagree on `v`.
pub fn partial_table(record: &ProblemRecord, v: &str, parents: &[String]) -> Option<Partial> {
    let observed = record.observed();
    let vi = observed.iter().position(|o| o == v)?;
    let idxs: Vec<usize> = parents
        .iter()
        .map(|p| observed.iter().position(|o| o == p))
        .collect::<Option<_>>()?;
    table_of_rows(&scored_rows(&record.train, v), &idxs, vi)
}

#[derive(Clone, Debug, Default)]
pub struct FitResult {
    /// Smallest first, then by rendering.
    pub exprs: Vec<Expr>,
    pub timed_out: bool,
}

/// Formulas over `names` agreeing with every defined entry, by increasing
/// size up to the cap; collection stops `slack` sizes past the first hit
/// or at the candidate limit. Only formulas reading every name are kept,
/// so each function is reported over its own support.
pub fn exact_fit(table: Partial, names: &[String], budget: &StageBudget, deadline: Option<Instant>, bound: Option<usize>) -> FitResult {
    let k = table.k;
    let mut out = FitResult::default();
    if k == 0 || k > crate::enumerate::MAX_VARS {
        return out;
    }
    let bank = semantic_bank(k, budget.cap, budget.states_per_size);
    let mut first: Option<usize> = None;
    let mut found: Vec<(usize, String, Expr)> = Vec::new();
    for (i, &n) in bank.with_effective(((1u16 << k) - 1) as u8).iter().enumerate() {
        if i % 4096 == 0 {
            if let Some(d) = deadline {
                if Instant::now() >= d {
                    out.timed_out = true;
                    break;
                }
            }
        }
        let node = bank.nodes()[n as usize];
        let size = node.size as usize;
        let limit = first.or(bound).map(|f| f + budget.slack);
        if limit.is_some_and(|l| size > l) {
            break;
        }
        if table.accepts(node.table) {
            first.get_or_insert(size);
            let e = bank.expr(node.how, names);
            found.push((size, e.render(), e));
            if found.len() >= budget.max_candidates {
                break;
            }
        }
    }
    found.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
    out.exprs = found.into_iter().map(|(_, _, e)| e).collect();
    out
}

/// Candidate mechanisms for one variable.
#[derive(Clone, Debug, Default)]
pub struct VarFit {
    pub exprs: Vec<Expr>,
    pub timed_out: bool,
}

impl VarFit {
    pub fn best(&self) -> Option<&Expr> {
        self.exprs.first()
    }
}

/// Fits variables over subsets of parent pools, memoized by pool.
pub struct Fitter<'a> {
    record: &'a ProblemRecord,
    budget: StageBudget,
    deadline: Option<Instant>,
    rows: HashMap<String, Vec<u64>>,
    cache: HashMap<(String, Vec<String>), VarFit>,
    pub timed_out: bool,
}

impl<'a> Fitter<'a> {
    pub fn new(record: &'a ProblemRecord, budget: StageBudget, deadline: Option<Instant>) -> Fitter<'a> {
        let rows = record
            .observed()
            .iter()
            .map(|v| (v.clone(), scored_rows(&record.train, v)))
            .collect();
        Fitter {
            record,
            budget,
            deadline,
            rows,
            cache: HashMap::new(),
            timed_out: false,
        }
    }

    pub fn expired(&self) -> bool {
        self.deadline.is_some_and(|d| Instant::now() >= d)
    }

    /// Smallest train-consistent formulas for `v` reading a subset of
    /// `pool`, within the stage slack of the overall smallest.
    pub fn fit(&mut self, v: &str, pool: &[String]) -> VarFit {
        let mut pool = pool.to_vec();
        pool.sort();
        pool.dedup();
        let key = (v.to_owned(), pool.clone());
        if let Some(hit) = self.cache.get(&key) {
            return hit.clone();
        }
        let observed = self.record.observed();
        let vi = observed.iter().position(|o| o == v).expect("observed");
        let rows = &self.rows[v];
        let mut best: Option<usize> = None;
        let mut all: Vec<(usize, String, Expr)> = Vec::new();
        let mut timed_out = false;
        let max_k = self.budget.max_parents.min(pool.len());
        'k: for k in 1..=max_k {
            // a formula reading k variables has at least 2k - 1 nodes
            if best.is_some_and(|b| 2 * k - 1 > b + self.budget.slack) {
                break;
            }
            for subset in pool.iter().cloned().combinations(k) {
                if self.expired() {
                    timed_out = true;
                    break 'k;
                }
                let idxs: Vec<usize> = subset
                    .iter()
                    .map(|s| observed.iter().position(|o| o == s).expect("observed"))
                    .collect();
                let Some(table) = table_of_rows(rows, &idxs, vi) else {
                    continue;
                };
                let fit = exact_fit(table, &subset, &self.budget, self.deadline, best);
                timed_out |= fit.timed_out;
                for e in fit.exprs {
                    let size = e.size();
                    best = Some(best.map_or(size, |b| b.min(size)));
                    all.push((size, e.render(), e));
                }
            }
        }
        let out = match best {
            Some(b) => {
                all.retain(|(s, _, _)| *s <= b + self.budget.slack);
                all.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
                all.dedup_by(|a, b| a.1 == b.1);
                all.truncate(self.budget.max_candidates);
                VarFit {
                    exprs: all.into_iter().map(|(_, _, e)| e).collect(),
                    timed_out,
                }
            }
            None => VarFit {
                exprs: Vec::new(),
                timed_out,
            },
        };
        self.timed_out |= timed_out;
        if !timed_out {
            self.cache.insert(key, out.clone());
        }
        out
    }
}

/// What a solver returns: the answer plus the train-exact SCM behind it and
/// single-mechanism swaps that are also train-exact.
#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub submission: Submission,
    pub scm: Option<Scm>,
    pub alternates: Vec<Scm>,
    pub stage: Option<usize>,
    pub timed_out: bool,
}

/// Schema-correct placeholder answer for an unsolved record.
pub fn failure_answer(record: &ProblemRecord) -> Answer {
    let (roots, endo): (Option<Vec<String>>, Vec<String>) = match record.setting() {
        Setting::HiddenRoots => (Some(Vec::new()), record.observed().to_vec()),
        _ => (None, record.gold.endogenous().to_vec()),
    };
    Answer {
        roots,
        mechanisms: endo.into_iter().map(|v| (v, String::new())).collect(),
        ..Answer::default()
    }
}

pub fn answer_for(record: &ProblemRecord, scm: &Scm) -> Answer {
    Answer {
        roots: (record.setting() == Setting::HiddenRoots).then(|| scm.roots().to_vec()),
        mechanisms: scm.rendered(),
        ..Answer::default()
    }
}

/// Assembles the outcome, re-checking train exactness through the scorer.
pub(crate) fn finish(
    record: &ProblemRecord,
    system: &str,
    found: Option<(Scm, usize)>,
    candidates: &BTreeMap<String, Vec<Expr>>,
    timed_out: bool,
) -> SolveOutcome {
    let checked = found.filter(|(scm, _)| {
        crate::scm::validate(scm, &record.disclosure).is_valid() && score_scm(record, scm).train_exact
    });
    let (answer, scm, stage, failed) = match checked {
        Some((scm, stage)) => (answer_for(record, &scm), Some(scm), Some(stage), false),
        None => (failure_answer(record), None, None, true),
    };
    let alternates = scm
        .as_ref()
        .map(|s| swaps(record, s, candidates))
        .unwrap_or_default();
    SolveOutcome {
        submission: Submission {
            task: record.key(),
            system: system.to_owned(),
            answer,
            strict: true,
            failed,
            schema_error: None,
        },
        scm,
        alternates,
        stage,
        timed_out,
    }
}

/// SCMs differing from `scm` in one mechanism, drawn from the per-variable
/// candidate lists, kept when valid and train-exact.
fn swaps(record: &ProblemRecord, scm: &Scm, candidates: &BTreeMap<String, Vec<Expr>>) -> Vec<Scm> {
    let mut out = Vec::new();
    for (v, list) in candidates {
        for e in list.iter().skip(1) {
            let Ok(alt) = scm.with_mechanism(v, e.clone()) else {
                continue;
            };
            if crate::scm::validate(&alt, &record.disclosure).is_valid() && score_scm(record, &alt).train_exact {
                out.push(alt);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests;
