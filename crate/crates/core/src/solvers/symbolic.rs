//! Staged symbolic exact search over parent sets and formulas.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use itertools::Itertools;

use super::{finish, Fitter, SolveOutcome, StageBudget};
use crate::dsl::Expr;
use crate::scm::{Disclosure, Scm};
use crate::worlds::ProblemRecord;

pub type Fitted = (BTreeMap<String, Expr>, BTreeMap<String, Vec<Expr>>);

/// Places endogenous variables one at a time: at each step the variable
/// with the smallest fit from already placed, admissible variables goes
/// next. Pools only grow, so a variable fittable now stays fittable.
pub fn greedy_placement(
    fitter: &mut Fitter,
    roots: &[String],
    endo: &[String],
    admits: &dyn Fn(&str, &str) -> bool,
) -> Option<Fitted> {
    let mut placed: Vec<String> = roots.to_vec();
    let mut remaining: BTreeSet<String> = endo.iter().cloned().collect();
    let mut mechs = BTreeMap::new();
    let mut cands = BTreeMap::new();
    while !remaining.is_empty() {
        let mut best: Option<(usize, String, Vec<Expr>)> = None;
        for v in &remaining {
            let pool: Vec<String> = placed.iter().filter(|u| admits(u, v)).cloned().collect();
            let fit = fitter.fit(v, &pool);
            if fitter.expired() {
                return None;
            }
            if let Some(e) = fit.best() {
                if best.as_ref().map_or(true, |b| e.size() < b.0) {
                    best = Some((e.size(), v.clone(), fit.exprs.clone()));
                }
            }
        }
        let (_, v, exprs) = best?;
        remaining.remove(&v);
        placed.push(v.clone());
        mechs.insert(v.clone(), exprs[0].clone());
        cands.insert(v, exprs);
    }
    Some((mechs, cands))
}

fn ordered(fitter: &mut Fitter, record: &ProblemRecord, order: &[String]) -> Option<Fitted> {
    let mut mechs = BTreeMap::new();
    let mut cands = BTreeMap::new();
    for v in record.gold.endogenous() {
        let pos = order.iter().position(|o| o == v)?;
        let fit = fitter.fit(v, &order[..pos]);
        let e = fit.best()?.clone();
        mechs.insert(v.clone(), e);
        cands.insert(v.clone(), fit.exprs);
    }
    Some((mechs, cands))
}

/// Tries root-set hypotheses by size, each a superset of the variables
/// that no other variables can explain, until `place` succeeds.
pub(crate) fn search_roots(
    fitter: &mut Fitter,
    record: &ProblemRecord,
    place: &mut dyn FnMut(&mut Fitter, &[String], &[String]) -> Option<Fitted>,
) -> Option<(Vec<String>, Fitted)> {
    let observed = record.observed().to_vec();
    let mut must = Vec::new();
    for v in &observed {
        let others: Vec<String> = observed.iter().filter(|u| *u != v).cloned().collect();
        if fitter.fit(v, &others).best().is_none() {
            must.push(v.clone());
        }
        if fitter.expired() {
            return None;
        }
    }
    let free: Vec<String> = observed.iter().filter(|v| !must.contains(v)).cloned().collect();
    for extra in 0..free.len() {
        if must.len() + extra == observed.len() {
            break;
        }
        for add in free.iter().cloned().combinations(extra) {
            let mut roots = must.clone();
            roots.extend(add);
            roots.sort();
            let endo: Vec<String> = observed.iter().filter(|v| !roots.contains(v)).cloned().collect();
            if let Some(fitted) = place(fitter, &roots, &endo) {
                return Some((roots, fitted));
            }
            if fitter.expired() {
                return None;
            }
        }
    }
    None
}

fn hidden_roots(fitter: &mut Fitter, record: &ProblemRecord) -> Option<(Vec<String>, Fitted)> {
    search_roots(fitter, record, &mut |f, roots, endo| greedy_placement(f, roots, endo, &|_, _| true))
}

/// One stage of the search; `None` when nothing train-consistent was found.
pub fn solve_stage(fitter: &mut Fitter, record: &ProblemRecord) -> Option<(Scm, BTreeMap<String, Vec<Expr>>)> {
    let roots = record.gold.roots().to_vec();
    let endo = record.gold.endogenous().to_vec();
    let (roots, (mechs, cands)) = match &record.disclosure {
        Disclosure::Ordered { order } => (roots, ordered(fitter, record, order)?),
        Disclosure::BlockOrder { .. } => {
            let d = record.disclosure.clone();
            let fitted = greedy_placement(fitter, &roots, &endo, &|u, v| d.admits(u, v))?;
            (roots, fitted)
        }
        Disclosure::HiddenOrder => {
            let fitted = greedy_placement(fitter, &roots, &endo, &|_, _| true)?;
            (roots, fitted)
        }
        Disclosure::HiddenRoots => hidden_roots(fitter, record)?,
    };
    let scm = Scm::new(record.observed().to_vec(), roots, mechs).ok()?;
    Some((scm, cands))
}

/// First train-exact SCM found by the staged ordering, else a failure
/// object.
pub fn symbolic_exact_search(record: &ProblemRecord, stages: &[StageBudget]) -> SolveOutcome {
    let mut timed_out = false;
    for (i, stage) in stages.iter().enumerate() {
        let deadline = Instant::now() + Duration::from_secs_f64(stage.seconds);
        let mut fitter = Fitter::new(record, stage.clone(), Some(deadline));
        let found = solve_stage(&mut fitter, record);
        timed_out |= fitter.timed_out;
        if let Some((scm, cands)) = found {
            let out = finish(record, "symbolic", Some((scm, i)), &cands, timed_out);
            if out.scm.is_some() {
                return out;
            }
        }
    }
    finish(record, "symbolic", None, &BTreeMap::new(), timed_out)
}
