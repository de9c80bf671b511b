//! Structure proposals from the DAG search, fitted exactly per variable.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::structure::{arc_support, learned_parents, Proposal, SearchConfig};
use super::symbolic::{greedy_placement, search_roots, Fitted};
use super::{finish, Fitter, SolveOutcome, StageBudget};
use crate::scm::{Scm, Setting};
use crate::worlds::ProblemRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridStage {
    pub search: SearchConfig,
    pub fit: StageBudget,
    /// Minimum adjacency support for a fallback parent.
    pub min_support: f64,
}

fn stage(max_parents: usize, iterations: usize, cap: usize, seconds: f64) -> HybridStage {
    HybridStage {
        search: SearchConfig {
            max_parents,
            iterations,
            ..SearchConfig::default()
        },
        fit: StageBudget {
            cap,
            slack: if cap > 10 { 3 } else { 2 },
            max_candidates: 32,
            states_per_size: 50_000,
            seconds,
            max_parents,
        },
        min_support: 0.1,
    }
}

/// Full stages: 5 parents and 500 iterations, then 6 parents with 2000 and
/// 4500 iterations; fitter caps 10, 12 and 13.
pub fn hybrid_stages() -> Vec<HybridStage> {
    vec![
        stage(5, 500, 10, 2.0),
        stage(6, 2000, 12, 20.0),
        stage(6, 4500, 13, 600.0),
    ]
}

pub fn hybrid_desk_stages() -> Vec<HybridStage> {
    hybrid_stages().into_iter().take(2).collect()
}

/// Root hypothesis: the disclosed roots, else the variables the learned
/// DAG leaves parentless.
fn roots_for(record: &ProblemRecord, parents: &BTreeMap<String, Vec<String>>) -> Vec<String> {
    match record.disclosed_partition() {
        Some((roots, _)) => roots.to_vec(),
        None => parents
            .iter()
            .filter(|(_, ps)| ps.is_empty())
            .map(|(v, _)| v.clone())
            .collect(),
    }
}

fn place(
    fitter: &mut Fitter,
    record: &ProblemRecord,
    roots: &[String],
    endo: &[String],
    pools: &BTreeMap<String, BTreeSet<String>>,
) -> Option<Fitted> {
    let d = &record.disclosure;
    let admits = |u: &str, v: &str| d.admits(u, v) && pools.get(v).is_some_and(|p| p.contains(u));
    greedy_placement(fitter, roots, endo, &admits)
}

pub(crate) fn attempt(
    fitter: &mut Fitter,
    record: &ProblemRecord,
    roots: &[String],
    pools: &BTreeMap<String, BTreeSet<String>>,
) -> Option<(Scm, BTreeMap<String, Vec<crate::dsl::Expr>>)> {
    let endo: Vec<String> = record
        .observed()
        .iter()
        .filter(|v| !roots.contains(v))
        .cloned()
        .collect();
    if endo.is_empty() {
        return None;
    }
    let (mechs, cands) = place(fitter, record, roots, &endo, pools)?;
    let scm = Scm::new(record.observed().to_vec(), roots.to_vec(), mechs).ok()?;
    Some((scm, cands))
}

/// Hidden roots: root hypotheses over the learned neighbourhoods, edges
/// taken in both directions since a source in the learned DAG need not be a
/// root.
fn hidden_roots_attempt(
    fitter: &mut Fitter,
    record: &ProblemRecord,
    pools: &BTreeMap<String, BTreeSet<String>>,
) -> Option<(Scm, BTreeMap<String, Vec<crate::dsl::Expr>>)> {
    let mut both = pools.clone();
    for (v, ps) in pools {
        for u in ps {
            both.entry(u.clone()).or_default().insert(v.clone());
        }
    }
    let (roots, (mechs, cands)) = search_roots(fitter, record, &mut |f, roots, endo| place(f, record, roots, endo, &both))?;
    let scm = Scm::new(record.observed().to_vec(), roots, mechs).ok()?;
    Some((scm, cands))
}

fn fallback_pools(
    record: &ProblemRecord,
    learned: &BTreeMap<String, Vec<String>>,
    proposal: &Proposal,
    stage: &HybridStage,
) -> BTreeMap<String, BTreeSet<String>> {
    let width = stage.fit.max_parents + 2;
    record
        .observed()
        .iter()
        .map(|v| {
            let mut pool: BTreeSet<String> = learned[v].iter().cloned().collect();
            for (u, s) in proposal.ranked_neighbours(v) {
                if pool.len() >= width || s < stage.min_support {
                    break;
                }
                pool.insert(u);
            }
            (v.clone(), pool)
        })
        .collect()
}

/// Learned parent sets first, then support-ranked neighbourhoods from the
/// bootstrap ensemble; the first stage yielding a valid train-exact SCM
/// wins.
pub fn hybrid_solve(record: &ProblemRecord, stages: &[HybridStage]) -> SolveOutcome {
    let mut timed_out = false;
    for (i, st) in stages.iter().enumerate() {
        let deadline = Instant::now() + Duration::from_secs_f64(st.fit.seconds);
        let mut fitter = Fitter::new(record, st.fit.clone(), Some(deadline));
        let learned = learned_parents(record, &st.search);
        let roots = roots_for(record, &learned);
        let pools: BTreeMap<String, BTreeSet<String>> = learned
            .iter()
            .map(|(v, ps)| (v.clone(), ps.iter().cloned().collect()))
            .collect();
        let mut found = attempt(&mut fitter, record, &roots, &pools);
        if found.is_none() && !fitter.expired() {
            let proposal = Proposal {
                support: arc_support(record, &st.search),
                parents: learned.clone(),
            };
            let wider = fallback_pools(record, &learned, &proposal, st);
            found = attempt(&mut fitter, record, &roots, &wider);
            if found.is_none() && !fitter.expired() && record.setting() == Setting::HiddenRoots {
                found = hidden_roots_attempt(&mut fitter, record, &wider);
            }
        }
        timed_out |= fitter.timed_out;
        if let Some((scm, cands)) = found {
            let out = finish(record, "hybrid", Some((scm, i)), &cands, timed_out);
            if out.scm.is_some() {
                return out;
            }
        }
    }
    finish(record, "hybrid", None, &BTreeMap::new(), timed_out)
}
