//! Bounded ambiguity audits run on accepted records. Counts are what the
//! budgets found, never a uniqueness claim.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use super::build::local_alternatives;
use super::config::GeneratorConfig;
use super::local::{scan_alternatives, scored_rows, within_slack, LocalAlt, Scan};
use super::meta::AuditResult;
use crate::scm::topo_sort;
use crate::worlds::ProblemRecord;

/// Local alternatives per endogenous variable over predecessor subsets.
pub fn audit_local(record: &ProblemRecord, cfg: &GeneratorConfig) -> AuditResult {
    let start = Instant::now();
    let mut per_variable: BTreeMap<String, usize> =
        record.gold.endogenous().iter().map(|v| (v.clone(), 0)).collect();
    let (alts, timed_out) = local_alternatives(record, &cfg.local_audit, usize::MAX);
    for a in &alts {
        *per_variable.get_mut(&a.var).expect("endogenous") += 1;
    }
    AuditResult {
        kind: "local".into(),
        per_variable,
        pairs: 0,
        states_capped: false,
        timed_out,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Coordinated pairs along a gold edge `u -> v`: an upstream alternative
/// for `u` that reads `v`, with a downstream alternative for `v` that no
/// longer reads `u`, jointly acyclic and consistent with every training
/// world.
pub fn audit_pairs(record: &ProblemRecord, cfg: &GeneratorConfig) -> AuditResult {
    let start = Instant::now();
    let b = &cfg.pair_audit;
    let deadline = start + Duration::from_secs_f64(b.seconds);
    let gold = &record.gold;
    let observed = gold.observed();
    let max_parents = record.meta.max_predecessors;
    let mut result = AuditResult {
        kind: "pairs".into(),
        ..AuditResult::default()
    };
    let scan = Scan {
        max_parents,
        min_size: 1,
        cap: b.cap,
        states_per_size: b.states_per_size,
        deadline: Some(deadline),
    };
    let collect = |var: &str, pool: Vec<String>, must: Option<&str>, limit: usize, result: &mut AuditResult| {
        let rows = scored_rows(&record.train, var);
        let mut found: Vec<LocalAlt> = Vec::new();
        let out = scan_alternatives(
            gold,
            var,
            &rows,
            &pool,
            scan,
            |s| must.map_or(true, |m| s.iter().any(|x| x == m)),
            |a| {
                found.push(a);
                true
            },
        );
        result.states_capped |= out.states_capped;
        result.timed_out |= out.timed_out;
        within_slack(found, b.slack, limit)
    };
    'edges: for v in gold.endogenous() {
        for u in gold.parents_of(v) {
            if gold.is_root(&u) {
                continue;
            }
            if Instant::now() >= deadline {
                result.timed_out = true;
                break 'edges;
            }
            let pool_u: Vec<String> = observed.iter().filter(|x| **x != u).cloned().collect();
            let ups = collect(&u, pool_u, Some(v), b.upstream_alternatives, &mut result);
            if ups.is_empty() {
                continue;
            }
            let pool_v: Vec<String> = observed
                .iter()
                .filter(|x| **x != *v && **x != u)
                .cloned()
                .collect();
            let downs = collect(v, pool_v, None, usize::MAX, &mut result);
            for ua in &ups {
                for va in &downs {
                    let parents: BTreeMap<String, std::collections::BTreeSet<String>> = gold
                        .endogenous()
                        .iter()
                        .map(|x| {
                            let ps = if *x == u {
                                ua.parents.iter().cloned().collect()
                            } else if x == v {
                                va.parents.iter().cloned().collect()
                            } else {
                                gold.parents_of(x)
                            };
                            (x.clone(), ps)
                        })
                        .collect();
                    if topo_sort(observed, &parents).is_ok() {
                        result.pairs += 1;
                    }
                }
            }
        }
    }
    result.seconds = start.elapsed().as_secs_f64();
    result
}
