//! Replay scores, parent-structure diagnostics, aggregate cells with
//! suppression, the paired bootstrap, and predecessor-pattern coverage.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scm::{validate_text, Scm, ValidityReport};
use crate::worlds::{replay_compiled, ProblemRecord, World};

/// Count-valued fraction; `den == 0` means undefined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Frac {
    pub num: u64,
    pub den: u64,
}

impl Frac {
    pub fn new(num: u64, den: u64) -> Frac {
        Frac { num, den }
    }

    pub fn value(&self) -> f64 {
        if self.den == 0 {
            0.0
        } else {
            self.num as f64 / self.den as f64
        }
    }

    pub fn exact(&self) -> Option<BigRational> {
        (self.den != 0).then(|| BigRational::new(BigInt::from(self.num), BigInt::from(self.den)))
    }

    pub fn is_one(&self) -> bool {
        self.den != 0 && self.num == self.den
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub validity: ValidityReport,
    pub train_worlds: Vec<bool>,
    pub heldout_worlds: Vec<bool>,
    pub train_exact: bool,
    pub heldout_exact: bool,
    pub train_world_exact: Frac,
    pub heldout_world_exact: Frac,
    pub train_cells: Frac,
    pub heldout_cells: Frac,
}

impl ReplayReport {
    /// Zeroed report for a submission that failed the funnel.
    pub fn invalid(record: &ProblemRecord, validity: ValidityReport) -> ReplayReport {
        let nt = record.train.len() as u64;
        let nh = record.heldout.len() as u64;
        ReplayReport {
            validity,
            train_worlds: vec![false; record.train.len()],
            heldout_worlds: vec![false; record.heldout.len()],
            train_exact: false,
            heldout_exact: false,
            train_world_exact: Frac::new(0, nt),
            heldout_world_exact: Frac::new(0, nh),
            train_cells: Frac::new(0, 0),
            heldout_cells: Frac::new(0, 0),
        }
    }

    /// Held-out world exactness relative to training world exactness.
    /// `None` when the training rate is zero.
    pub fn retention(&self) -> Option<BigRational> {
        let t = self.train_world_exact.exact()?;
        let h = self.heldout_world_exact.exact()?;
        (!t.is_zero()).then(|| h / t)
    }

    pub fn is_valid(&self) -> bool {
        self.validity.is_valid()
    }
}

fn split_scores(observed: &[String], scm: &Scm, worlds: &[World]) -> (Vec<bool>, Frac) {
    let compiled = scm.compile();
    let mut flags = Vec::with_capacity(worlds.len());
    let mut cells = Frac::default();
    for w in worlds {
        let r = replay_compiled(observed, &compiled, w);
        flags.push(r.exact());
        cells.num += r.matched_cells() as u64;
        cells.den += r.scored_cells() as u64;
    }
    (flags, cells)
}

/// Replay scores for a valid candidate sharing the record's indexing.
pub fn score_scm(record: &ProblemRecord, candidate: &Scm) -> ReplayReport {
    let observed = record.observed();
    let (train_worlds, train_cells) = split_scores(observed, candidate, &record.train);
    let (heldout_worlds, heldout_cells) = split_scores(observed, candidate, &record.heldout);
    let count = |v: &[bool]| v.iter().filter(|b| **b).count() as u64;
    let train_exact = train_worlds.iter().all(|b| *b);
    let heldout_exact = train_exact && heldout_worlds.iter().all(|b| *b);
    ReplayReport {
        validity: ValidityReport::valid(),
        train_world_exact: Frac::new(count(&train_worlds), train_worlds.len() as u64),
        heldout_world_exact: Frac::new(count(&heldout_worlds), heldout_worlds.len() as u64),
        train_worlds,
        heldout_worlds,
        train_exact,
        heldout_exact,
        train_cells,
        heldout_cells,
    }
}

/// Full evaluator path for raw submitted text. `roots` is the predicted
/// root set under hidden roots, or `None` to use the disclosed partition.
pub fn score_submission(
    record: &ProblemRecord,
    roots: Option<&[String]>,
    mechanisms: &BTreeMap<String, String>,
) -> (ReplayReport, Option<Scm>) {
    let roots = roots.unwrap_or(record.gold.roots());
    let (validity, scm) = validate_text(record.observed(), roots, &record.disclosure, mechanisms);
    match scm {
        Some(scm) => (score_scm(record, &scm), Some(scm)),
        None => (ReplayReport::invalid(record, validity), None),
    }
}

/// Checks the per-report sanity inequalities.
pub fn check_sanity(r: &ReplayReport) -> Result<(), String> {
    let twe = r.train_world_exact.exact().unwrap_or_else(BigRational::zero);
    let te = if r.train_exact { 1 } else { 0 };
    let he = if r.heldout_exact { 1 } else { 0 };
    if BigRational::from_integer(te.into()) > twe && r.train_world_exact.den > 0 {
        return Err("TrainExact exceeds TrainWorldExact".into());
    }
    if he > te {
        return Err("HeldoutExact exceeds TrainExact".into());
    }
    if !r.is_valid() && (r.train_exact || r.train_world_exact.num > 0 || r.heldout_world_exact.num > 0) {
        return Err("invalid submission with nonzero replay".into());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("candidate root set differs from gold; structure metrics are conditioned on exact roots")]
pub struct PartitionMismatch;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub shd: usize,
    pub per_variable_exact: BTreeMap<String, bool>,
    pub exact_parent_map: bool,
    pub mean_local_match: f64,
    pub full_local_match: bool,
    pub true_positive: usize,
    pub gold_edges: usize,
    pub candidate_edges: usize,
}

/// Structural Hamming distance where each unordered pair whose edge state
/// differs costs 1, so a reversal costs 1 rather than 2.
pub fn shd(gold: &BTreeSet<(String, String)>, cand: &BTreeSet<(String, String)>) -> usize {
    let mut pairs: BTreeSet<(String, String)> = BTreeSet::new();
    for (u, v) in gold.iter().chain(cand.iter()) {
        let key = if u < v { (u.clone(), v.clone()) } else { (v.clone(), u.clone()) };
        pairs.insert(key);
    }
    pairs
        .iter()
        .filter(|(a, b)| {
            let state = |g: &BTreeSet<(String, String)>| {
                (
                    g.contains(&(a.clone(), b.clone())),
                    g.contains(&(b.clone(), a.clone())),
                )
            };
            state(gold) != state(cand)
        })
        .count()
}

pub fn structure_metrics(gold: &Scm, cand: &Scm) -> Result<StructureReport, PartitionMismatch> {
    let gr: BTreeSet<&String> = gold.roots().iter().collect();
    let cr: BTreeSet<&String> = cand.roots().iter().collect();
    if gr != cr {
        return Err(PartitionMismatch);
    }
    let ge = gold.functional_parent_graph().edges;
    let ce = cand.functional_parent_graph().edges;
    let tp = ge.intersection(&ce).count();
    let precision = if ce.is_empty() {
        if ge.is_empty() { 1.0 } else { 0.0 }
    } else {
        tp as f64 / ce.len() as f64
    };
    let recall = if ge.is_empty() { 1.0 } else { tp as f64 / ge.len() as f64 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let mut per_variable_exact = BTreeMap::new();
    let mut matches = 0usize;
    for v in gold.endogenous() {
        per_variable_exact.insert(v.clone(), gold.parents_of(v) == cand.parents_of(v));
        let same = match (gold.mechanism(v), cand.mechanism(v)) {
            (Some(a), Some(b)) => a.signature() == b.signature(),
            _ => false,
        };
        matches += same as usize;
    }
    let n = gold.endogenous().len();
    let mean_local_match = if n == 0 { 1.0 } else { matches as f64 / n as f64 };
    Ok(StructureReport {
        precision,
        recall,
        f1,
        shd: shd(&ge, &ce),
        exact_parent_map: per_variable_exact.values().all(|b| *b),
        per_variable_exact,
        mean_local_match,
        full_local_match: matches == n,
        true_positive: tp,
        gold_edges: ge.len(),
        candidate_edges: ce.len(),
    })
}

/// A conditional or unconditional rate shown under the suppression rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateCell {
    pub num: u64,
    pub den: u64,
}

pub const SUPPRESS_MAX: u64 = 5;

impl AggregateCell {
    pub fn display(&self) -> String {
        match self.den {
            0 => "–".to_owned(),
            d if d <= SUPPRESS_MAX => "*".to_owned(),
            _ => format_ratio(self.num, self.den, 3),
        }
    }

    pub fn rate(&self) -> Option<BigRational> {
        Frac::new(self.num, self.den).exact()
    }
}

/// Rate of `b` among pairs where `a` holds.
pub fn conditional_rate(events: &[(bool, bool)]) -> AggregateCell {
    let den = events.iter().filter(|(a, _)| *a).count() as u64;
    let num = events.iter().filter(|(a, b)| *a && *b).count() as u64;
    AggregateCell { num, den }
}

/// Half-up decimal rendering of `num / den`.
pub fn format_ratio(num: u64, den: u64, decimals: u32) -> String {
    let r = BigRational::new(BigInt::from(num), BigInt::from(den));
    format_rational(&r, decimals)
}

pub fn format_rational(r: &BigRational, decimals: u32) -> String {
    let scale = BigInt::from(10u32).pow(decimals);
    let neg = r < &BigRational::zero();
    let abs = if neg { -r.clone() } else { r.clone() };
    let scaled = abs * BigRational::from_integer(scale.clone());
    let half = BigRational::new(BigInt::from(1), BigInt::from(2));
    let rounded = (scaled + half).floor().to_integer();
    let int = &rounded / &scale;
    let frac = &rounded % &scale;
    let sign = if neg && !rounded.is_zero() { "-" } else { "" };
    if decimals == 0 {
        format!("{sign}{int}")
    } else {
        format!(
            "{sign}{int}.{:0>width$}",
            frac.to_string(),
            width = decimals as usize
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BootstrapError {
    #[error("no paired values to resample")]
    EmptyInput,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub mean_delta: f64,
    pub lo: f64,
    pub hi: f64,
    pub resamples: usize,
}

/// Nearest-rank quantile of sorted values.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Percentile interval for the mean of `a - b`, resampling pair indices
/// with replacement.
pub fn bootstrap_paired(
    values: &[(f64, f64)],
    resamples: usize,
    seed: u64,
) -> Result<BootstrapResult, BootstrapError> {
    if values.is_empty() {
        return Err(BootstrapError::EmptyInput);
    }
    let n = values.len();
    let deltas: Vec<f64> = values.iter().map(|(a, b)| a - b).collect();
    let mean_delta = deltas.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples.max(1))
        .map(|_| (0..n).map(|_| deltas[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    Ok(BootstrapResult {
        mean_delta,
        lo: nearest_rank(&means, 0.025),
        hi: nearest_rank(&means, 0.975),
        resamples: means.len(),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub per_variable: BTreeMap<String, Frac>,
    pub mean: f64,
    pub full: bool,
}

/// Gold effective parents of `v`, capped at `probe_size` keeping those
/// earliest in the latent order.
pub fn probe_subset(record: &ProblemRecord, v: &str) -> Vec<String> {
    let parents = record.gold.parents_of(v);
    let mut ordered: Vec<String> = record
        .latent_order
        .iter()
        .filter(|x| parents.contains(*x))
        .cloned()
        .collect();
    ordered.truncate(record.meta.probe_size.max(1));
    ordered
}

pub fn coverage_of(record: &ProblemRecord, train: &[World], v: &str) -> Frac {
    let probe = probe_subset(record, v);
    let observed = record.observed();
    let idx: Vec<usize> = probe
        .iter()
        .map(|p| observed.iter().position(|o| o == p).expect("observed"))
        .collect();
    let mut seen = BTreeSet::new();
    for w in train {
        if w.intervention.targets().contains(v) {
            continue;
        }
        for row in &w.rows {
            let key: u64 = idx
                .iter()
                .enumerate()
                .fold(0, |k, (j, &i)| k | (row.get(i) as u64) << j);
            seen.insert(key);
        }
    }
    Frac::new(seen.len() as u64, 1u64 << probe.len())
}

pub fn coverage_with(record: &ProblemRecord, train: &[World]) -> Coverage {
    let per_variable: BTreeMap<String, Frac> = record
        .gold
        .endogenous()
        .iter()
        .map(|v| (v.clone(), coverage_of(record, train, v)))
        .collect();
    let total = per_variable
        .values()
        .fold(BigRational::zero(), |acc, f| acc + f.exact().unwrap_or_else(BigRational::zero));
    let n = per_variable.len().max(1);
    let mean = (total / BigRational::from_integer(BigInt::from(n)))
        .to_f64()
        .unwrap_or(0.0);
    let full = per_variable.values().all(Frac::is_one);
    Coverage {
        per_variable,
        mean,
        full,
    }
}

pub fn coverage_stats(record: &ProblemRecord) -> Coverage {
    coverage_with(record, &record.train)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edges(xs: &[(&str, &str)]) -> BTreeSet<(String, String)> {
        xs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn suppression_and_rounding() {
        assert_eq!(AggregateCell { num: 0, den: 0 }.display(), "–");
        assert_eq!(AggregateCell { num: 2, den: 3 }.display(), "*");
        assert_eq!(AggregateCell { num: 3, den: 6 }.display(), "0.500");
        assert_eq!(conditional_rate(&[(true, true); 9].iter().chain(&[(true, false); 3]).copied().collect::<Vec<_>>()).display(), "0.750");
        assert_eq!(format_ratio(1, 8, 2), "0.13");
        assert_eq!(format_ratio(2, 3, 3), "0.667");
        assert_eq!(format_ratio(1, 2000, 3), "0.001");
        assert_eq!(format_ratio(7, 7, 3), "1.000");
    }

    #[test]
    fn shd_counts_reversal_once() {
        assert_eq!(shd(&edges(&[("U", "V")]), &edges(&[("V", "U")])), 1);
        assert_eq!(shd(&edges(&[("U", "V"), ("A", "V")]), &edges(&[("U", "V")])), 1);
        assert_eq!(shd(&edges(&[]), &edges(&[("A", "B"), ("B", "C")])), 2);
    }

    #[test]
    fn bootstrap_trivial_cases() {
        let same = bootstrap_paired(&[(0.5, 0.5); 10], 200, 1).unwrap();
        assert_eq!((same.mean_delta, same.lo, same.hi), (0.0, 0.0, 0.0));
        let ones = bootstrap_paired(&[(1.0, 0.0); 10], 200, 1).unwrap();
        assert_eq!((ones.mean_delta, ones.lo, ones.hi), (1.0, 1.0, 1.0));
        assert_eq!(bootstrap_paired(&[], 10, 1), Err(BootstrapError::EmptyInput));
    }

    #[test]
    fn nearest_rank_quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(nearest_rank(&v, 0.025), 1.0);
        assert_eq!(nearest_rank(&v, 0.5), 2.0);
        assert_eq!(nearest_rank(&v, 0.975), 4.0);
    }
}
