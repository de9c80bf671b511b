//! Score-based DAG search over training rows: BDeu family scores, hill
//! climbing followed by tabu moves, and a bootstrap arc-support ensemble.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::worlds::ProblemRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Equivalent sample size of the BDeu prior.
    pub ess: f64,
    pub max_parents: usize,
    pub iterations: usize,
    pub tabu_length: usize,
    /// Non-improving tabu steps before giving up.
    pub patience: usize,
    /// Bootstrap replicates for arc support; zero disables the ensemble.
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> SearchConfig {
        SearchConfig {
            ess: 1.0,
            max_parents: 5,
            iterations: 500,
            tabu_length: 10,
            patience: 20,
            bootstrap: 96,
            seed: 0,
        }
    }
}

/// One training row: observed bits and the intervened-variable mask of its
/// world.
#[derive(Clone, Copy, Debug)]
pub struct Sample {
    pub bits: u64,
    pub clamped: u64,
}

pub fn samples(record: &ProblemRecord) -> Vec<Sample> {
    let observed = record.observed();
    record
        .train
        .iter()
        .flat_map(|w| {
            let clamped = w.intervention.mask(observed);
            w.rows.iter().map(move |r| Sample { bits: r.bits, clamped })
        })
        .collect()
}

/// BDeu score of `v` given the parent mask, over rows where `v` is free.
pub fn family_score(data: &[Sample], v: usize, parents: u64, ess: f64) -> f64 {
    let q = (1u64 << parents.count_ones()) as f64;
    let mut counts: HashMap<u64, [f64; 2]> = HashMap::new();
    for s in data.iter().filter(|s| s.clamped >> v & 1 == 0) {
        let key = pext(s.bits, parents);
        counts.entry(key).or_default()[(s.bits >> v & 1) as usize] += 1.0;
    }
    let a_j = ess / q;
    let a_jk = ess / (2.0 * q);
    counts
        .values()
        .map(|c| {
            ln_gamma(a_j) - ln_gamma(a_j + c[0] + c[1]) + c.iter().map(|&n| ln_gamma(a_jk + n) - ln_gamma(a_jk)).sum::<f64>()
        })
        .sum()
}

fn pext(bits: u64, mask: u64) -> u64 {
    let mut out = 0;
    let mut k = 0;
    let mut m = mask;
    while m != 0 {
        let i = m.trailing_zeros();
        out |= (bits >> i & 1) << k;
        k += 1;
        m &= m - 1;
    }
    out
}

/// Parent masks indexed by observed position.
pub type Dag = Vec<u64>;

fn reaches(dag: &Dag, from: usize, to: usize) -> bool {
    // walks parent links backwards from `to`
    let mut seen = 0u64;
    let mut stack = vec![to];
    while let Some(x) = stack.pop() {
        if x == from {
            return true;
        }
        let mut ps = dag[x] & !seen;
        seen |= dag[x];
        while ps != 0 {
            let p = ps.trailing_zeros() as usize;
            stack.push(p);
            ps &= ps - 1;
        }
    }
    false
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Move {
    Add(usize, usize),
    Delete(usize, usize),
    Reverse(usize, usize),
}

struct Search<'a> {
    data: &'a [Sample],
    n: usize,
    allowed: Vec<u64>,
    cfg: &'a SearchConfig,
    cache: HashMap<(usize, u64), f64>,
}

impl Search<'_> {
    fn score(&mut self, v: usize, parents: u64) -> f64 {
        if let Some(&s) = self.cache.get(&(v, parents)) {
            return s;
        }
        let s = family_score(self.data, v, parents, self.cfg.ess);
        self.cache.insert((v, parents), s);
        s
    }

    fn fits(&self, dag: &Dag, u: usize, v: usize) -> bool {
        self.allowed[v] >> u & 1 == 1 && (dag[v].count_ones() as usize) < self.cfg.max_parents
    }

    /// Legal moves with their score deltas, in a fixed order.
    fn moves(&mut self, dag: &Dag) -> Vec<(Move, f64)> {
        let mut out = Vec::new();
        for v in 0..self.n {
            for u in 0..self.n {
                if u == v {
                    continue;
                }
                let present = dag[v] >> u & 1 == 1;
                let base_v = self.score(v, dag[v]);
                if !present {
                    if self.fits(dag, u, v) && !reaches(dag, v, u) {
                        let d = self.score(v, dag[v] | 1 << u) - base_v;
                        out.push((Move::Add(u, v), d));
                    }
                    continue;
                }
                let d = self.score(v, dag[v] & !(1 << u)) - base_v;
                out.push((Move::Delete(u, v), d));
                if self.fits(dag, v, u) {
                    let mut next = dag.clone();
                    next[v] &= !(1 << u);
                    if !reaches(&next, u, v) {
                        let base_u = self.score(u, dag[u]);
                        let d = d + self.score(u, dag[u] | 1 << v) - base_u;
                        out.push((Move::Reverse(u, v), d));
                    }
                }
            }
        }
        out
    }

    fn total(&mut self, dag: &Dag) -> f64 {
        (0..self.n).map(|v| self.score(v, dag[v])).sum()
    }

    fn run(&mut self) -> Dag {
        let mut dag: Dag = vec![0; self.n];
        let mut iterations = 0;
        // hill climbing to a local optimum
        while iterations < self.cfg.iterations {
            let best = self
                .moves(&dag)
                .into_iter()
                .filter(|(_, d)| *d > 1e-9)
                .max_by(|a, b| a.1.total_cmp(&b.1));
            let Some((m, _)) = best else { break };
            apply(&mut dag, m);
            iterations += 1;
        }
        let mut best_dag = dag.clone();
        let mut best_score = self.total(&dag);
        let mut tabu: Vec<(usize, usize)> = Vec::new();
        let mut stale = 0;
        while iterations < self.cfg.iterations && stale < self.cfg.patience {
            let pick = self
                .moves(&dag)
                .into_iter()
                .filter(|(m, _)| !tabu.contains(&edge(*m)))
                .max_by(|a, b| a.1.total_cmp(&b.1));
            let Some((m, _)) = pick else { break };
            apply(&mut dag, m);
            iterations += 1;
            tabu.push(edge(m));
            if tabu.len() > self.cfg.tabu_length {
                tabu.remove(0);
            }
            let s = self.total(&dag);
            if s > best_score + 1e-9 {
                best_score = s;
                best_dag = dag.clone();
                stale = 0;
            } else {
                stale += 1;
            }
        }
        best_dag
    }
}

fn edge(m: Move) -> (usize, usize) {
    match m {
        Move::Add(u, v) | Move::Delete(u, v) | Move::Reverse(u, v) => (u.min(v), u.max(v)),
    }
}

fn apply(dag: &mut Dag, m: Move) {
    match m {
        Move::Add(u, v) => dag[v] |= 1 << u,
        Move::Delete(u, v) => dag[v] &= !(1 << u),
        Move::Reverse(u, v) => {
            dag[v] &= !(1 << u);
            dag[u] |= 1 << v;
        }
    }
}

/// Parents each variable may take under the disclosure; roots of a
/// disclosed partition take none.
pub fn allowed_parents(record: &ProblemRecord) -> Vec<u64> {
    let observed = record.observed();
    let d = &record.disclosure;
    observed
        .iter()
        .map(|v| {
            if d.reveals_partition() && record.gold.is_root(v) {
                return 0;
            }
            observed
                .iter()
                .enumerate()
                .filter(|(_, u)| d.admits(u, v))
                .fold(0u64, |m, (i, _)| m | 1 << i)
        })
        .collect()
}

/// Learned parent sets plus bootstrap arc support.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Proposal {
    pub parents: BTreeMap<String, Vec<String>>,
    /// Fraction of replicates containing `u -> v`, keyed by `(u, v)`.
    pub support: BTreeMap<(String, String), f64>,
}

impl Proposal {
    /// Variables ranked by support for an adjacency with `v`, either
    /// direction, strongest first, ties by name.
    pub fn ranked_neighbours(&self, v: &str) -> Vec<(String, f64)> {
        let mut acc: BTreeMap<String, f64> = BTreeMap::new();
        for ((a, b), s) in &self.support {
            if b == v {
                *acc.entry(a.clone()).or_default() += s;
            } else if a == v {
                *acc.entry(b.clone()).or_default() += s;
            }
        }
        let mut out: Vec<(String, f64)> = acc.into_iter().collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out
    }
}

pub fn search_dag(data: &[Sample], allowed: &[u64], cfg: &SearchConfig) -> Dag {
    Search {
        data,
        n: allowed.len(),
        allowed: allowed.to_vec(),
        cfg,
        cache: HashMap::new(),
    }
    .run()
}

/// Learned parent sets under the disclosure constraints.
pub fn learned_parents(record: &ProblemRecord, cfg: &SearchConfig) -> BTreeMap<String, Vec<String>> {
    let observed = record.observed();
    let dag = search_dag(&samples(record), &allowed_parents(record), cfg);
    observed
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let ps = (0..observed.len())
                .filter(|u| dag[i] >> u & 1 == 1)
                .map(|u| observed[u].clone())
                .collect();
            (v.clone(), ps)
        })
        .collect()
}

/// Fraction of bootstrap replicates (rows resampled with replacement)
/// whose learned DAG contains each arc.
pub fn arc_support(record: &ProblemRecord, cfg: &SearchConfig) -> BTreeMap<(String, String), f64> {
    let observed = record.observed();
    let n = observed.len();
    let data = samples(record);
    let allowed = allowed_parents(record);
    let mut support = BTreeMap::new();
    if cfg.bootstrap == 0 || data.is_empty() {
        return support;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut counts = vec![0usize; n * n];
    for _ in 0..cfg.bootstrap {
        let resample: Vec<Sample> = (0..data.len()).map(|_| data[rng.gen_range(0..data.len())]).collect();
        let d = search_dag(&resample, &allowed, cfg);
        for v in 0..n {
            for u in 0..n {
                if d[v] >> u & 1 == 1 {
                    counts[u * n + v] += 1;
                }
            }
        }
    }
    for (i, &c) in counts.iter().enumerate() {
        if c > 0 {
            support.insert(
                (observed[i / n].clone(), observed[i % n].clone()),
                c as f64 / cfg.bootstrap as f64,
            );
        }
    }
    support
}

/// Learned DAG over the training rows, with arc support when enabled.
pub fn structure_search(record: &ProblemRecord, cfg: &SearchConfig) -> Proposal {
    Proposal {
        parents: learned_parents(record, cfg),
        support: arc_support(record, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_data() -> Vec<Sample> {
        // R -> A = not R -> B = A, observational rows only
        let mut out = Vec::new();
        for i in 0..40u64 {
            let r = i % 2;
            let a = 1 - r;
            let b = a;
            out.push(Sample {
                bits: r | a << 1 | b << 2,
                clamped: 0,
            });
        }
        // clamp A to break the R - B coupling through A
        for i in 0..40u64 {
            let r = i % 2;
            let a = (i / 2) % 2;
            out.push(Sample {
                bits: r | a << 1 | a << 2,
                clamped: 1 << 1,
            });
        }
        out
    }

    #[test]
    fn bdeu_prefers_true_parent() {
        let data = chain_data();
        let none = family_score(&data, 2, 0, 1.0);
        let with_a = family_score(&data, 2, 1 << 1, 1.0);
        let with_r = family_score(&data, 2, 1, 1.0);
        assert!(with_a > none);
        assert!(with_a > with_r);
    }

    #[test]
    fn pext_packs_selected_bits() {
        assert_eq!(pext(0b1010, 0b1110), 0b101);
        assert_eq!(pext(0b1, 0), 0);
    }

    #[test]
    fn cycle_check() {
        let dag: Dag = vec![0, 1, 2];
        assert!(reaches(&dag, 0, 2));
        assert!(!reaches(&dag, 2, 0));
    }

    #[test]
    fn parent_cap_respected() {
        let mut data = Vec::new();
        for i in 0..64u64 {
            let x = i & 0b11111;
            let y = (x.count_ones() % 2) as u64;
            data.push(Sample {
                bits: x | y << 5 | y << 6,
                clamped: 0,
            });
        }
        let cfg = SearchConfig {
            max_parents: 2,
            bootstrap: 0,
            ..SearchConfig::default()
        };
        let dag = search_dag(&data, &[0x7f; 7], &cfg);
        assert!(dag.iter().all(|m| m.count_ones() <= 2));
    }
}
