//! Disclosure variants, the support-audit ladder (extra worlds and
//! counterexample worlds) and Alternative-SCM tasks.

use std::collections::{BTreeMap, BTreeSet};

use itertools::Itertools;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::GeneratorConfig;
use super::stream;
use super::worldgen::{assigned_vector, make_units, ordinary_units, random_env, unit_id, WorldSpec};
use crate::metrics::{coverage_of, coverage_with, probe_subset};
use crate::scm::{validate, CompiledScm, Disclosure, Scm};
use crate::worlds::{replay_compiled, Intervention, Level, ProblemRecord, Signature, Unit, World};

/// Roots form block 0; endogenous variables follow in consecutive pairs of
/// the latent order, an odd leftover joining the last block.
pub fn blocks(record: &ProblemRecord) -> Vec<Vec<String>> {
    let gold = &record.gold;
    let roots: Vec<String> = record
        .latent_order
        .iter()
        .filter(|v| gold.is_root(v))
        .cloned()
        .collect();
    let endo: Vec<String> = record
        .latent_order
        .iter()
        .filter(|v| !gold.is_root(v))
        .cloned()
        .collect();
    let mut out = vec![roots];
    let mut chunks: Vec<Vec<String>> = endo.chunks(2).map(<[String]>::to_vec).collect();
    if chunks.len() >= 2 && chunks.last().is_some_and(|c| c.len() == 1) {
        let last = chunks.pop().expect("nonempty");
        chunks.last_mut().expect("nonempty").extend(last);
    }
    out.extend(chunks);
    out
}

/// The four disclosure settings over identical worlds.
pub fn derive_variants(record: &ProblemRecord) -> Vec<ProblemRecord> {
    let disclosures = [
        Disclosure::Ordered {
            order: record.latent_order.clone(),
        },
        Disclosure::BlockOrder {
            blocks: blocks(record),
        },
        Disclosure::HiddenOrder,
        Disclosure::HiddenRoots,
    ];
    disclosures
        .into_iter()
        .map(|d| ProblemRecord {
            disclosure: d,
            ..record.clone()
        })
        .collect()
}

fn sim(record: &ProblemRecord, compiled: &CompiledScm, spec: &WorldSpec, id: String) -> World {
    spec.simulate(id, &record.gold, compiled, &record.units)
}

fn next_id(train: &[World]) -> String {
    format!("train_{:02}", train.len())
}

/// Candidate pool for the extra-worlds selector.
fn extra_pool(record: &ProblemRecord, cfg: &GeneratorConfig) -> Vec<WorldSpec> {
    let mut rng = stream(record.meta.master_seed, record.meta.index, record.meta.attempt, 1);
    let gold = &record.gold;
    let heldout = record.heldout_signatures();
    let mut pool = Vec::new();
    for _ in 0..4 {
        let units = ordinary_units(cfg, &mut rng);
        pool.push(WorldSpec {
            units,
            env: random_env(gold.roots(), cfg, &mut rng),
            iv: Intervention::none(),
        });
    }
    for v in gold.observed() {
        for b in [false, true] {
            let units = ordinary_units(cfg, &mut rng);
            pool.push(WorldSpec {
                units,
                env: random_env(gold.roots(), cfg, &mut rng),
                iv: Intervention::constant(BTreeMap::from([(v.clone(), b)])),
            });
        }
        for _ in 0..2 {
            let units = ordinary_units(cfg, &mut rng);
            let bias = cfg.assigned_bias[rng.gen_range(0..cfg.assigned_bias.len())];
            let vals = assigned_vector(units.len(), bias, &mut rng);
            pool.push(WorldSpec {
                units,
                env: random_env(gold.roots(), cfg, &mut rng),
                iv: Intervention::assigned(BTreeMap::from([(v.clone(), vals)])),
            });
        }
    }
    pool.retain(|s| !heldout.contains(&s.iv.signature()));
    pool
}

/// Adds gold-simulated worlds greedily maximizing new predecessor-pattern
/// coverage: the configured minimum, plus one more while mean coverage
/// stays below the configured level.
pub fn select_extra_worlds(record: &ProblemRecord, cfg: &GeneratorConfig) -> ProblemRecord {
    let compiled = record.gold.compile();
    let mut out = record.clone();
    out.level = Level::ExtraWorlds;
    let before = coverage_with(record, &record.train).mean;
    let candidates: Vec<World> = extra_pool(record, cfg)
        .iter()
        .map(|s| sim(record, &compiled, s, String::new()))
        .collect();
    let mut used = vec![false; candidates.len()];
    let mut added = 0;
    while added < cfg.extra_worlds_max && used.iter().any(|u| !u) {
        let mean_now = coverage_with(record, &out.train).mean;
        if added >= cfg.extra_worlds_min && mean_now >= cfg.extra_worlds_fourth_below {
            break;
        }
        let mut best: Option<(f64, usize)> = None;
        for (i, w) in candidates.iter().enumerate() {
            if used[i] {
                continue;
            }
            let mut trial = out.train.clone();
            trial.push(w.clone());
            let gain = coverage_with(record, &trial).mean - mean_now;
            if best.map_or(true, |(g, _)| gain > g + 1e-12) {
                best = Some((gain, i));
            }
        }
        let (_, i) = best.expect("pool nonempty");
        used[i] = true;
        let mut w = candidates[i].clone();
        w.id = next_id(&out.train);
        out.meta.added_worlds.push(w.id.clone());
        out.train.push(w);
        added += 1;
    }
    out.meta.coverage_before = Some(before);
    out.meta.coverage_after = Some(coverage_with(record, &out.train).mean);
    out
}

/// One alternative per semantic signature, excluding gold's.
pub fn dedup_alternatives(gold: &Scm, pool: &[Scm]) -> Vec<Scm> {
    let gold_sig = gold.signature();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for m in pool {
        let sig = (m.roots().to_vec(), m.signature());
        if m.observed() != gold.observed() || m.signature() == gold_sig && m.roots() == gold.roots() {
            continue;
        }
        if seen.insert(format!("{sig:?}")) {
            out.push(m.clone());
        }
    }
    out
}

fn train_exact(observed: &[String], c: &CompiledScm, train: &[World]) -> bool {
    train.iter().all(|w| replay_compiled(observed, c, w).exact())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CexStats {
    pub coverage_worlds: usize,
    pub separator_worlds: usize,
    pub pool: usize,
    pub separated: usize,
    pub unseparable: usize,
}

struct CexBuilder<'a> {
    cfg: &'a GeneratorConfig,
    out: ProblemRecord,
    compiled: CompiledScm,
    heldout: BTreeSet<Signature>,
    pattern_units: Option<Vec<usize>>,
    rng: rand_chacha::ChaCha8Rng,
}

impl CexBuilder<'_> {
    fn fresh_units(&mut self, count: usize) -> Vec<usize> {
        let start = self.out.units.len();
        let units = make_units(self.out.gold.roots(), start, count, &mut self.rng);
        self.out.units.extend(units);
        (start..start + count).collect()
    }

    /// One fresh unit per root pattern; with environment 0.5 a threshold
    /// of 0.25 gives 1 and 0.75 gives 0.
    fn pattern_units(&mut self) -> Vec<usize> {
        if let Some(u) = &self.pattern_units {
            return u.clone();
        }
        let roots = self.out.gold.roots().to_vec();
        let start = self.out.units.len();
        for p in 0..1usize << roots.len() {
            let thresholds = roots
                .iter()
                .enumerate()
                .map(|(j, r)| {
                    let one = p >> (roots.len() - 1 - j) & 1 == 1;
                    (r.clone(), if one { 0.25 } else { 0.75 })
                })
                .collect();
            self.out.units.push(Unit {
                id: unit_id(start + p),
                thresholds,
            });
        }
        let ids: Vec<usize> = (start..self.out.units.len()).collect();
        self.pattern_units = Some(ids.clone());
        ids
    }

    fn half_env(&self) -> BTreeMap<String, f64> {
        self.out.gold.roots().iter().map(|r| (r.clone(), 0.5)).collect()
    }

    fn push(&mut self, spec: &WorldSpec) -> World {
        let id = next_id(&self.out.train);
        let w = spec.simulate(id, &self.out.gold, &self.compiled, &self.out.units);
        self.out.meta.added_worlds.push(w.id.clone());
        self.out.train.push(w.clone());
        w
    }

    /// Assigned world sweeping every probe pattern of `v`.
    fn complete_coverage(&mut self, v: &str) -> bool {
        let probe = probe_subset(&self.out, v);
        let k = probe.len();
        let rows = 1usize << k;
        let mut assigned: BTreeMap<String, Vec<bool>> = probe
            .iter()
            .enumerate()
            .map(|(j, p)| (p.clone(), (0..rows).map(|i| i >> (k - 1 - j) & 1 == 1).collect()))
            .collect();
        let mut iv = Intervention::assigned(assigned.clone());
        if self.heldout.contains(&iv.signature()) {
            let extra = self
                .out
                .observed()
                .iter()
                .filter(|x| *x != v && !assigned.contains_key(*x))
                .find(|x| {
                    let mut a = assigned.clone();
                    a.insert((*x).clone(), vec![false; rows]);
                    !self.heldout.contains(&Intervention::assigned(a).signature())
                })
                .cloned();
            let Some(extra) = extra else {
                return false;
            };
            let vals = assigned_vector(rows, 0.5, &mut self.rng);
            assigned.insert(extra, vals);
            iv = Intervention::assigned(assigned);
        }
        let units = self.fresh_units(rows);
        let env = random_env(self.out.gold.roots(), self.cfg, &mut self.rng);
        self.push(&WorldSpec { units, env, iv });
        true
    }

    fn separates(&self, alt: &(Scm, CompiledScm), spec: &WorldSpec) -> Option<World> {
        if self.heldout.contains(&spec.iv.signature()) {
            return None;
        }
        let w = spec.simulate(String::new(), &self.out.gold, &self.compiled, &self.out.units);
        (!replay_compiled(self.out.observed(), &alt.1, &w).exact()).then_some(w)
    }

    /// Breadth-first: single-variable clamps, then pairs, then clamping all
    /// but one variable.
    fn find_separator(&mut self, alt: &(Scm, CompiledScm)) -> Option<WorldSpec> {
        let units = self.pattern_units();
        let env = self.half_env();
        let observed = self.out.observed().to_vec();
        let constant = |assign: BTreeMap<String, bool>| WorldSpec {
            units: units.clone(),
            env: env.clone(),
            iv: Intervention::constant(assign),
        };
        for t in &observed {
            for b in [false, true] {
                let spec = constant(BTreeMap::from([(t.clone(), b)]));
                if self.separates(alt, &spec).is_some() {
                    return Some(spec);
                }
            }
        }
        for pair in observed.iter().combinations(2) {
            for bits in 0..4u8 {
                let spec = constant(BTreeMap::from([
                    (pair[0].clone(), bits & 2 != 0),
                    (pair[1].clone(), bits & 1 != 0),
                ]));
                if self.separates(alt, &spec).is_some() {
                    return Some(spec);
                }
            }
        }
        for w in alt.0.endogenous() {
            let others: Vec<&String> = observed.iter().filter(|x| *x != w).collect();
            for bits in 0..1u64 << others.len() {
                let assign = others
                    .iter()
                    .enumerate()
                    .map(|(j, x)| ((*x).clone(), bits >> j & 1 == 1))
                    .collect();
                let spec = constant(assign);
                if self.separates(alt, &spec).is_some() {
                    return Some(spec);
                }
            }
        }
        None
    }
}

/// Completes predecessor-pattern coverage, then separates every pool
/// alternative that still fits the training worlds. Alternatives with no
/// separating world are removed from the pool and counted.
pub fn build_cex(record: &ProblemRecord, pool: &[Scm], cfg: &GeneratorConfig) -> (ProblemRecord, CexStats) {
    let mut out = record.clone();
    out.level = Level::Cex;
    let mut b = CexBuilder {
        cfg,
        compiled: record.gold.compile(),
        heldout: record.heldout_signatures(),
        pattern_units: None,
        rng: stream(record.meta.master_seed, record.meta.index, record.meta.attempt, 2),
        out,
    };
    let mut stats = CexStats::default();
    let endo = record.gold.endogenous().to_vec();
    for v in &endo {
        let cov = coverage_of(&b.out, &b.out.train, v);
        if !cov.is_one() && b.complete_coverage(v) {
            stats.coverage_worlds += 1;
        }
    }
    let observed = record.observed().to_vec();
    let alts: Vec<(Scm, CompiledScm)> = dedup_alternatives(&record.gold, pool)
        .into_iter()
        .map(|m| {
            let c = m.compile();
            (m, c)
        })
        .collect();
    stats.pool = alts.len();
    for alt in &alts {
        if !train_exact(&observed, &alt.1, &b.out.train) {
            continue;
        }
        match b.find_separator(alt) {
            Some(spec) => {
                b.push(&spec);
                stats.separator_worlds += 1;
                stats.separated += 1;
            }
            None => stats.unseparable += 1,
        }
    }
    b.out.meta.alternatives_separated = Some(stats.separated);
    b.out.meta.coverage_after = Some(coverage_with(&b.out, &b.out.train).mean);
    (b.out, stats)
}

/// Alternatives in `pool` still consistent with every training world.
pub fn surviving(record: &ProblemRecord, pool: &[Scm]) -> Vec<Scm> {
    dedup_alternatives(&record.gold, pool)
        .into_iter()
        .filter(|m| train_exact(record.observed(), &m.compile(), &record.train))
        .collect()
}

/// A single-variable hard intervention with a root witness on which two
/// SCMs' replays differ.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Separator {
    pub target: String,
    pub value: bool,
    pub witness: BTreeMap<String, bool>,
}

/// Runs `m` from a root assignment under `do(target = value)`.
pub fn run_witness(m: &Scm, sep: &Separator) -> u64 {
    let mut bits = 0u64;
    for (r, b) in &sep.witness {
        if *b {
            if let Some(i) = m.index_of(r) {
                bits |= 1 << i;
            }
        }
    }
    let t = m.index_of(&sep.target).expect("observed target");
    let mask = 1u64 << t;
    bits = (bits & !mask) | (sep.value as u64) << t;
    m.compile().run(bits, mask)
}

/// First separator in (target, value, witness) order, witnesses ranging
/// over the roots of `a`.
pub fn find_single_separator(a: &Scm, b: &Scm) -> Option<Separator> {
    let roots = a.roots().to_vec();
    let (ca, cb) = (a.compile(), b.compile());
    for t in a.observed() {
        let ti = a.index_of(t).expect("observed");
        for value in [false, true] {
            for p in 0..1u64 << roots.len() {
                let witness: BTreeMap<String, bool> = roots
                    .iter()
                    .enumerate()
                    .map(|(j, r)| (r.clone(), p >> (roots.len() - 1 - j) & 1 == 1))
                    .collect();
                let mut bits = 0u64;
                for (r, v) in &witness {
                    if *v {
                        bits |= 1 << a.index_of(r).expect("observed");
                    }
                }
                let mask = 1u64 << ti;
                bits = (bits & !mask) | (value as u64) << ti;
                if ca.run(bits, mask) != cb.run(bits, mask) {
                    return Some(Separator {
                        target: t.clone(),
                        value,
                        witness,
                    });
                }
            }
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AltTask {
    pub id: String,
    pub record: ProblemRecord,
    pub reference: Scm,
    pub separator: Separator,
    pub source: String,
}

/// Tasks whose supplied reference is a valid, train-exact, semantically
/// distinct alternative separable from gold by one hard intervention.
pub fn build_alt_task(record: &ProblemRecord, pool: &[(Scm, String)]) -> Vec<AltTask> {
    let gold_sig = record.gold.signature();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (m, source) in pool {
        if m.observed() != record.observed() || m.roots() != record.gold.roots() {
            continue;
        }
        let sig = m.signature();
        if sig == gold_sig || !seen.insert(format!("{sig:?}")) {
            continue;
        }
        if !validate(m, &record.disclosure).is_valid() {
            continue;
        }
        if !train_exact(record.observed(), &m.compile(), &record.train) {
            continue;
        }
        let Some(separator) = find_single_separator(m, &record.gold) else {
            continue;
        };
        out.push(AltTask {
            id: format!("{}:alt{:02}", record.key(), out.len()),
            record: record.clone(),
            reference: m.clone(),
            separator,
            source: source.clone(),
        });
    }
    out
}
