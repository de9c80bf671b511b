//! Candidate-instance construction: training and held-out worlds, filters,
//! survivor reduction and targeted disambiguation.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::GeneratorConfig;
use super::local::{predecessors, scan_alternatives, scored_rows, within_slack, LocalAlt, Scan};
use super::meta::{
    DisambiguationStats, FilterOutcomes, RecordMeta, StratumThresholds, SurvivorStats,
};
use super::sample::{sample_scm, SampledScm};
use super::worldgen::{
    compact_units, heldout_novelty, intervened_counts, make_units, ordinary_units, propose,
    spec_with_mode, target_sets, WorldSpec,
};
use super::{audit, stream, GenError};
use crate::metrics::coverage_stats;
use crate::scm::{CompiledScm, Disclosure};
use crate::worlds::{replay_compiled, Level, Mode, ProblemRecord, World};

/// Working state while a candidate instance is assembled.
pub(crate) struct Draft {
    pub record: ProblemRecord,
    pub compiled: CompiledScm,
    pub stratum: StratumThresholds,
}

impl Draft {
    pub fn simulate(&self, spec: &WorldSpec, id: String) -> World {
        spec.simulate(id, &self.record.gold, &self.compiled, &self.record.units)
    }

    pub fn next_train_id(&self) -> String {
        format!("train_{:02}", self.record.train.len())
    }

    /// Whether a proposed training world keeps per-variable intervention
    /// counts within bounds and stays clear of held-out target sets.
    pub fn admissible(&self, spec: &WorldSpec) -> bool {
        let targets: Vec<String> = spec.iv.targets().into_iter().collect();
        if !targets.is_empty()
            && self
                .record
                .heldout
                .iter()
                .any(|w| w.intervention.signature().0 == targets)
        {
            return false;
        }
        let counts = intervened_counts(&self.record.gold, &self.record.train);
        targets
            .iter()
            .all(|t| counts.get(t).map_or(true, |c| c + 1 <= self.stratum.max_intervened_per_variable))
    }
}

fn kills(alts: &[LocalAlt], w: &World) -> usize {
    alts.iter().filter(|a| !a.consistent_with(w)).count()
}

fn initial_training(cfg: &GeneratorConfig, draft: &mut Draft, rng: &mut ChaCha8Rng) -> Result<(), GenError> {
    let gold = draft.record.gold.clone();
    let mut modes = vec![Mode::None];
    modes.extend(std::iter::repeat(Mode::HardConstant).take(draft.stratum.constant_worlds));
    modes.extend(std::iter::repeat(Mode::HardAssigned).take(draft.stratum.assigned_worlds));
    while modes.len() < cfg.train_worlds {
        modes.push(*[Mode::None, Mode::HardConstant, Mode::HardAssigned].choose(rng).expect("modes"));
    }
    modes.truncate(cfg.train_worlds);
    for mode in modes {
        let mut placed = false;
        for _ in 0..200 {
            let units = ordinary_units(cfg, rng);
            let spec = spec_with_mode(cfg, &gold, units, mode, rng);
            if draft.admissible(&spec) {
                let id = draft.next_train_id();
                let w = draft.simulate(&spec, id);
                draft.record.train.push(w);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(GenError::rejected("intervention coverage", "no admissible training world"));
        }
    }
    Ok(())
}

/// Held-out worlds: constant or assigned, signatures disjoint from training
/// and from each other; some reuse a training target set under the other
/// mode so that novelty lands inside the stratum bounds.
fn heldout_worlds(cfg: &GeneratorConfig, draft: &mut Draft, rng: &mut ChaCha8Rng) -> Result<(), GenError> {
    let n = cfg.heldout_worlds;
    let (lo, hi) = (draft.stratum.novelty_low, draft.stratum.novelty_high);
    let feasible: Vec<usize> = (0..=n)
        .filter(|novel| {
            let f = *novel as f64 / n.max(1) as f64;
            f >= lo - 1e-12 && f <= hi + 1e-12
        })
        .collect();
    let Some(&novel) = feasible.choose(rng) else {
        return Err(GenError::Config("novelty bounds admit no held-out split".into()));
    };
    let gold = draft.record.gold.clone();
    let train_sets = target_sets(&draft.record.train);
    let mut used: BTreeSet<(Vec<String>, Mode)> = draft
        .record
        .train
        .iter()
        .map(|w| w.intervention.signature())
        .collect();
    let mut familiar: Vec<(Vec<String>, Mode)> = Vec::new();
    for t in &train_sets {
        for mode in [Mode::HardConstant, Mode::HardAssigned] {
            if !used.contains(&(t.clone(), mode)) {
                familiar.push((t.clone(), mode));
            }
        }
    }
    familiar.shuffle(rng);
    let want_familiar = n - novel;
    if familiar.len() < want_familiar {
        return Err(GenError::rejected("held-out balance", "too few reusable training target sets"));
    }
    let mut out = Vec::new();
    for (targets, mode) in familiar.into_iter().take(want_familiar) {
        let units = ordinary_units(cfg, rng);
        let mut spec = spec_with_mode(cfg, &gold, units, mode, rng);
        spec.iv = super::worldgen::intervention(mode, &targets, spec.units.len(), cfg, rng);
        used.insert((targets, mode));
        out.push(spec);
    }
    let mut tries = 0;
    while out.len() < n {
        tries += 1;
        if tries > 2000 {
            return Err(GenError::rejected("held-out balance", "no novel held-out signature"));
        }
        let mode = *[Mode::HardConstant, Mode::HardAssigned].choose(rng).expect("modes");
        let units = ordinary_units(cfg, rng);
        let spec = spec_with_mode(cfg, &gold, units, mode, rng);
        let sig = spec.iv.signature();
        if train_sets.contains(&sig.0) || used.contains(&sig) {
            continue;
        }
        used.insert(sig);
        out.push(spec);
    }
    out.shuffle(rng);
    for (i, spec) in out.iter().enumerate() {
        let w = draft.simulate(spec, format!("heldout_{i:02}"));
        draft.record.heldout.push(w);
    }
    Ok(())
}

/// Scored exposure, intervention coverage, held-out balance and local
/// support of the current draft.
pub fn check_filters(
    record: &ProblemRecord,
    stratum: &StratumThresholds,
    cfg: &GeneratorConfig,
) -> Result<FilterOutcomes, GenError> {
    let gold = &record.gold;
    let mut min_cells = usize::MAX;
    for v in gold.endogenous() {
        let worlds: Vec<&World> = record
            .train
            .iter()
            .filter(|w| !w.intervention.targets().contains(v))
            .collect();
        let cells: usize = worlds.iter().map(|w| w.rows.len()).sum();
        if worlds.len() < stratum.scored_worlds || cells < stratum.scored_cells {
            return Err(GenError::rejected(
                "scored exposure",
                format!("{v}: {} scored worlds, {cells} cells", worlds.len()),
            ));
        }
        min_cells = min_cells.min(cells);
    }
    let count = |m: Mode| record.train.iter().filter(|w| w.intervention.mode() == m).count();
    let assigned = count(Mode::HardAssigned);
    let constant = count(Mode::HardConstant);
    let max_iv = intervened_counts(gold, &record.train).into_values().max().unwrap_or(0);
    if assigned < stratum.assigned_worlds
        || constant < stratum.constant_worlds
        || max_iv > stratum.max_intervened_per_variable
    {
        return Err(GenError::rejected(
            "intervention coverage",
            format!("{assigned} assigned, {constant} constant, max {max_iv} per variable"),
        ));
    }
    let novelty = heldout_novelty(&record.train, &record.heldout);
    if novelty < stratum.novelty_low - 1e-12 || novelty > stratum.novelty_high + 1e-12 {
        return Err(GenError::rejected("held-out balance", format!("novelty {novelty:.3}")));
    }
    let train_sigs: BTreeSet<_> = record.train.iter().map(|w| w.intervention.signature()).collect();
    if record.heldout.iter().any(|w| train_sigs.contains(&w.intervention.signature())) {
        return Err(GenError::Internal("held-out signature reused in training".into()));
    }
    let cov = coverage_stats(record);
    let min_support = cov.per_variable.values().map(|f| f.value()).fold(1.0, f64::min);
    if min_support < cfg.min_local_support {
        return Err(GenError::rejected("local support", format!("minimum coverage {min_support:.3}")));
    }
    Ok(FilterOutcomes {
        scored_cells: min_cells,
        assigned_worlds: assigned,
        constant_worlds: constant,
        max_intervened_per_variable: max_iv,
        heldout_novelty: novelty,
        min_local_support: min_support,
    })
}

/// Shortcut formulas over admissible predecessor subsets that fit all
/// current training rows of some variable.
pub fn shortcut_survivors(record: &ProblemRecord, cfg: &GeneratorConfig) -> Vec<LocalAlt> {
    let gold = &record.gold;
    let floor = record.meta.stratum.shortcut_floor;
    let max_parents = cfg.shortcut_max_parents.min(record.meta.max_predecessors);
    let mut out = Vec::new();
    for v in gold.endogenous() {
        let rows = scored_rows(&record.train, v);
        let pool = predecessors(&record.latent_order, v);
        let scan = Scan {
            max_parents,
            min_size: floor,
            cap: cfg.shortcut_cap,
            states_per_size: cfg.disambiguation.states_per_size,
            deadline: None,
        };
        scan_alternatives(gold, v, &rows, &pool, scan, |_| true, |a| {
            out.push(a);
            true
        });
    }
    out
}

fn reduce_survivors(cfg: &GeneratorConfig, draft: &mut Draft, rng: &mut ChaCha8Rng) -> Result<SurvivorStats, GenError> {
    let mut alive = shortcut_survivors(&draft.record, cfg);
    let initial = alive.len();
    let threshold = draft.stratum.kill_fraction;
    let mut stats = SurvivorStats {
        initial_pool: initial,
        remaining: initial,
        kill_fraction: 1.0,
        threshold,
        ..SurvivorStats::default()
    };
    if initial == 0 {
        return Ok(stats);
    }
    let needed = (threshold * initial as f64 - 1e-9).ceil() as usize;
    let iterations = rng.gen_range(cfg.min_iterations..=cfg.max_iterations);
    let total = rng.gen_range(cfg.min_candidate_worlds..=cfg.max_candidate_worlds);
    let per_iteration = total.div_ceil(iterations);
    let gold = draft.record.gold.clone();
    for _ in 0..iterations {
        if initial - alive.len() >= needed || draft.record.train.len() >= cfg.max_train_worlds {
            break;
        }
        stats.iterations += 1;
        let mut best: Option<(usize, World)> = None;
        for _ in 0..per_iteration {
            let units = ordinary_units(cfg, rng);
            let spec = propose(cfg, &gold, units, rng);
            stats.candidates_proposed += 1;
            if !draft.admissible(&spec) {
                continue;
            }
            let w = draft.simulate(&spec, draft.next_train_id());
            let k = kills(&alive, &w);
            if k > best.as_ref().map_or(0, |b| b.0) {
                best = Some((k, w));
            }
        }
        if let Some((_, w)) = best {
            alive.retain(|a| a.consistent_with(&w));
            draft.record.meta.added_worlds.push(w.id.clone());
            draft.record.train.push(w);
            stats.worlds_added += 1;
        }
    }
    stats.remaining = alive.len();
    stats.kill_fraction = (initial - alive.len()) as f64 / initial as f64;
    if initial - alive.len() < needed {
        return Err(GenError::rejected(
            "survivor reduction",
            format!("killed {} of {initial}, needed {needed}", initial - alive.len()),
        ));
    }
    Ok(stats)
}

/// Per-variable local alternatives within the disambiguation budget.
pub fn local_alternatives(
    record: &ProblemRecord,
    budget: &super::config::SearchBudget,
    limit: usize,
) -> (Vec<LocalAlt>, bool) {
    let gold = &record.gold;
    let mut all = Vec::new();
    let mut timed_out = false;
    for v in gold.endogenous() {
        let rows = scored_rows(&record.train, v);
        let pool = predecessors(&record.latent_order, v);
        let scan = Scan {
            max_parents: record.meta.max_predecessors,
            min_size: 1,
            cap: budget.cap,
            states_per_size: budget.states_per_size,
            deadline: Some(Instant::now() + Duration::from_secs_f64(budget.seconds)),
        };
        let mut found = Vec::new();
        let out = scan_alternatives(gold, v, &rows, &pool, scan, |_| true, |a| {
            found.push(a);
            true
        });
        timed_out |= out.timed_out;
        all.extend(within_slack(found, budget.slack, limit));
    }
    (all, timed_out)
}

fn disambiguate(cfg: &GeneratorConfig, draft: &mut Draft, rng: &mut ChaCha8Rng) -> DisambiguationStats {
    let (mut alive, timed_out) = local_alternatives(&draft.record, &cfg.disambiguation, cfg.disambiguation_candidates);
    let mut stats = DisambiguationStats {
        alternatives: alive.len(),
        timed_out,
        ..DisambiguationStats::default()
    };
    let gold = draft.record.gold.clone();
    let pool = draft.record.units.len();
    while stats.worlds_added < cfg.disambiguation_max_worlds
        && draft.record.train.len() < cfg.max_train_worlds
        && !alive.is_empty()
    {
        let mut best: Option<(usize, World)> = None;
        for _ in 0..cfg.disambiguation_candidates {
            let units = compact_units(cfg, pool, rng);
            let spec = propose(cfg, &gold, units, rng);
            if !draft.admissible(&spec) {
                continue;
            }
            let w = draft.simulate(&spec, draft.next_train_id());
            let k = kills(&alive, &w);
            if k > best.as_ref().map_or(0, |b| b.0) {
                best = Some((k, w));
            }
        }
        match best {
            Some((k, w)) if k >= cfg.disambiguation_min_kills => {
                alive.retain(|a| a.consistent_with(&w));
                stats.ruled_out += k;
                stats.worlds_added += 1;
                draft.record.meta.added_worlds.push(w.id.clone());
                draft.record.train.push(w);
            }
            _ => break,
        }
    }
    stats
}

fn gold_self_replay(draft: &Draft) -> Result<(), GenError> {
    let observed = draft.record.observed();
    for w in draft.record.train.iter().chain(&draft.record.heldout) {
        if !replay_compiled(observed, &draft.compiled, w).exact() {
            return Err(GenError::Internal(format!("gold does not replay {}", w.id)));
        }
    }
    Ok(())
}

pub fn problem_id(index: u64) -> String {
    format!("p{index:04}")
}

/// One construction attempt; rejection stages surface as errors.
pub fn try_build(cfg: &GeneratorConfig, master: u64, index: u64, attempt: u32) -> Result<ProblemRecord, GenError> {
    let mut rng = stream(master, index, attempt, 0);
    let SampledScm {
        scm,
        latent_order,
        max_predecessors,
    } = sample_scm(cfg, &mut rng)?;
    let stratum = cfg.strata.choose(&mut rng).expect("strata").clone();
    let probe_size = if rng.gen_bool(cfg.large_probe_rate) {
        cfg.probe_size + 1
    } else {
        cfg.probe_size
    };
    let units = make_units(scm.roots(), 0, cfg.units, &mut rng);
    let compiled = scm.compile();
    let meta = RecordMeta {
        master_seed: master,
        index,
        attempt,
        stratum: stratum.clone(),
        max_predecessors,
        probe_size,
        ..RecordMeta::default()
    };
    let record = ProblemRecord {
        id: problem_id(index),
        level: Level::Core,
        gold: scm,
        latent_order,
        disclosure: Disclosure::HiddenOrder,
        units,
        train: Vec::new(),
        heldout: Vec::new(),
        meta,
    };
    let mut draft = Draft {
        record,
        compiled,
        stratum,
    };
    initial_training(cfg, &mut draft, &mut rng)?;
    heldout_worlds(cfg, &mut draft, &mut rng)?;
    check_filters(&draft.record, &draft.stratum, cfg)?;
    draft.record.meta.survivors = reduce_survivors(cfg, &mut draft, &mut rng)?;
    draft.record.meta.disambiguation = disambiguate(cfg, &mut draft, &mut rng);
    draft.record.meta.filters = check_filters(&draft.record, &draft.stratum, cfg)?;
    gold_self_replay(&draft)?;
    let mut record = draft.record;
    if cfg.run_audits {
        let local = audit::audit_local(&record, cfg);
        let pairs = audit::audit_pairs(&record, cfg);
        record.meta.nondeterministic = local.timed_out || pairs.timed_out || record.meta.disambiguation.timed_out;
        record.meta.audits = vec![local, pairs];
    } else {
        record.meta.nondeterministic = record.meta.disambiguation.timed_out;
    }
    Ok(record)
}

/// Retries with fresh attempt streams until a candidate is accepted.
pub fn build_problem(cfg: &GeneratorConfig, master: u64, index: u64) -> Result<ProblemRecord, GenError> {
    cfg.check().map_err(GenError::Config)?;
    let mut last = None;
    for attempt in 0..cfg.max_attempts {
        match try_build(cfg, master, index, attempt) {
            Ok(r) => return Ok(r),
            Err(e @ (GenError::Config(_) | GenError::Internal(_))) => return Err(e),
            Err(e) => last = Some(e),
        }
    }
    Err(GenError::BudgetExhausted(format!(
        "problem {index}: no accepted candidate in {} attempts (last: {})",
        cfg.max_attempts,
        last.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// Problems `0..count` in index order, built in parallel.
pub fn generate_pool(cfg: &GeneratorConfig, master: u64, count: usize) -> Result<Vec<ProblemRecord>, GenError> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| build_problem(cfg, master, i))
        .collect()
}
