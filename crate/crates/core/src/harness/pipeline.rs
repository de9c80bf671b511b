//! File-level stages: generate, derive, solve, score and report.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::io::{self, FormatError};
use super::report::{report, Report};
use super::score::{score_alt, score_record, RunResult};
use super::submission::{Answer, Experiment, Submission};
use crate::generator::{
    build_alt_task, build_cex, derive_variants, find_single_separator, generate_pool, select_extra_worlds, surviving,
    AltTask, CexStats, GenError, GeneratorConfig,
};
use crate::metrics::coverage_with;
use crate::scm::{Scm, Setting};
use crate::solvers::hybrid::{hybrid_desk_stages, hybrid_stages, HybridStage};
use crate::solvers::{answer_for, desk_stages, hybrid_solve, symbolic_exact_search, symbolic_stages, SolveOutcome, StageBudget};
use crate::worlds::ProblemRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Symbolic,
    Hybrid,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Symbolic, Method::Hybrid];

    pub fn name(self) -> &'static str {
        match self {
            Method::Symbolic => "symbolic",
            Method::Hybrid => "hybrid",
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Method, String> {
        match s {
            "symbolic" => Ok(Method::Symbolic),
            "hybrid" => Ok(Method::Hybrid),
            _ => Err(format!("unknown method `{s}` (expected symbolic or hybrid)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Budgets {
    pub symbolic: Vec<StageBudget>,
    pub hybrid: Vec<HybridStage>,
}

impl Budgets {
    pub fn full() -> Budgets {
        Budgets {
            symbolic: symbolic_stages(),
            hybrid: hybrid_stages(),
        }
    }

    /// The first two stages of each solver.
    pub fn desk() -> Budgets {
        Budgets {
            symbolic: desk_stages(),
            hybrid: hybrid_desk_stages(),
        }
    }
}

impl Default for Budgets {
    fn default() -> Budgets {
        Budgets::desk()
    }
}

pub fn solve_record(record: &ProblemRecord, method: Method, budgets: &Budgets) -> SolveOutcome {
    match method {
        Method::Symbolic => symbolic_exact_search(record, &budgets.symbolic),
        Method::Hybrid => hybrid_solve(record, &budgets.hybrid),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub master_seed: u64,
    pub count: usize,
    pub ids: Vec<String>,
    pub config: GeneratorConfig,
}

pub fn generate(cfg: &GeneratorConfig, seed: u64, count: usize) -> Result<(Vec<ProblemRecord>, Manifest), GenError> {
    let records = generate_pool(cfg, seed, count)?;
    let manifest = Manifest {
        format: io::FORMAT.to_owned(),
        version: io::VERSION,
        master_seed: seed,
        count,
        ids: records.iter().map(|r| r.id.clone()).collect(),
        config: cfg.clone(),
    };
    Ok((records, manifest))
}

/// Coverage and alternative counts along the core, extra-worlds and
/// counterexample levels of one problem under one disclosure.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LadderStats {
    pub id: String,
    pub setting: String,
    pub added_worlds: usize,
    pub coverage_core: f64,
    pub coverage_extra: f64,
    pub coverage_cex: f64,
    pub pool: usize,
    pub surviving_extra: usize,
    pub surviving_cex: usize,
    pub cex: CexStats,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub records: Vec<ProblemRecord>,
    pub alt_tasks: Vec<AltTask>,
    pub ladder: Vec<LadderStats>,
}

/// Disclosures that get the extra-worlds and counterexample levels.
pub const LADDER_SETTINGS: [Setting; 2] = [Setting::Ordered, Setting::HiddenOrder];

/// Train-exact SCMs from both solvers, tagged with their source.
pub fn solver_pool(record: &ProblemRecord, budgets: &Budgets) -> Vec<(Scm, String)> {
    let mut out = Vec::new();
    for method in Method::ALL {
        let outcome = solve_record(record, method, budgets);
        if let Some(m) = outcome.scm {
            out.push((m, method.name().to_owned()));
        }
        for m in outcome.alternates {
            out.push((m, format!("{}_alternate", method.name())));
        }
    }
    out
}

fn variant(variants: &[ProblemRecord], s: Setting) -> &ProblemRecord {
    variants.iter().find(|r| r.setting() == s).expect("every setting derived")
}

/// Variants at every level, the ladder statistics and the alternative-SCM
/// tasks for one core problem.
pub fn derive_one(core: &ProblemRecord, cfg: &GeneratorConfig, budgets: &Budgets) -> Derived {
    let mut out = Derived::default();
    let core_variants = derive_variants(core);
    let extra = select_extra_worlds(core, cfg);
    let extra_variants = derive_variants(&extra);
    for s in LADDER_SETTINGS {
        let base = variant(&core_variants, s);
        let ext = variant(&extra_variants, s).clone();
        let tagged = solver_pool(&ext, budgets);
        let pool: Vec<Scm> = tagged.into_iter().map(|(m, _)| m).collect();
        let (cex, stats) = build_cex(&ext, &pool, cfg);
        out.ladder.push(LadderStats {
            id: core.id.clone(),
            setting: s.name().to_owned(),
            added_worlds: ext.train.len() - base.train.len(),
            coverage_core: coverage_with(base, &base.train).mean,
            coverage_extra: coverage_with(&ext, &ext.train).mean,
            coverage_cex: coverage_with(&cex, &cex.train).mean,
            pool: stats.pool,
            surviving_extra: surviving(&ext, &pool).len(),
            surviving_cex: surviving(&cex, &pool).len(),
            cex: stats,
        });
        out.records.push(ext);
        out.records.push(cex);
    }
    let hidden = variant(&core_variants, Setting::HiddenOrder);
    out.alt_tasks = build_alt_task(hidden, &solver_pool(hidden, budgets));
    let mut records = core_variants;
    records.append(&mut out.records);
    out.records = records;
    out
}

pub fn derive(core: &[ProblemRecord], cfg: &GeneratorConfig, budgets: &Budgets) -> Derived {
    let parts: Vec<Derived> = core.par_iter().map(|r| derive_one(r, cfg, budgets)).collect();
    let mut out = Derived::default();
    for mut p in parts {
        out.records.append(&mut p.records);
        out.alt_tasks.append(&mut p.alt_tasks);
        out.ladder.append(&mut p.ladder);
    }
    out
}

/// Solves an alternative-SCM task: the first solver SCM or alternate that
/// differs from the reference, with the first separating experiment.
pub fn solve_alt(task: &AltTask, method: Method, budgets: &Budgets) -> Submission {
    let outcome = solve_record(&task.record, method, budgets);
    let reference_sig = task.reference.signature();
    let found = outcome
        .scm
        .iter()
        .chain(&outcome.alternates)
        .filter(|m| m.signature() != reference_sig)
        .find_map(|m| find_single_separator(&task.reference, m).map(|sep| (m, sep)));
    let failed = found.is_none();
    let answer = match found {
        Some((m, sep)) => Answer {
            experiment: Some(Experiment {
                mode: "hard_do".to_owned(),
                targets: BTreeMap::from([(sep.target.clone(), sep.value as u8)]),
            }),
            witness: Some(sep.witness.iter().map(|(k, v)| (k.clone(), *v as u8)).collect()),
            ..answer_for(&task.record, m)
        },
        None => outcome.submission.answer.clone(),
    };
    Submission {
        task: task.id.clone(),
        system: method.name().to_owned(),
        answer,
        strict: true,
        failed,
        schema_error: None,
    }
}

/// Submissions for every record, then every task, in input order.
pub fn solve_all(records: &[ProblemRecord], tasks: &[AltTask], method: Method, budgets: &Budgets) -> Vec<Submission> {
    let mut subs: Vec<Submission> = records
        .par_iter()
        .map(|r| solve_record(r, method, budgets).submission)
        .collect();
    subs.extend(tasks.par_iter().map(|t| solve_alt(t, method, budgets)).collect::<Vec<_>>());
    subs
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("submission for unknown task `{0}`")]
    UnknownTask(String),
    #[error("duplicate submission for `{task}` from `{system}`")]
    Duplicate { task: String, system: String },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Generate(#[from] GenError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

impl PipelineError {
    /// Bad inputs are validation failures; everything else is internal.
    pub fn is_validation(&self) -> bool {
        !matches!(self, PipelineError::Io { .. } | PipelineError::Generate(GenError::Internal(_)))
    }
}

/// Scores submissions against records and tasks, keyed by task id.
pub fn score_all(records: &[ProblemRecord], tasks: &[AltTask], subs: &[Submission]) -> Result<Vec<RunResult>, PipelineError> {
    let by_key: BTreeMap<String, &ProblemRecord> = records.iter().map(|r| (r.key(), r)).collect();
    let by_task: BTreeMap<&str, &AltTask> = tasks.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut seen = BTreeSet::new();
    for s in subs {
        if !by_key.contains_key(&s.task) && !by_task.contains_key(s.task.as_str()) {
            return Err(PipelineError::UnknownTask(s.task.clone()));
        }
        if !seen.insert((s.task.as_str(), s.system.as_str())) {
            return Err(PipelineError::Duplicate {
                task: s.task.clone(),
                system: s.system.clone(),
            });
        }
    }
    Ok(subs
        .par_iter()
        .map(|s| match by_task.get(s.task.as_str()) {
            Some(t) => score_alt(t, s),
            None => score_record(by_key[&s.task], s),
        })
        .collect())
}

pub const RECORDS: &str = "records.jsonl";
pub const MANIFEST: &str = "manifest.json";
pub const VARIANTS: &str = "variants.jsonl";
pub const ALT_TASKS: &str = "alt_tasks.jsonl";
pub const LADDER: &str = "ladder.jsonl";
pub const SUBMISSIONS: &str = "submissions.jsonl";
pub const RESULTS: &str = "results.jsonl";
pub const REPORT: &str = "report.csv";
pub const DELTAS: &str = "deltas.csv";

pub fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    let io = |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, text).map_err(io)
}

pub fn write_manifest(path: &Path, m: &Manifest) -> Result<(), PipelineError> {
    write_text(path, &(serde_json::to_string_pretty(m).expect("serializable") + "\n"))
}

pub fn write_report(dir: &Path, r: &Report) -> Result<(), PipelineError> {
    write_text(&dir.join(REPORT), &r.rows_csv())?;
    write_text(&dir.join(DELTAS), &r.deltas_csv())
}

/// Runs every stage into `dir` with both solvers.
pub fn run_pipeline(
    dir: &Path,
    cfg: &GeneratorConfig,
    seed: u64,
    count: usize,
    budgets: &Budgets,
    resamples: usize,
) -> Result<Report, PipelineError> {
    let (core, manifest) = generate(cfg, seed, count)?;
    io::save_records(&dir.join(RECORDS), &core)?;
    write_manifest(&dir.join(MANIFEST), &manifest)?;
    let derived = derive(&core, cfg, budgets);
    io::save_records(&dir.join(VARIANTS), &derived.records)?;
    io::write_jsonl(&dir.join(ALT_TASKS), io::ALT_TASK, &derived.alt_tasks)?;
    io::write_jsonl(&dir.join(LADDER), io::LADDER, &derived.ladder)?;
    let mut subs = Vec::new();
    for method in Method::ALL {
        subs.extend(solve_all(&derived.records, &derived.alt_tasks, method, budgets));
    }
    io::write_jsonl(&dir.join(SUBMISSIONS), io::SUBMISSION, &subs)?;
    let results = score_all(&derived.records, &derived.alt_tasks, &subs)?;
    io::write_jsonl(&dir.join(RESULTS), io::RESULT, &results)?;
    let rep = report(&results, resamples, seed);
    write_report(dir, &rep)?;
    Ok(rep)
}
