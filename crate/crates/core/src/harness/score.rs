//! Scoring of stored submissions into run results.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::submission::Submission;
use crate::generator::{run_witness, AltTask, Separator};
use crate::metrics::{score_submission, structure_metrics, ReplayReport, StructureReport};
use crate::scm::{Scm, Setting, ValidityReport};
use crate::worlds::ProblemRecord;

/// Flags of an alternative-SCM answer.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AltFlags {
    pub alt_valid: bool,
    pub alt_train_exact: bool,
    pub distinct: bool,
    pub experiment_valid: bool,
    pub witness_valid: bool,
    pub separates: bool,
    pub joint: bool,
    /// Witness rows with at least one differing cell.
    pub pair_disagreement_rate: f64,
    /// Differing cells over all observed cells, both models under the
    /// submitted experiment.
    pub cell_difference_rate: f64,
    /// Differing cells over all observed cells, the reference run without
    /// the experiment against the answer under it.
    pub cell_difference_rate_vs_unintervened: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub task: String,
    /// Latent problem id shared by all variants.
    pub id: String,
    pub setting: String,
    pub level: String,
    pub system: String,
    pub strict: bool,
    pub extracted: bool,
    pub replay: ReplayReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<StructureReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_exact: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alt: Option<AltFlags>,
}

pub const ALT_SETTING: &str = "alternative_scm";

fn replay_for(record: &ProblemRecord, sub: &Submission, roots: Option<&[String]>) -> (ReplayReport, Option<Scm>) {
    if let Some(err) = &sub.schema_error {
        return (ReplayReport::invalid(record, ValidityReport::failed(None, err.clone())), None);
    }
    score_submission(record, roots, &sub.answer.mechanisms)
}

fn base(record: &ProblemRecord, sub: &Submission, replay: ReplayReport) -> RunResult {
    RunResult {
        task: sub.task.clone(),
        id: record.id.clone(),
        setting: record.setting().name().to_owned(),
        level: record.level.name().to_owned(),
        system: sub.system.clone(),
        strict: sub.strict,
        extracted: sub.schema_error.is_none(),
        replay,
        structure: None,
        root_exact: None,
        alt: None,
    }
}

/// Scores an induction submission under its record's disclosure.
pub fn score_record(record: &ProblemRecord, sub: &Submission) -> RunResult {
    if record.setting() == Setting::HiddenRoots {
        return score_hidden_roots(record, sub);
    }
    let (replay, scm) = replay_for(record, sub, None);
    let structure = scm.and_then(|m| structure_metrics(&record.gold, &m).ok());
    RunResult {
        structure,
        ..base(record, sub, replay)
    }
}

/// Replay under the predicted partition; structure metrics only when the
/// predicted root set is exact.
pub fn score_hidden_roots(record: &ProblemRecord, sub: &Submission) -> RunResult {
    let Some(roots) = sub.answer.roots.clone() else {
        let replay = ReplayReport::invalid(record, ValidityReport::failed(None, "missing `roots`"));
        return RunResult {
            root_exact: Some(false),
            ..base(record, sub, replay)
        };
    };
    let (replay, scm) = replay_for(record, sub, Some(&roots));
    let predicted: BTreeSet<&String> = roots.iter().collect();
    let gold: BTreeSet<&String> = record.gold.roots().iter().collect();
    let root_exact = predicted == gold && predicted.len() == roots.len();
    let structure = scm
        .filter(|_| root_exact)
        .and_then(|m| structure_metrics(&record.gold, &m).ok());
    RunResult {
        structure,
        root_exact: Some(root_exact),
        ..base(record, sub, replay)
    }
}

const HARD_MODES: [&str; 3] = ["hard_do", "hard_constant", "do"];

/// Reference and answer rows on the witness under the experiment, and the
/// reference row without it.
fn witness_rows(reference: &Scm, answer: &Scm, sep: &Separator) -> (u64, u64, u64) {
    let mut bits = 0u64;
    for (k, v) in &sep.witness {
        if *v {
            bits |= 1 << reference.index_of(k).expect("observed");
        }
    }
    let natural = reference.compile().run(bits, 0);
    (run_witness(reference, sep), run_witness(answer, sep), natural)
}

/// Scores an alternative-SCM answer against the task's reference.
pub fn score_alt(task: &AltTask, sub: &Submission) -> RunResult {
    let record = &task.record;
    let (replay, scm) = replay_for(record, sub, None);
    let mut flags = AltFlags {
        alt_valid: replay.is_valid(),
        alt_train_exact: replay.train_exact,
        ..AltFlags::default()
    };
    let observed = record.observed();
    let roots = record.gold.roots();
    if let Some(m) = &scm {
        flags.distinct = m.signature() != task.reference.signature();
    }
    let experiment = sub.answer.experiment.as_ref().filter(|e| {
        HARD_MODES.contains(&e.mode.as_str())
            && e.targets.len() == 1
            && e.targets.keys().all(|t| observed.contains(t))
    });
    flags.experiment_valid = experiment.is_some();
    let witness = sub.answer.witness.as_ref().filter(|w| {
        let keys: BTreeSet<&String> = w.keys().collect();
        keys == roots.iter().collect::<BTreeSet<_>>()
    });
    flags.witness_valid = witness.is_some();
    if let (Some(m), Some(e), Some(w)) = (&scm, experiment, witness) {
        let (target, value) = e.targets.iter().next().expect("one target");
        let sep = Separator {
            target: target.clone(),
            value: *value == 1,
            witness: w.iter().map(|(k, v)| (k.clone(), *v == 1)).collect(),
        };
        let (r, a, natural) = witness_rows(&task.reference, m, &sep);
        let ti = task.reference.index_of(target).expect("observed");
        let scored = !(1u64 << ti);
        flags.separates = (r ^ a) & scored != 0;
        let n = observed.len() as f64;
        flags.pair_disagreement_rate = if flags.separates { 1.0 } else { 0.0 };
        flags.cell_difference_rate = ((r ^ a) & scored).count_ones() as f64 / n;
        flags.cell_difference_rate_vs_unintervened = (natural ^ a).count_ones() as f64 / n;
    }
    flags.joint = flags.alt_valid
        && flags.alt_train_exact
        && flags.distinct
        && flags.experiment_valid
        && flags.witness_valid
        && flags.separates;
    RunResult {
        setting: ALT_SETTING.to_owned(),
        alt: Some(flags),
        ..base(record, sub, replay)
    }
}
