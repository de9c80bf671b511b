//! Aggregate tables over run results, with suppressed small denominators
//! and paired-bootstrap deltas between settings on matched ids.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use super::score::{RunResult, ALT_SETTING};
use crate::metrics::{bootstrap_paired, check_sanity, conditional_rate, AggregateCell, BootstrapResult};
use crate::scm::Setting;

fn setting_rank(s: &str) -> usize {
    Setting::ALL
        .iter()
        .position(|x| x.name() == s)
        .unwrap_or(if s == ALT_SETTING { Setting::ALL.len() } else { usize::MAX })
}

/// Mean with its denominator, shown under the same suppression rule as
/// rates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanCell {
    pub sum: f64,
    pub den: u64,
}

impl MeanCell {
    fn of(xs: impl Iterator<Item = f64>) -> MeanCell {
        xs.fold(MeanCell::default(), |m, x| MeanCell {
            sum: m.sum + x,
            den: m.den + 1,
        })
    }

    pub fn display(&self) -> String {
        match (AggregateCell { num: 0, den: self.den }).display().as_str() {
            "–" => "–".into(),
            "*" => "*".into(),
            _ => format!("{:.3}", self.sum / self.den as f64),
        }
    }
}

fn count(results: &[&RunResult], f: impl Fn(&RunResult) -> bool) -> AggregateCell {
    AggregateCell {
        num: results.iter().filter(|r| f(r)).count() as u64,
        den: results.len() as u64,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub setting: String,
    pub level: String,
    pub system: String,
    pub n: usize,
    pub strict_json: AggregateCell,
    pub extracted_json: AggregateCell,
    pub valid: AggregateCell,
    pub train_exact: AggregateCell,
    pub train_world_exact: MeanCell,
    pub heldout_world_exact: MeanCell,
    pub heldout_exact: AggregateCell,
    pub heldout_given_train: AggregateCell,
    pub heldout_world_given_train: MeanCell,
    pub heldout_cells: MeanCell,
    pub parent_f1: MeanCell,
    pub shd: MeanCell,
    pub root_exact: AggregateCell,
    pub train_given_roots: AggregateCell,
    pub heldout_world_given_roots: MeanCell,
    pub alt_joint: AggregateCell,
    pub alt_train_exact: AggregateCell,
    pub experiment_witness: AggregateCell,
}

impl ReportRow {
    fn build(key: &(String, String, String), rs: &[&RunResult]) -> ReportRow {
        let te_events: Vec<(bool, bool)> = rs.iter().map(|r| (r.replay.train_exact, r.replay.heldout_exact)).collect();
        let hidden_roots: Vec<&RunResult> = rs.iter().copied().filter(|r| r.root_exact.is_some()).collect();
        let alts: Vec<&RunResult> = rs.iter().copied().filter(|r| r.alt.is_some()).collect();
        let exact_roots: Vec<&RunResult> = hidden_roots.iter().copied().filter(|r| r.root_exact == Some(true)).collect();
        ReportRow {
            setting: key.0.clone(),
            level: key.1.clone(),
            system: key.2.clone(),
            n: rs.len(),
            strict_json: count(rs, |r| r.strict),
            extracted_json: count(rs, |r| r.extracted),
            valid: count(rs, |r| r.replay.is_valid()),
            train_exact: count(rs, |r| r.replay.train_exact),
            train_world_exact: MeanCell::of(rs.iter().map(|r| r.replay.train_world_exact.value())),
            heldout_world_exact: MeanCell::of(rs.iter().map(|r| r.replay.heldout_world_exact.value())),
            heldout_exact: count(rs, |r| r.replay.heldout_exact),
            heldout_given_train: conditional_rate(&te_events),
            heldout_world_given_train: MeanCell::of(
                rs.iter()
                    .filter(|r| r.replay.train_exact)
                    .map(|r| r.replay.heldout_world_exact.value()),
            ),
            heldout_cells: MeanCell::of(rs.iter().filter(|r| r.replay.is_valid()).map(|r| r.replay.heldout_cells.value())),
            parent_f1: MeanCell::of(rs.iter().filter_map(|r| r.structure.as_ref()).map(|s| s.f1)),
            shd: MeanCell::of(rs.iter().filter_map(|r| r.structure.as_ref()).map(|s| s.shd as f64)),
            root_exact: count(&hidden_roots, |r| r.root_exact == Some(true)),
            train_given_roots: count(&exact_roots, |r| r.replay.train_exact),
            heldout_world_given_roots: MeanCell::of(exact_roots.iter().map(|r| r.replay.heldout_world_exact.value())),
            alt_joint: count(&alts, |r| r.alt.as_ref().is_some_and(|a| a.joint)),
            alt_train_exact: count(&alts, |r| r.alt.as_ref().is_some_and(|a| a.alt_valid && a.alt_train_exact)),
            experiment_witness: count(&alts, |r| {
                r.alt
                    .as_ref()
                    .is_some_and(|a| a.experiment_valid && a.witness_valid && a.separates)
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub level: String,
    pub system: String,
    pub metric: String,
    pub first: String,
    pub second: String,
    pub matched: usize,
    pub result: BootstrapResult,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub deltas: Vec<DeltaRow>,
}

type Metric = (&'static str, fn(&RunResult) -> f64);

const DELTA_METRICS: [Metric; 3] = [
    ("TrainExact", |r| r.replay.train_exact as u8 as f64),
    ("HeldoutWorldExact", |r| r.replay.heldout_world_exact.value()),
    ("HeldoutExact", |r| r.replay.heldout_exact as u8 as f64),
];

type GroupKey = (usize, String, String, String);

/// Groups results by (setting, level, system) in a fixed order, so the
/// output does not depend on input order.
pub fn report(results: &[RunResult], resamples: usize, seed: u64) -> Report {
    let mut groups: BTreeMap<GroupKey, Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        groups
            .entry((setting_rank(&r.setting), r.setting.clone(), r.level.clone(), r.system.clone()))
            .or_default()
            .push(r);
    }
    for rs in groups.values_mut() {
        rs.sort_by(|a, b| a.task.cmp(&b.task));
    }
    let rows = groups
        .iter()
        .map(|((_, setting, level, system), rs)| ReportRow::build(&(setting.clone(), level.clone(), system.clone()), rs))
        .collect();
    let mut deltas = Vec::new();
    let keys: Vec<&GroupKey> = groups.keys().collect();
    for (i, a) in keys.iter().enumerate() {
        for b in &keys[i + 1..] {
            if a.2 != b.2 || a.3 != b.3 || a.1 == b.1 || a.1 == ALT_SETTING || b.1 == ALT_SETTING {
                continue;
            }
            let by_id = |k: &GroupKey| -> BTreeMap<String, &RunResult> {
                groups[k].iter().map(|r| (r.id.clone(), *r)).collect()
            };
            let (ma, mb) = (by_id(a), by_id(b));
            let matched: Vec<(&RunResult, &RunResult)> =
                ma.iter().filter_map(|(id, ra)| mb.get(id).map(|rb| (*ra, *rb))).collect();
            if matched.is_empty() {
                continue;
            }
            for (name, f) in DELTA_METRICS {
                let pairs: Vec<(f64, f64)> = matched.iter().map(|(x, y)| (f(x), f(y))).collect();
                let result = bootstrap_paired(&pairs, resamples, seed).expect("nonempty");
                deltas.push(DeltaRow {
                    level: a.2.clone(),
                    system: a.3.clone(),
                    metric: name.to_owned(),
                    first: a.1.clone(),
                    second: b.1.clone(),
                    matched: matched.len(),
                    result,
                });
            }
        }
    }
    Report { rows, deltas }
}

pub const ROW_HEADER: &str = "setting,level,system,n,StrictJSON,ExtractedJSON,Valid,TrainExact,TrainWorldExact,HeldoutWorldExact,HeldoutExact,HeldoutExact|TrainExact,HeldoutWorldExact|TrainExact,HeldoutCellAccuracy,ParentF1,SHD,RootExact,TrainExact|RootExact,HeldoutWorldExact|RootExact,AltJoint,AltTrainExact,ExperimentWitness";

pub const DELTA_HEADER: &str = "level,system,metric,first,second,matched,mean_delta,lo,hi,resamples";

impl Report {
    pub fn rows_csv(&self) -> String {
        let mut out = String::from(ROW_HEADER);
        out.push('\n');
        for r in &self.rows {
            let cells = [
                r.setting.clone(),
                r.level.clone(),
                r.system.clone(),
                r.n.to_string(),
                r.strict_json.display(),
                r.extracted_json.display(),
                r.valid.display(),
                r.train_exact.display(),
                r.train_world_exact.display(),
                r.heldout_world_exact.display(),
                r.heldout_exact.display(),
                r.heldout_given_train.display(),
                r.heldout_world_given_train.display(),
                r.heldout_cells.display(),
                r.parent_f1.display(),
                r.shd.display(),
                r.root_exact.display(),
                r.train_given_roots.display(),
                r.heldout_world_given_roots.display(),
                r.alt_joint.display(),
                r.alt_train_exact.display(),
                r.experiment_witness.display(),
            ];
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn deltas_csv(&self) -> String {
        let mut out = String::from(DELTA_HEADER);
        out.push('\n');
        for d in &self.deltas {
            out.push_str(&format!(
                "{},{},{},{},{},{},{:.4},{:.4},{:.4},{}\n",
                d.level, d.system, d.metric, d.first, d.second, d.matched, d.result.mean_delta, d.result.lo, d.result.hi, d.result.resamples
            ));
        }
        out
    }
}

fn rational(c: &AggregateCell) -> Option<BigRational> {
    (c.den != 0).then(|| BigRational::new(BigInt::from(c.num), BigInt::from(c.den)))
}

/// Per-result sanity inequalities, then per-row HeldoutExact =
/// TrainExact x (HeldoutExact | TrainExact) on exact rationals.
pub fn check_identities(results: &[RunResult], report: &Report) -> Result<(), String> {
    for r in results {
        check_sanity(&r.replay).map_err(|e| format!("{}: {e}", r.task))?;
    }
    for row in &report.rows {
        let (te, he) = (rational(&row.train_exact), rational(&row.heldout_exact));
        if let (Some(te), Some(he)) = (te, he) {
            if he > te {
                return Err(format!("{}/{}: HeldoutExact exceeds TrainExact", row.setting, row.system));
            }
            if let Some(cond) = rational(&row.heldout_given_train) {
                if he != te * cond {
                    return Err(format!("{}/{}: conditional identity fails", row.setting, row.system));
                }
            }
        }
    }
    Ok(())
}
