//! Intervention worlds: simulation from a gold SCM and replay of candidates.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::meta::RecordMeta;
use crate::scm::{CompiledScm, Disclosure, Scm, Setting};

pub const ENV_LEVELS: [f64; 5] = [0.2, 0.35, 0.5, 0.65, 0.8];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldError {
    #[error("no environment level for root `{0}`")]
    MissingEnvironment(String),
    #[error("no threshold for root `{root}` in unit `{unit}`")]
    MissingThreshold { unit: String, root: String },
    #[error("assigned vector for `{var}` has length {got}, expected {expected}")]
    AssignedLengthMismatch {
        var: String,
        got: usize,
        expected: usize,
    },
    #[error("intervention target `{0}` is not observed")]
    UnknownTarget(String),
    #[error("intervention mode does not match its targets")]
    ModeMismatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub id: String,
    pub thresholds: BTreeMap<String, f64>,
}

impl Unit {
    /// A unit whose roots take `values` at the middle environment level.
    pub fn with_values(id: impl Into<String>, values: &BTreeMap<String, bool>) -> Unit {
        Unit {
            id: id.into(),
            thresholds: values
                .iter()
                .map(|(r, &b)| (r.clone(), if b { 0.25 } else { 0.75 }))
                .collect(),
        }
    }
}

/// Environment putting every root at the middle level.
pub fn middle_env(roots: &[String]) -> BTreeMap<String, f64> {
    roots.iter().map(|r| (r.clone(), 0.5)).collect()
}

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    None,
    HardConstant,
    HardAssigned,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::None => "none",
            Mode::HardConstant => "hard_constant",
            Mode::HardAssigned => "hard_assigned",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intervention {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub constant: BTreeMap<String, bool>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub assigned: BTreeMap<String, Vec<bool>>,
}

/// Target set plus mode; clamped values are not part of the signature.
pub type Signature = (Vec<String>, Mode);

impl Intervention {
    pub fn none() -> Intervention {
        Intervention::default()
    }

    pub fn constant(targets: BTreeMap<String, bool>) -> Intervention {
        Intervention {
            mode: Mode::HardConstant,
            constant: targets,
            assigned: BTreeMap::new(),
        }
    }

    pub fn assigned(targets: BTreeMap<String, Vec<bool>>) -> Intervention {
        Intervention {
            mode: Mode::HardAssigned,
            constant: BTreeMap::new(),
            assigned: targets,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn targets(&self) -> BTreeSet<String> {
        self.constant
            .keys()
            .chain(self.assigned.keys())
            .cloned()
            .collect()
    }

    pub fn signature(&self) -> Signature {
        (self.targets().into_iter().collect(), self.mode())
    }

    pub fn check(&self, observed: &[String], rows: usize) -> Result<(), WorldError> {
        let shape_ok = match self.mode() {
            Mode::None => self.constant.is_empty() && self.assigned.is_empty(),
            Mode::HardConstant => self.assigned.is_empty() && !self.constant.is_empty(),
            Mode::HardAssigned => self.constant.is_empty() && !self.assigned.is_empty(),
        };
        if !shape_ok {
            return Err(WorldError::ModeMismatch);
        }
        for t in self.targets() {
            if !observed.contains(&t) {
                return Err(WorldError::UnknownTarget(t));
            }
        }
        for (var, vals) in &self.assigned {
            if vals.len() != rows {
                return Err(WorldError::AssignedLengthMismatch {
                    var: var.clone(),
                    got: vals.len(),
                    expected: rows,
                });
            }
        }
        Ok(())
    }

    /// Bit mask of intervened variables under the observed indexing.
    pub fn mask(&self, observed: &[String]) -> u64 {
        self.targets()
            .iter()
            .filter_map(|t| observed.iter().position(|o| o == t))
            .fold(0, |m, i| m | 1u64 << i)
    }

    /// Clamped values for row `i`, restricted to the intervention mask.
    pub fn values(&self, observed: &[String], i: usize) -> u64 {
        let mut out = 0u64;
        let pos = |t: &str| observed.iter().position(|o| o == t);
        for (t, &b) in &self.constant {
            if let (Some(p), true) = (pos(t), b) {
                out |= 1 << p;
            }
        }
        for (t, vals) in &self.assigned {
            if let (Some(p), true) = (pos(t), vals[i]) {
                out |= 1 << p;
            }
        }
        out
    }
}

/// One unit's observed assignment; bit `i` is observed variable `i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Row {
    pub unit: String,
    pub bits: u64,
    pub width: u8,
}

impl Row {
    pub fn get(&self, i: usize) -> bool {
        self.bits >> i & 1 == 1
    }

    pub fn bit_string(&self) -> String {
        (0..self.width as usize)
            .map(|i| if self.get(i) { '1' } else { '0' })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct RawRow {
    unit: String,
    values: String,
}

impl Serialize for Row {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RawRow {
            unit: self.unit.clone(),
            values: self.bit_string(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Row {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Row, D::Error> {
        let raw = RawRow::deserialize(d)?;
        if raw.values.len() > 64 {
            return Err(serde::de::Error::custom("row wider than 64 variables"));
        }
        let mut bits = 0u64;
        for (i, ch) in raw.values.chars().enumerate() {
            match ch {
                '0' => {}
                '1' => bits |= 1 << i,
                other => {
                    return Err(serde::de::Error::custom(format!(
                        "row value must be 0 or 1, got `{other}`"
                    )))
                }
            }
        }
        Ok(Row {
            unit: raw.unit,
            width: raw.values.len() as u8,
            bits,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub id: String,
    pub intervention: Intervention,
    pub env: BTreeMap<String, f64>,
    pub rows: Vec<Row>,
}

/// Root value rule: 1 exactly when the unit threshold is below the level.
pub fn root_value(threshold: f64, level: f64) -> bool {
    threshold < level
}

/// Runs the gold SCM on each unit under the intervention.
pub fn simulate_world(
    id: impl Into<String>,
    gold: &Scm,
    units: &[Unit],
    env: &BTreeMap<String, f64>,
    iv: &Intervention,
) -> Result<World, WorldError> {
    simulate_compiled(id, gold, &gold.compile(), units, env, iv)
}

pub fn simulate_compiled(
    id: impl Into<String>,
    gold: &Scm,
    compiled: &CompiledScm,
    units: &[Unit],
    env: &BTreeMap<String, f64>,
    iv: &Intervention,
) -> Result<World, WorldError> {
    let observed = gold.observed();
    iv.check(observed, units.len())?;
    for r in gold.roots() {
        if !env.contains_key(r) {
            return Err(WorldError::MissingEnvironment(r.clone()));
        }
    }
    let mask = iv.mask(observed);
    let mut rows = Vec::with_capacity(units.len());
    for (i, unit) in units.iter().enumerate() {
        let mut bits = 0u64;
        for r in gold.roots() {
            let t = unit
                .thresholds
                .get(r)
                .ok_or_else(|| WorldError::MissingThreshold {
                    unit: unit.id.clone(),
                    root: r.clone(),
                })?;
            if root_value(*t, env[r]) {
                bits |= 1 << gold.index_of(r).expect("observed");
            }
        }
        bits = (bits & !mask) | iv.values(observed, i);
        bits = compiled.run(bits, mask);
        rows.push(Row {
            unit: unit.id.clone(),
            bits,
            width: observed.len() as u8,
        });
    }
    Ok(World {
        id: id.into(),
        intervention: iv.clone(),
        env: env.clone(),
        rows,
    })
}

/// Per-row replayed values and mismatch masks over scored cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Replay {
    pub rows: Vec<u64>,
    /// Scored variables: candidate-endogenous and not intervened.
    pub scored: u64,
    pub mismatches: Vec<u64>,
}

impl Replay {
    pub fn exact(&self) -> bool {
        self.mismatches.iter().all(|m| *m == 0)
    }

    pub fn scored_cells(&self) -> usize {
        self.scored.count_ones() as usize * self.rows.len()
    }

    pub fn matched_cells(&self) -> usize {
        self.scored_cells()
            - self
                .mismatches
                .iter()
                .map(|m| m.count_ones() as usize)
                .sum::<usize>()
    }
}

/// Replays a candidate on a world. The candidate must share the world's
/// observed indexing.
pub fn replay(candidate: &Scm, w: &World) -> Replay {
    replay_compiled(candidate.observed(), &candidate.compile(), w)
}

pub fn replay_compiled(observed: &[String], c: &CompiledScm, w: &World) -> Replay {
    let mask = w.intervention.mask(observed);
    let scored = c.endogenous_mask() & !mask;
    let mut rows = Vec::with_capacity(w.rows.len());
    let mut mismatches = Vec::with_capacity(w.rows.len());
    for (i, row) in w.rows.iter().enumerate() {
        let start = (row.bits & !mask) | w.intervention.values(observed, i);
        let out = c.run(start, mask);
        mismatches.push((out ^ row.bits) & scored);
        rows.push(out);
    }
    Replay {
        rows,
        scored,
        mismatches,
    }
}

pub fn world_exact(candidate: &Scm, w: &World) -> bool {
    replay(candidate, w).exact()
}

/// Where a record sits on the support-audit ladder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Core,
    ExtraWorlds,
    Cex,
}

impl Level {
    pub fn name(self) -> &'static str {
        match self {
            Level::Core => "core",
            Level::ExtraWorlds => "extra_worlds",
            Level::Cex => "cex",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemRecord {
    /// Latent problem id, shared by all variants of the same problem.
    pub id: String,
    pub level: Level,
    pub gold: Scm,
    pub latent_order: Vec<String>,
    pub disclosure: Disclosure,
    pub units: Vec<Unit>,
    pub train: Vec<World>,
    pub heldout: Vec<World>,
    pub meta: RecordMeta,
}

impl ProblemRecord {
    /// A core record with default metadata.
    pub fn from_parts(
        id: impl Into<String>,
        gold: Scm,
        disclosure: Disclosure,
        units: Vec<Unit>,
        train: Vec<World>,
        heldout: Vec<World>,
    ) -> ProblemRecord {
        let latent_order = gold.topological_order().to_vec();
        ProblemRecord {
            id: id.into(),
            level: Level::Core,
            gold,
            latent_order,
            disclosure,
            units,
            train,
            heldout,
            meta: RecordMeta::default(),
        }
    }

    pub fn setting(&self) -> Setting {
        self.disclosure.setting()
    }

    pub fn observed(&self) -> &[String] {
        self.gold.observed()
    }

    /// Unique key of this variant.
    pub fn key(&self) -> String {
        format!("{}:{}:{}", self.id, self.setting().name(), self.level.name())
    }

    /// Roots and endogenous lists the solver is told, if disclosed.
    pub fn disclosed_partition(&self) -> Option<(&[String], &[String])> {
        self.disclosure
            .reveals_partition()
            .then(|| (self.gold.roots(), self.gold.endogenous()))
    }

    pub fn unit(&self, id: &str) -> Option<&Unit> {
        self.units.iter().find(|u| u.id == id)
    }

    pub fn heldout_signatures(&self) -> BTreeSet<Signature> {
        self.heldout.iter().map(|w| w.intervention.signature()).collect()
    }
}

/// Assignment counts of `subset` over training rows where `v` is not
/// intervened. Keys list values in `subset` order.
pub fn local_support_counts(
    train: &[World],
    observed: &[String],
    v: &str,
    subset: &[String],
) -> BTreeMap<Vec<bool>, usize> {
    let idx: Vec<usize> = subset
        .iter()
        .map(|s| observed.iter().position(|o| o == s).expect("observed"))
        .collect();
    let mut out = BTreeMap::new();
    for w in train {
        if w.intervention.targets().contains(v) {
            continue;
        }
        for row in &w.rows {
            let key: Vec<bool> = idx.iter().map(|&i| row.get(i)).collect();
            *out.entry(key).or_insert(0) += 1;
        }
    }
    out
}
