//! Structural causal models over binary variables, the disclosure settings,
//! and the evaluator's validity funnel.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{self, Bound, DslError, Expr, SemanticSignature};

/// Observed variables are packed into `u64` rows.
pub const MAX_VARIABLES: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cycle through {}", .0.join(" -> "))]
pub struct CycleError(pub Vec<String>);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScmError {
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("root `{0}` is not observed")]
    UnknownRoot(String),
    #[error("mechanism keys do not match the endogenous set (missing {missing:?}, extra {extra:?})")]
    KeyMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },
    #[error("mechanism for `{var}` references unknown variable `{name}`")]
    UnknownReference { var: String, name: String },
    #[error("mechanism for `{0}` references itself")]
    SelfReference(String),
    #[error(transparent)]
    Cycle(#[from] CycleError),
    #[error("{0} observed variables exceed the supported maximum")]
    TooManyVariables(usize),
    #[error("mechanism for `{var}`: {source}")]
    Mechanism { var: String, source: DslError },
}

/// A fully specified SCM: roots are exogenous inputs, every endogenous
/// variable has a mechanism, and the effective dependency graph is acyclic.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scm {
    observed: Vec<String>,
    roots: Vec<String>,
    endogenous: Vec<String>,
    mechanisms: BTreeMap<String, Expr>,
    parents: BTreeMap<String, BTreeSet<String>>,
    order: Vec<String>,
}

impl Scm {
    /// Builds an SCM. Endogenous variables are the observed variables that
    /// are not roots, kept in observed order.
    pub fn new(
        observed: Vec<String>,
        roots: Vec<String>,
        mechanisms: BTreeMap<String, Expr>,
    ) -> Result<Scm, ScmError> {
        if observed.len() > MAX_VARIABLES {
            return Err(ScmError::TooManyVariables(observed.len()));
        }
        let mut seen = BTreeSet::new();
        for v in &observed {
            if !seen.insert(v.as_str()) {
                return Err(ScmError::DuplicateVariable(v.clone()));
            }
        }
        let mut root_set = BTreeSet::new();
        for r in &roots {
            if !seen.contains(r.as_str()) {
                return Err(ScmError::UnknownRoot(r.clone()));
            }
            if !root_set.insert(r.as_str()) {
                return Err(ScmError::DuplicateVariable(r.clone()));
            }
        }
        let endogenous: Vec<String> = observed
            .iter()
            .filter(|v| !root_set.contains(v.as_str()))
            .cloned()
            .collect();
        let missing: Vec<String> = endogenous
            .iter()
            .filter(|v| !mechanisms.contains_key(*v))
            .cloned()
            .collect();
        let extra: Vec<String> = mechanisms
            .keys()
            .filter(|k| !endogenous.contains(k))
            .cloned()
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(ScmError::KeyMismatch { missing, extra });
        }
        let mut parents = BTreeMap::new();
        for (v, e) in &mechanisms {
            e.check_arity().map_err(|source| ScmError::Mechanism {
                var: v.clone(),
                source,
            })?;
            for name in e.variables() {
                if !seen.contains(name) {
                    return Err(ScmError::UnknownReference {
                        var: v.clone(),
                        name: name.to_owned(),
                    });
                }
                if name == v {
                    return Err(ScmError::SelfReference(v.clone()));
                }
            }
            parents.insert(v.clone(), e.effective_parents());
        }
        let order = topo_sort(&observed, &parents)?;
        Ok(Scm {
            observed,
            roots,
            endogenous,
            mechanisms,
            parents,
            order,
        })
    }

    pub fn observed(&self) -> &[String] {
        &self.observed
    }

    pub fn roots(&self) -> &[String] {
        &self.roots
    }

    pub fn endogenous(&self) -> &[String] {
        &self.endogenous
    }

    pub fn mechanisms(&self) -> &BTreeMap<String, Expr> {
        &self.mechanisms
    }

    pub fn mechanism(&self, v: &str) -> Option<&Expr> {
        self.mechanisms.get(v)
    }

    pub fn is_root(&self, v: &str) -> bool {
        self.roots.iter().any(|r| r == v)
    }

    /// Effective parents of an endogenous variable; empty for roots.
    pub fn parents_of(&self, v: &str) -> BTreeSet<String> {
        self.parents.get(v).cloned().unwrap_or_default()
    }

    pub fn index_of(&self, v: &str) -> Option<usize> {
        self.observed.iter().position(|o| o == v)
    }

    /// Deterministic topological order of all observed variables.
    pub fn topological_order(&self) -> &[String] {
        &self.order
    }

    pub fn functional_parent_graph(&self) -> ParentGraph {
        let edges = self
            .parents
            .iter()
            .flat_map(|(v, ps)| {
                ps.iter()
                    .filter(move |u| *u != v)
                    .map(move |u| (u.clone(), v.clone()))
            })
            .collect();
        ParentGraph { edges }
    }

    pub fn signature(&self) -> BTreeMap<String, SemanticSignature> {
        self.mechanisms
            .iter()
            .map(|(v, e)| (v.clone(), e.signature()))
            .collect()
    }

    /// Total AST size over all mechanisms.
    pub fn total_size(&self) -> usize {
        self.mechanisms.values().map(Expr::size).sum()
    }

    /// Mechanisms rendered to DSL text.
    pub fn rendered(&self) -> BTreeMap<String, String> {
        self.mechanisms
            .iter()
            .map(|(v, e)| (v.clone(), e.render()))
            .collect()
    }

    /// Replaces one mechanism, revalidating the result.
    pub fn with_mechanism(&self, v: &str, e: Expr) -> Result<Scm, ScmError> {
        let mut mechs = self.mechanisms.clone();
        mechs.insert(v.to_owned(), e);
        Scm::new(self.observed.clone(), self.roots.clone(), mechs)
    }

    /// Compiles the endogenous mechanisms in topological order against the
    /// observed indexing.
    pub fn compile(&self) -> CompiledScm {
        let steps = self
            .order
            .iter()
            .filter_map(|v| {
                let e = self.mechanisms.get(v)?;
                let idx = self.index_of(v).expect("observed");
                let bound = e
                    .bind(&|n| self.index_of(n))
                    .expect("references are observed");
                Some((idx, bound))
            })
            .collect();
        let root_mask = self
            .roots
            .iter()
            .map(|r| 1u64 << self.index_of(r).expect("observed"))
            .fold(0, |a, b| a | b);
        CompiledScm { steps, root_mask }
    }
}

/// Endogenous mechanisms bound to row bit positions, in evaluation order.
#[derive(Clone, Debug)]
pub struct CompiledScm {
    pub steps: Vec<(usize, Bound)>,
    pub root_mask: u64,
}

impl CompiledScm {
    /// Evaluates every endogenous variable whose bit is clear in `clamped`,
    /// leaving other bits of `row` untouched.
    pub fn run(&self, mut row: u64, clamped: u64) -> u64 {
        for (idx, bound) in &self.steps {
            let bit = 1u64 << idx;
            if clamped & bit != 0 {
                continue;
            }
            if bound.eval(row) {
                row |= bit;
            } else {
                row &= !bit;
            }
        }
        row
    }

    pub fn endogenous_mask(&self) -> u64 {
        self.steps.iter().fold(0, |m, (i, _)| m | 1u64 << i)
    }
}

#[derive(Serialize, Deserialize)]
struct RawScm {
    observed: Vec<String>,
    roots: Vec<String>,
    mechanisms: BTreeMap<String, String>,
}

impl Serialize for Scm {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RawScm {
            observed: self.observed.clone(),
            roots: self.roots.clone(),
            mechanisms: self.rendered(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Scm {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Scm, D::Error> {
        let raw = RawScm::deserialize(d)?;
        let mut mechs = BTreeMap::new();
        for (v, text) in raw.mechanisms {
            let e = dsl::parse(&text, &raw.observed).map_err(serde::de::Error::custom)?;
            mechs.insert(v, e);
        }
        Scm::new(raw.observed, raw.roots, mechs).map_err(serde::de::Error::custom)
    }
}

/// Directed functional-parent edges `U -> V`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParentGraph {
    pub edges: BTreeSet<(String, String)>,
}

impl ParentGraph {
    pub fn contains(&self, from: &str, to: &str) -> bool {
        self.edges.contains(&(from.to_owned(), to.to_owned()))
    }
}

/// Kahn's algorithm with byte-order tie-breaking among ready variables.
pub fn topo_sort(
    nodes: &[String],
    parents: &BTreeMap<String, BTreeSet<String>>,
) -> Result<Vec<String>, CycleError> {
    let mut indegree: BTreeMap<&str, usize> = nodes.iter().map(|n| (n.as_str(), 0)).collect();
    let mut children: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (v, ps) in parents {
        for p in ps {
            if p == v {
                return Err(CycleError(vec![v.clone(), v.clone()]));
            }
            *indegree.entry(v.as_str()).or_default() += 1;
            children.entry(p.as_str()).or_default().push(v.as_str());
        }
    }
    let mut ready: BTreeSet<&str> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(n, _)| *n)
        .collect();
    let mut out = Vec::with_capacity(nodes.len());
    while let Some(n) = ready.pop_first() {
        out.push(n.to_owned());
        for c in children.get(n).into_iter().flatten() {
            let d = indegree.get_mut(c).expect("known node");
            *d -= 1;
            if *d == 0 {
                ready.insert(c);
            }
        }
    }
    if out.len() == indegree.len() {
        return Ok(out);
    }
    let stuck: BTreeSet<&str> = indegree
        .iter()
        .filter(|(_, d)| **d > 0)
        .map(|(n, _)| *n)
        .collect();
    Err(CycleError(cycle_witness(&stuck, parents)))
}

fn cycle_witness(stuck: &BTreeSet<&str>, parents: &BTreeMap<String, BTreeSet<String>>) -> Vec<String> {
    // Every stuck node has a stuck parent; walk parents until a repeat.
    let mut path: Vec<&str> = vec![stuck.first().copied().expect("nonempty")];
    loop {
        let cur = *path.last().expect("nonempty");
        let next = parents
            .get(cur)
            .and_then(|ps| ps.iter().find(|p| stuck.contains(p.as_str())))
            .expect("stuck node has a stuck parent");
        if let Some(pos) = path.iter().position(|p| *p == next) {
            let mut cycle: Vec<String> = path[pos..].iter().rev().map(|s| s.to_string()).collect();
            cycle.push(cycle[0].clone());
            return cycle;
        }
        path.push(next.as_str());
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Ordered,
    BlockOrder,
    HiddenOrder,
    HiddenRoots,
}

impl Setting {
    pub const ALL: [Setting; 4] = [
        Setting::Ordered,
        Setting::BlockOrder,
        Setting::HiddenOrder,
        Setting::HiddenRoots,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Setting::Ordered => "ordered",
            Setting::BlockOrder => "block_order",
            Setting::HiddenOrder => "hidden_order",
            Setting::HiddenRoots => "hidden_roots",
        }
    }

    pub fn from_name(s: &str) -> Option<Setting> {
        Setting::ALL.into_iter().find(|x| x.name() == s)
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What the solver is told about the structure beyond the observed
/// variables. The root/endogenous partition is disclosed in every setting
/// except `HiddenRoots`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "setting", rename_all = "snake_case")]
pub enum Disclosure {
    Ordered { order: Vec<String> },
    BlockOrder { blocks: Vec<Vec<String>> },
    HiddenOrder,
    HiddenRoots,
}

impl Disclosure {
    pub fn setting(&self) -> Setting {
        match self {
            Disclosure::Ordered { .. } => Setting::Ordered,
            Disclosure::BlockOrder { .. } => Setting::BlockOrder,
            Disclosure::HiddenOrder => Setting::HiddenOrder,
            Disclosure::HiddenRoots => Setting::HiddenRoots,
        }
    }

    pub fn reveals_partition(&self) -> bool {
        !matches!(self, Disclosure::HiddenRoots)
    }

    /// Whether `u` may appear in the mechanism for `v`.
    pub fn admits(&self, u: &str, v: &str) -> bool {
        if u == v {
            return false;
        }
        match self {
            Disclosure::Ordered { order } => {
                let pos = |x: &str| order.iter().position(|o| o == x);
                matches!((pos(u), pos(v)), (Some(a), Some(b)) if a < b)
            }
            Disclosure::BlockOrder { blocks } => {
                let block = |x: &str| blocks.iter().position(|b| b.iter().any(|y| y == x));
                matches!((block(u), block(v)), (Some(a), Some(b)) if a <= b)
            }
            Disclosure::HiddenOrder | Disclosure::HiddenRoots => true,
        }
    }
}

/// Evaluator stages in funnel order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Schema,
    Keys,
    Parse,
    Legal,
    Acyclic,
    Valid,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Schema,
        Stage::Keys,
        Stage::Parse,
        Stage::Legal,
        Stage::Acyclic,
        Stage::Valid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Schema => "Schema",
            Stage::Keys => "Keys",
            Stage::Parse => "Parse",
            Stage::Legal => "Legal",
            Stage::Acyclic => "Acyclic",
            Stage::Valid => "Valid",
        }
    }
}

/// Furthest funnel stage passed, with the failure message of the next one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub passed: Option<Stage>,
    pub failure: Option<String>,
}

impl ValidityReport {
    pub fn valid() -> ValidityReport {
        ValidityReport {
            passed: Some(Stage::Valid),
            failure: None,
        }
    }

    pub fn failed(passed: Option<Stage>, msg: impl Into<String>) -> ValidityReport {
        ValidityReport {
            passed,
            failure: Some(msg.into()),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.passed == Some(Stage::Valid)
    }

    pub fn reached(&self, stage: Stage) -> bool {
        self.passed.is_some_and(|p| p >= stage)
    }

    /// The stage that failed, if any.
    pub fn failed_at(&self) -> Option<Stage> {
        match self.passed {
            Some(Stage::Valid) => None,
            None => Some(Stage::Schema),
            Some(p) => Stage::ALL.into_iter().find(|s| *s > p),
        }
    }
}

/// Runs the funnel on a submitted mechanism map. `roots` is the disclosed
/// root set, or the predicted one under `HiddenRoots`.
pub fn validate_text(
    observed: &[String],
    roots: &[String],
    disclosure: &Disclosure,
    mechanisms: &BTreeMap<String, String>,
) -> (ValidityReport, Option<Scm>) {
    let mut seen = BTreeSet::new();
    for r in roots {
        if !observed.contains(r) {
            return (ValidityReport::failed(None, format!("root `{r}` is not observed")), None);
        }
        if !seen.insert(r) {
            return (ValidityReport::failed(None, format!("root `{r}` listed twice")), None);
        }
    }
    let expected: BTreeSet<&String> = observed.iter().filter(|v| !roots.contains(v)).collect();
    let got: BTreeSet<&String> = mechanisms.keys().collect();
    if expected != got {
        let missing: Vec<&&String> = expected.difference(&got).collect();
        let extra: Vec<&&String> = got.difference(&expected).collect();
        return (
            ValidityReport::failed(
                Some(Stage::Schema),
                format!("mechanism keys: missing {missing:?}, extra {extra:?}"),
            ),
            None,
        );
    }
    let mut parsed = BTreeMap::new();
    for (v, text) in mechanisms {
        match dsl::parse(text, observed) {
            Ok(e) => {
                parsed.insert(v.clone(), e);
            }
            Err(err) => {
                return (
                    ValidityReport::failed(Some(Stage::Keys), format!("{v}: {err}")),
                    None,
                )
            }
        }
    }
    for (v, e) in &parsed {
        for u in e.variables() {
            if u == v {
                return (
                    ValidityReport::failed(Some(Stage::Parse), format!("{v} references itself")),
                    None,
                );
            }
            if !disclosure.admits(u, v) {
                return (
                    ValidityReport::failed(
                        Some(Stage::Parse),
                        format!("{u} is not an admissible parent of {v}"),
                    ),
                    None,
                );
            }
        }
    }
    match Scm::new(observed.to_vec(), roots.to_vec(), parsed) {
        Ok(scm) => (ValidityReport::valid(), Some(scm)),
        Err(ScmError::Cycle(c)) => (ValidityReport::failed(Some(Stage::Legal), c.to_string()), None),
        Err(other) => (ValidityReport::failed(Some(Stage::Legal), other.to_string()), None),
    }
}

/// Funnel for an already-built SCM under a disclosure.
pub fn validate(m: &Scm, disclosure: &Disclosure) -> ValidityReport {
    validate_text(m.observed(), m.roots(), disclosure, &m.rendered()).0
}
