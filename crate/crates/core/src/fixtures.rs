//! Small hand-built SCMs and records for tests and examples.

use std::collections::BTreeMap;

use crate::dsl::parse;
use crate::generator::{find_single_separator, AltTask};
use crate::scm::{Disclosure, Scm};
use crate::worlds::{middle_env, simulate_world, Intervention, ProblemRecord, Unit, World};

pub fn names(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Observed `X1..Xn`.
pub fn xs(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("X{i}")).collect()
}

/// Panics on any parse or structure error.
pub fn scm(observed: &[String], roots: &[&str], mechs: &[(&str, &str)]) -> Scm {
    let m = mechs
        .iter()
        .map(|(v, t)| (v.to_string(), parse(t, observed).unwrap()))
        .collect();
    Scm::new(observed.to_vec(), names(roots), m).unwrap()
}

/// One unit per root pattern, repeated `copies` times. The first root is the
/// most significant bit of the pattern index.
pub fn pattern_units(roots: &[String], copies: usize) -> Vec<Unit> {
    let mut out = Vec::new();
    for c in 0..copies {
        for p in 0..1usize << roots.len() {
            let values = roots
                .iter()
                .enumerate()
                .map(|(i, r)| (r.clone(), p >> (roots.len() - 1 - i) & 1 == 1))
                .collect();
            out.push(Unit::with_values(format!("u{:02}", c * (1 << roots.len()) + p), &values));
        }
    }
    out
}

/// Gold-simulated training worlds `train_00..` over pattern units.
pub fn record_with(gold: Scm, disclosure: Disclosure, ivs: &[Intervention], copies: usize) -> ProblemRecord {
    let units = pattern_units(gold.roots(), copies);
    let env = middle_env(gold.roots());
    let train: Vec<World> = ivs
        .iter()
        .enumerate()
        .map(|(i, iv)| simulate_world(format!("train_{i:02}"), &gold, &units, &env, iv).unwrap())
        .collect();
    ProblemRecord::from_parts("t", gold, disclosure, units, train, Vec::new())
}

/// Eight variables with roots X3, X4, X8, where X6 and X7 are both
/// `(xor X1 X2)` and so agree on every world that leaves them unclamped.
pub fn twin_reference() -> Scm {
    scm(
        &xs(8),
        &["X3", "X4", "X8"],
        &[
            ("X1", "(xor X3 X8)"),
            ("X2", "(xor X3 X8)"),
            ("X6", "(xor X1 X2)"),
            ("X7", "(xor X1 X2)"),
            ("X5", "(iff X4 (xor (and X1 X6) (or X2 X4)))"),
        ],
    )
}

/// The reference with X6 rewired to copy X7.
pub fn twin_alternative_mechanisms() -> BTreeMap<String, String> {
    [
        ("X1", "(xor X3 X8)"),
        ("X2", "(xor X3 X8)"),
        ("X7", "(xor X1 X2)"),
        ("X6", "X7"),
        ("X5", "(iff X4 (xor (and X1 X6) (or X2 X4)))"),
    ]
    .iter()
    .map(|(v, t)| (v.to_string(), t.to_string()))
    .collect()
}

/// Hidden-order alternative-SCM task over the twin reference. Training
/// worlds never clamp X6 or X7.
pub fn twin_alt_task() -> AltTask {
    let reference = twin_reference();
    let ivs = [
        Intervention::none(),
        Intervention::constant(BTreeMap::from([("X3".to_owned(), true)])),
        Intervention::constant(BTreeMap::from([("X1".to_owned(), false)])),
        Intervention::constant(BTreeMap::from([("X5".to_owned(), true)])),
    ];
    let mut record = record_with(reference.clone(), Disclosure::HiddenOrder, &ivs, 2);
    record.id = "twin".into();
    let alt = scm(
        reference.observed(),
        &["X3", "X4", "X8"],
        &twin_alternative_mechanisms()
            .iter()
            .map(|(v, t)| (v.as_str(), t.as_str()))
            .collect::<Vec<_>>(),
    );
    let separator = find_single_separator(&reference, &alt).expect("distinct");
    AltTask {
        id: format!("{}:alt00", record.key()),
        record,
        reference,
        separator,
        source: "fixture".into(),
    }
}
