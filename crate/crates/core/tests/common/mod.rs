//! Independent reference evaluators and random fixtures shared by the
//! integration tests. Nothing here calls the crate's evaluator or replay.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use scmbench_core::dsl::parse;
use scmbench_core::scm::Scm;
use scmbench_core::worlds::{Intervention, Row, World};

#[derive(Debug)]
enum Sx {
    Atom(String),
    List(Vec<Sx>),
}

fn tokens(text: &str) -> Vec<String> {
    text.replace('(', " ( ").replace(')', " ) ").split_whitespace().map(str::to_owned).collect()
}

fn read(toks: &[String], pos: &mut usize) -> Sx {
    let t = &toks[*pos];
    *pos += 1;
    if t == "(" {
        let mut items = Vec::new();
        while toks[*pos] != ")" {
            items.push(read(toks, pos));
        }
        *pos += 1;
        Sx::List(items)
    } else {
        Sx::Atom(t.clone())
    }
}

fn eval_sx(e: &Sx, value: &mut dyn FnMut(&str) -> bool) -> bool {
    match e {
        Sx::Atom(v) => value(v),
        Sx::List(items) => {
            let Sx::Atom(op) = &items[0] else { panic!("operator expected") };
            let args: Vec<bool> = items[1..].iter().map(|a| eval_sx(a, value)).collect();
            match op.as_str() {
                "not" => !args[0],
                "and" => args.iter().all(|b| *b),
                "or" => args.iter().any(|b| *b),
                "xor" => args.iter().filter(|b| **b).count() % 2 == 1,
                "iff" => args[1..].iter().fold(args[0], |acc, b| acc == *b),
                other => panic!("unknown operator {other}"),
            }
        }
    }
}

/// Evaluates formula text under a lookup.
pub fn eval_text(text: &str, value: &mut dyn FnMut(&str) -> bool) -> bool {
    let toks = tokens(text);
    let mut pos = 0;
    let e = read(&toks, &mut pos);
    assert_eq!(pos, toks.len(), "trailing tokens in {text}");
    eval_sx(&e, value)
}

pub fn variables_of(text: &str) -> BTreeSet<String> {
    tokens(text)
        .into_iter()
        .filter(|t| t != "(" && t != ")" && !["not", "and", "or", "xor", "iff"].contains(&t.as_str()))
        .collect()
}

/// One row replayed from the definition: intervened variables take their
/// clamp, other roots are copied from the row, other endogenous variables
/// are evaluated recursively from their mechanisms.
pub fn replay_row(
    roots: &BTreeSet<String>,
    mechs: &BTreeMap<String, String>,
    row: &BTreeMap<String, bool>,
    clamp: &BTreeMap<String, bool>,
) -> BTreeMap<String, bool> {
    fn value(
        v: &str,
        roots: &BTreeSet<String>,
        mechs: &BTreeMap<String, String>,
        row: &BTreeMap<String, bool>,
        clamp: &BTreeMap<String, bool>,
        memo: &mut BTreeMap<String, bool>,
    ) -> bool {
        if let Some(b) = memo.get(v) {
            return *b;
        }
        let b = if let Some(c) = clamp.get(v) {
            *c
        } else if roots.contains(v) {
            row[v]
        } else {
            eval_text(&mechs[v], &mut |u| value(u, roots, mechs, row, clamp, memo))
        };
        memo.insert(v.to_owned(), b);
        b
    }
    let mut memo = BTreeMap::new();
    row.keys()
        .map(|v| (v.clone(), value(v, roots, mechs, row, clamp, &mut memo)))
        .collect()
}

pub fn row_map(observed: &[String], bits: u64) -> BTreeMap<String, bool> {
    observed.iter().enumerate().map(|(i, v)| (v.clone(), bits >> i & 1 == 1)).collect()
}

pub fn clamp_of(w: &World, i: usize) -> BTreeMap<String, bool> {
    let mut out: BTreeMap<String, bool> = w.intervention.constant.clone();
    for (t, vals) in &w.intervention.assigned {
        out.insert(t.clone(), vals[i]);
    }
    out
}

/// Replayed rows and the mismatching scored cells of each row.
pub fn oracle_replay(
    observed: &[String],
    roots: &[String],
    mechs: &BTreeMap<String, String>,
    w: &World,
) -> (Vec<BTreeMap<String, bool>>, Vec<BTreeSet<String>>) {
    let roots: BTreeSet<String> = roots.iter().cloned().collect();
    let mut rows = Vec::new();
    let mut bad = Vec::new();
    for (i, r) in w.rows.iter().enumerate() {
        let seen = row_map(observed, r.bits);
        let clamp = clamp_of(w, i);
        let out = replay_row(&roots, mechs, &seen, &clamp);
        let diff: BTreeSet<String> = mechs
            .keys()
            .filter(|v| !clamp.contains_key(*v) && out[*v] != seen[*v])
            .cloned()
            .collect();
        rows.push(out);
        bad.push(diff);
    }
    (rows, bad)
}

/// Every endogenous mechanism reproduces `v` from the observed row values on
/// every training row where `v` is not intervened.
pub fn pointwise_fits(observed: &[String], mechs: &BTreeMap<String, String>, train: &[World]) -> bool {
    train.iter().all(|w| {
        w.rows.iter().enumerate().all(|(i, r)| {
            let seen = row_map(observed, r.bits);
            let clamp = clamp_of(w, i);
            mechs
                .iter()
                .filter(|(v, _)| !clamp.contains_key(*v))
                .all(|(v, m)| eval_text(m, &mut |u| seen[u]) == seen[v])
        })
    })
}

pub fn xs(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("X{i}")).collect()
}

/// Random formula text over `vars`.
pub fn random_formula<R: Rng>(rng: &mut R, vars: &[String], depth: usize) -> String {
    if depth == 0 || rng.gen_bool(0.3) {
        return vars.choose(rng).unwrap().clone();
    }
    match rng.gen_range(0..5) {
        0 => format!("(not {})", random_formula(rng, vars, depth - 1)),
        k => {
            let op = ["and", "or", "xor", "iff"][k - 1];
            let n = rng.gen_range(2..=3);
            let args: Vec<String> = (0..n).map(|_| random_formula(rng, vars, depth - 1)).collect();
            format!("({op} {})", args.join(" "))
        }
    }
}

/// Random SCM over `X1..Xn`: a shuffled order, the first `roots` variables
/// as roots, each later variable a formula over some predecessors.
pub fn random_scm<R: Rng>(rng: &mut R, n: usize, roots: usize) -> (Scm, BTreeMap<String, String>) {
    let observed = xs(n);
    let mut order = observed.clone();
    order.shuffle(rng);
    let mut texts = BTreeMap::new();
    for (i, v) in order.iter().enumerate().skip(roots) {
        let k = rng.gen_range(1..=i.min(3));
        let mut preds = order[..i].to_vec();
        preds.shuffle(rng);
        texts.insert(v.clone(), random_formula(rng, &preds[..k], 3));
    }
    let mechs = texts.iter().map(|(v, t)| (v.clone(), parse(t, &observed).unwrap())).collect();
    let scm = Scm::new(observed, order[..roots].to_vec(), mechs).unwrap();
    (scm, texts)
}

/// Random intervention of any mode on one or two targets, with `rows`
/// values per assigned target.
pub fn random_intervention<R: Rng>(rng: &mut R, observed: &[String], rows: usize) -> Intervention {
    let mut targets = observed.to_vec();
    targets.shuffle(rng);
    let t = &targets[..rng.gen_range(1..=2.min(observed.len()))];
    match rng.gen_range(0..3) {
        0 => Intervention::none(),
        1 => Intervention::constant(t.iter().map(|v| (v.clone(), rng.gen_bool(0.5))).collect()),
        _ => Intervention::assigned(
            t.iter()
                .map(|v| (v.clone(), (0..rows).map(|_| rng.gen_bool(0.5)).collect()))
                .collect(),
        ),
    }
}

/// World with random row bits and a random intervention.
pub fn random_world<R: Rng>(rng: &mut R, observed: &[String], rows: usize, id: &str) -> World {
    let intervention = random_intervention(rng, observed, rows);
    let width = observed.len();
    World {
        id: id.to_owned(),
        intervention,
        env: BTreeMap::new(),
        rows: (0..rows)
            .map(|i| Row {
                unit: format!("u{i:02}"),
                bits: rng.gen::<u64>() & ((1 << width) - 1),
                width: width as u8,
            })
            .collect(),
    }
}
