//! Bottom-up enumeration of DSL formulas over at most six abstract
//! variables, ordered by AST size.
//!
//! Truth tables are `u64` words: bit `idx` is the output on the assignment
//! whose binary reading (first variable most significant) is `idx`.
//! Constructions are deduplicated by their table under a mask, so a full
//! mask gives one formula per function and a partial mask gives one
//! formula per behaviour on the masked assignments.

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use crate::dsl::{Expr, Op};

pub const MAX_VARS: usize = 6;

/// Mask of the `2^k` meaningful table bits.
pub fn full_mask(k: usize) -> u64 {
    assert!(k <= MAX_VARS);
    if k == MAX_VARS {
        u64::MAX
    } else {
        (1u64 << (1 << k)) - 1
    }
}

/// Table of variable `i` among `k`.
pub fn var_table(k: usize, i: usize) -> u64 {
    let b = k - 1 - i;
    (0..1u64 << k)
        .filter(|idx| idx >> b & 1 == 1)
        .fold(0, |t, idx| t | 1 << idx)
}

/// Bit `i` is set when variable `i` can flip the table.
pub fn effective_mask(k: usize, table: u64) -> u8 {
    let full = full_mask(k);
    let table = table & full;
    let mut out = 0u8;
    for i in 0..k {
        let shift = 1u32 << (k - 1 - i);
        let hi = var_table(k, i);
        let flipped = ((table & hi) >> shift) | ((table & !hi & full) << shift);
        if flipped != table {
            out |= 1 << i;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum How {
    Var(u8),
    Not(u32),
    Apply(Op, u32),
}

#[derive(Clone, Copy, Debug)]
pub struct Node {
    pub table: u64,
    pub size: u8,
    pub how: How,
}

#[derive(Clone, Copy, Debug)]
enum Head {
    Single(u32),
    List(u32),
}

#[derive(Clone, Copy, Debug)]
struct ListNode {
    head: Head,
    child: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

#[derive(Clone, Copy, Debug)]
pub struct EnumConfig {
    pub k: usize,
    pub cap: usize,
    pub states_per_size: usize,
    pub mask: u64,
    pub deadline: Option<Instant>,
}

impl EnumConfig {
    pub fn semantic(k: usize, cap: usize, states_per_size: usize) -> EnumConfig {
        EnumConfig {
            k,
            cap,
            states_per_size,
            mask: full_mask(k),
            deadline: None,
        }
    }
}

/// One construction handed to the visitor.
#[derive(Clone, Copy, Debug)]
pub struct Cand {
    pub size: usize,
    pub table: u64,
    pub how: How,
}

#[derive(Debug, Default)]
pub struct Bank {
    k: usize,
    full: u64,
    nodes: Vec<Node>,
    lists: Vec<ListNode>,
    /// `size_start[s]` is the first node of size `s`.
    size_start: Vec<usize>,
    pub states: usize,
    pub truncated: bool,
    pub timed_out: bool,
    pub stopped: bool,
    by_effective: HashMap<u8, Vec<u32>>,
}

const CHECK_EVERY: usize = 1000;

impl Bank {
    /// Enumerates by increasing size, calling `visit` on every construction.
    pub fn run(cfg: EnumConfig, mut visit: impl FnMut(&Bank, &Cand) -> Flow) -> Bank {
        let k = cfg.k;
        assert!((1..=MAX_VARS).contains(&k), "enumeration needs 1..=6 variables");
        let full = full_mask(k);
        let mask = cfg.mask & full;
        let mut bank = Bank {
            k,
            full,
            size_start: vec![0, 0],
            ..Bank::default()
        };
        let mut seen: HashSet<u64> = HashSet::new();
        let mut list_seen: [HashSet<u64>; 4] = Default::default();
        // extendable lists by op and total child size
        let mut ext: [Vec<Vec<u32>>; 4] = Default::default();
        let op_slot = |op: Op| Op::NARY.iter().position(|o| *o == op).expect("n-ary");

        'sizes: for s in 1..=cfg.cap {
            if bank.size_start.len() <= s {
                bank.size_start.push(bank.nodes.len());
            }
            let mut count = 0usize;
            macro_rules! tick {
                () => {{
                    bank.states += 1;
                    count += 1;
                    if count % CHECK_EVERY == 0 {
                        if let Some(d) = cfg.deadline {
                            if Instant::now() >= d {
                                bank.timed_out = true;
                                break 'sizes;
                            }
                        }
                    }
                }};
            }
            macro_rules! capped {
                () => {
                    count >= cfg.states_per_size
                };
            }

            if s == 1 {
                for i in 0..k {
                    if capped!() {
                        bank.truncated = true;
                        break;
                    }
                    let table = var_table(k, i);
                    let cand = Cand {
                        size: 1,
                        table,
                        how: How::Var(i as u8),
                    };
                    tick!();
                    if visit(&bank, &cand) == Flow::Stop {
                        bank.stopped = true;
                        break 'sizes;
                    }
                    if seen.insert(table & mask) {
                        bank.push(cand);
                    }
                }
            } else {
                // negations
                let prev = bank.range(s - 1);
                for n in prev {
                    if capped!() {
                        bank.truncated = true;
                        break;
                    }
                    let node = bank.nodes[n];
                    if matches!(node.how, How::Not(_)) {
                        continue;
                    }
                    let cand = Cand {
                        size: s,
                        table: !node.table & full,
                        how: How::Not(n as u32),
                    };
                    tick!();
                    if visit(&bank, &cand) == Flow::Stop {
                        bank.stopped = true;
                        break 'sizes;
                    }
                    if seen.insert(cand.table & mask) {
                        bank.push(cand);
                    }
                }
                // n-ary applications whose children total s - 1
                let m = s - 1;
                'ops: for op in Op::NARY {
                    let slot = op_slot(op);
                    while ext[slot].len() <= m {
                        ext[slot].push(Vec::new());
                    }
                    for cs in 1..m {
                        let hs = m - cs;
                        let heads: Vec<Head> = bank
                            .range(hs)
                            .filter(|&n| !bank.is_apply_of(n, op))
                            .map(|n| Head::Single(n as u32))
                            .chain(ext[slot][hs].iter().map(|&l| Head::List(l)))
                            .collect();
                        let children: Vec<u32> = bank
                            .range(cs)
                            .filter(|&n| !bank.is_apply_of(n, op))
                            .map(|n| n as u32)
                            .collect();
                        for &head in &heads {
                            let ht = bank.head_table(head, op);
                            for &child in &children {
                                if capped!() {
                                    bank.truncated = true;
                                    break 'ops;
                                }
                                let table = fold_tables(op, ht, bank.nodes[child as usize].table, full);
                                let lid = bank.lists.len() as u32;
                                bank.lists.push(ListNode { head, child });
                                let cand = Cand {
                                    size: s,
                                    table,
                                    how: How::Apply(op, lid),
                                };
                                tick!();
                                if visit(&bank, &cand) == Flow::Stop {
                                    bank.stopped = true;
                                    break 'sizes;
                                }
                                if list_seen[slot].insert(table & mask) {
                                    ext[slot][m].push(lid);
                                }
                                if seen.insert(table & mask) {
                                    bank.push(cand);
                                }
                            }
                        }
                    }
                }
            }
            // smaller single formulas dominate later lists with the same fold
            for n in bank.range(s) {
                let t = bank.nodes[n].table & mask;
                for set in list_seen.iter_mut() {
                    set.insert(t);
                }
            }
        }
        bank.size_start.push(bank.nodes.len());
        bank
    }

    fn push(&mut self, cand: Cand) {
        self.nodes.push(Node {
            table: cand.table,
            size: cand.size as u8,
            how: cand.how,
        });
    }

    fn range(&self, s: usize) -> std::ops::Range<usize> {
        let start = self.size_start.get(s).copied().unwrap_or(self.nodes.len());
        let end = self
            .size_start
            .get(s + 1)
            .copied()
            .unwrap_or(self.nodes.len());
        start..end.max(start)
    }

    fn is_apply_of(&self, n: usize, op: Op) -> bool {
        matches!(self.nodes[n].how, How::Apply(o, _) if o == op)
    }

    fn head_table(&self, head: Head, op: Op) -> u64 {
        match head {
            Head::Single(n) => self.nodes[n as usize].table,
            Head::List(l) => self.list_table(l, op),
        }
    }

    fn list_table(&self, l: u32, op: Op) -> u64 {
        let node = self.lists[l as usize];
        let ht = self.head_table(node.head, op);
        fold_tables(op, ht, self.nodes[node.child as usize].table, self.full)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Rebuilds the formula for a construction over the given names.
    pub fn expr<S: AsRef<str>>(&self, how: How, names: &[S]) -> Expr {
        match how {
            How::Var(i) => Expr::var(names[i as usize].as_ref()),
            How::Not(n) => Expr::not(self.expr(self.nodes[n as usize].how, names)),
            How::Apply(op, l) => {
                let mut children = Vec::new();
                self.list_children(l, names, &mut children);
                Expr::apply(op, children)
            }
        }
    }

    fn list_children<S: AsRef<str>>(&self, l: u32, names: &[S], out: &mut Vec<Expr>) {
        let node = self.lists[l as usize];
        match node.head {
            Head::Single(n) => out.push(self.expr(self.nodes[n as usize].how, names)),
            Head::List(h) => self.list_children(h, names, out),
        }
        out.push(self.expr(self.nodes[node.child as usize].how, names));
    }

    /// Node ids whose effective-variable mask is exactly `mask`.
    pub fn with_effective(&self, mask: u8) -> &[u32] {
        self.by_effective.get(&mask).map(Vec::as_slice).unwrap_or(&[])
    }

    fn index_effective(&mut self) {
        let mut map: HashMap<u8, Vec<u32>> = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            map.entry(effective_mask(self.k, n.table))
                .or_default()
                .push(i as u32);
        }
        self.by_effective = map;
    }
}

pub fn fold_tables(op: Op, a: u64, b: u64, full: u64) -> u64 {
    match op {
        Op::And => a & b,
        Op::Or => a | b,
        Op::Xor => a ^ b,
        Op::Iff => !(a ^ b) & full,
        Op::Not => unreachable!("not is unary"),
    }
}

type BankKey = (usize, usize, usize);

fn cache() -> &'static Mutex<HashMap<BankKey, Arc<Bank>>> {
    static CACHE: OnceLock<Mutex<HashMap<BankKey, Arc<Bank>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// One smallest-found formula per Boolean function of `k` variables, up to
/// `cap` nodes. Built once per parameter triple and shared.
pub fn semantic_bank(k: usize, cap: usize, states_per_size: usize) -> Arc<Bank> {
    let key = (k, cap, states_per_size);
    if let Some(b) = cache().lock().expect("bank cache").get(&key) {
        return b.clone();
    }
    let mut bank = Bank::run(EnumConfig::semantic(k, cap, states_per_size), |_, _| Flow::Continue);
    bank.index_effective();
    let bank = Arc::new(bank);
    cache()
        .lock()
        .expect("bank cache")
        .entry(key)
        .or_insert(bank)
        .clone()
}

/// Partial function over `k` variables: required outputs on `defined`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Partial {
    pub k: usize,
    pub defined: u64,
    pub values: u64,
}

impl Partial {
    pub fn accepts(&self, table: u64) -> bool {
        (table ^ self.values) & self.defined == 0
    }
}

/// Formulas matching `target` on its defined entries: search continues
/// `slack` sizes past the first hit and stops at `max_found` distinct full
/// behaviours. Results are canonicalized and sorted by (size, rendering).
pub fn fit_partial<S: AsRef<str>>(
    target: Partial,
    names: &[S],
    cap: usize,
    slack: usize,
    max_found: usize,
    states_per_size: usize,
    deadline: Option<Instant>,
) -> FitOutcome {
    let k = target.k;
    let mut first: Option<usize> = None;
    let mut found: Vec<(usize, Expr)> = Vec::new();
    let mut tables: HashSet<u64> = HashSet::new();
    let cfg = EnumConfig {
        k,
        cap,
        states_per_size,
        mask: target.defined,
        deadline,
    };
    let bank = Bank::run(cfg, |bank, cand| {
        if let Some(f) = first {
            if cand.size > f + slack {
                return Flow::Stop;
            }
        }
        if target.accepts(cand.table) && tables.insert(cand.table) {
            first.get_or_insert(cand.size);
            found.push((cand.size, bank.expr(cand.how, names)));
            if found.len() >= max_found {
                return Flow::Stop;
            }
        }
        Flow::Continue
    });
    let mut exprs: Vec<(usize, String, Expr)> = found
        .into_iter()
        .map(|(_, e)| {
            let c = e.canonicalize();
            (c.size(), c.render(), c)
        })
        .collect();
    exprs.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
    exprs.dedup_by(|a, b| a.1 == b.1);
    FitOutcome {
        exprs: exprs.into_iter().map(|(_, _, e)| e).collect(),
        timed_out: bank.timed_out,
        truncated: bank.truncated,
    }
}

#[derive(Clone, Debug, Default)]
pub struct FitOutcome {
    pub exprs: Vec<Expr>,
    pub timed_out: bool,
    pub truncated: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("V{i}")).collect()
    }

    fn table_of(e: &Expr, k: usize) -> u64 {
        let t = e.truth_table(&names(k)).unwrap();
        t.outputs
            .iter()
            .enumerate()
            .fold(0, |acc, (i, b)| acc | (*b as u64) << i)
    }

    #[test]
    fn var_tables_follow_msb_convention() {
        assert_eq!(var_table(2, 0), 0b1100);
        assert_eq!(var_table(2, 1), 0b1010);
        assert_eq!(effective_mask(2, var_table(2, 1)), 0b10);
        assert_eq!(effective_mask(3, 0), 0);
    }

    #[test]
    fn bank_tables_match_expressions() {
        let bank = Bank::run(EnumConfig::semantic(3, 6, 1_000_000), |b, c| {
            let e = b.expr(c.how, &names(3));
            assert_eq!(e.size(), c.size);
            assert_eq!(table_of(&e, 3), c.table);
            Flow::Continue
        });
        assert!(!bank.truncated);
    }

    // Every 2-variable function is reachable; constants come from
    // (xor a a) style formulas.
    #[test]
    fn two_variable_functions_complete() {
        let bank = semantic_bank(2, 7, 1_000_000);
        let tables: HashSet<u64> = bank.nodes().iter().map(|n| n.table).collect();
        assert_eq!(tables.len(), 16);
        let min = |t: u64| bank.nodes().iter().find(|n| n.table == t).unwrap().size;
        assert_eq!(min(0b0110), 3);
        assert_eq!(min(0), 3);
        assert_eq!(min(0b0011), 2);
    }

    // Independent brute force: minimal size per function of 2 variables by
    // exhaustively generating all formulas up to size 5.
    #[test]
    fn minimal_sizes_match_exhaustive_generation() {
        fn all(size: usize, k: usize) -> Vec<Expr> {
            let mut out = Vec::new();
            if size == 1 {
                for i in 0..k {
                    out.push(Expr::var(format!("V{i}")));
                }
                return out;
            }
            for c in all(size - 1, k) {
                out.push(Expr::not(c));
            }
            // children sequences of length >= 2 summing to size - 1
            fn seqs(total: usize, k: usize) -> Vec<Vec<Expr>> {
                let mut out = Vec::new();
                for first in 1..=total {
                    for e in all(first, k) {
                        if first == total {
                            out.push(vec![e.clone()]);
                        } else {
                            for mut rest in seqs(total - first, k) {
                                rest.insert(0, e.clone());
                                out.push(rest);
                            }
                        }
                    }
                }
                out
            }
            for seq in seqs(size - 1, k) {
                if seq.len() >= 2 {
                    for op in Op::NARY {
                        out.push(Expr::apply(op, seq.clone()));
                    }
                }
            }
            out
        }
        let mut best: HashMap<u64, usize> = HashMap::new();
        for s in 1..=5 {
            for e in all(s, 2) {
                best.entry(table_of(&e, 2)).or_insert(s);
            }
        }
        let bank = semantic_bank(2, 5, 1_000_000);
        let mut got: HashMap<u64, usize> = HashMap::new();
        for n in bank.nodes() {
            got.entry(n.table).or_insert(n.size as usize);
        }
        assert_eq!(got, best);
    }

    #[test]
    fn fit_respects_dont_cares() {
        // defined only where V0 = 1: V0 -> out = not V1
        let target = Partial {
            k: 2,
            defined: 0b1100,
            values: 0b0100,
        };
        let out = fit_partial(target, &names(2), 6, 0, 10, 100_000, None);
        assert!(!out.exprs.is_empty());
        for e in &out.exprs {
            assert!(target.accepts(table_of(e, 2)));
        }
        assert_eq!(out.exprs[0].render(), "(not V1)");
    }
}
