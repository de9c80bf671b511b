//! The restricted Boolean mechanism language.
//!
//! Formulas are s-expressions over `not`, `and`, `or`, `xor` and `iff` with
//! variable references as leaves. Constants never appear in the tree. The
//! n-ary `iff` is the left fold of binary `iff`.

mod canon;
mod parse;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{parse, MAX_DEPTH, MAX_NODES};

/// Largest number of distinct variables a truth table is built over.
pub const MAX_TABLE_VARS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Not,
    And,
    Or,
    Xor,
    Iff,
}

impl Op {
    pub const ALL: [Op; 5] = [Op::Not, Op::And, Op::Or, Op::Xor, Op::Iff];
    pub const NARY: [Op; 4] = [Op::And, Op::Or, Op::Xor, Op::Iff];

    pub fn name(self) -> &'static str {
        match self {
            Op::Not => "not",
            Op::And => "and",
            Op::Or => "or",
            Op::Xor => "xor",
            Op::Iff => "iff",
        }
    }

    pub fn from_name(name: &str) -> Option<Op> {
        Op::ALL.into_iter().find(|op| op.name() == name)
    }

    /// Binary step of the left fold used for n-ary application.
    #[inline]
    pub fn fold(self, acc: bool, next: bool) -> bool {
        match self {
            Op::And => acc && next,
            Op::Or => acc || next,
            Op::Xor => acc ^ next,
            Op::Iff => acc == next,
            Op::Not => unreachable!("not is unary"),
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DslError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("operator `{op}` expects {expected} operand(s), got {got}")]
    Arity {
        op: Op,
        expected: &'static str,
        got: usize,
    },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
    #[error("constant `{0}` is not allowed")]
    ConstantDisallowed(String),
    #[error("expression exceeds the size limit ({0})")]
    TooLarge(String),
    #[error("no value for variable `{0}`")]
    MissingVariable(String),
    #[error("truth table over {0} variables is too large")]
    TooManyVariables(usize),
}

/// A mechanism formula.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Var(String),
    Apply(Op, Vec<Expr>),
}

/// Node count and nesting depth. A bare variable has size 1 and depth 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AstMetrics {
    pub size: usize,
    pub depth: usize,
}

impl Expr {
    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn not(e: Expr) -> Expr {
        Expr::Apply(Op::Not, vec![e])
    }

    pub fn apply(op: Op, children: Vec<Expr>) -> Expr {
        Expr::Apply(op, children)
    }

    /// Checks operator arities throughout the tree.
    pub fn check_arity(&self) -> Result<(), DslError> {
        match self {
            Expr::Var(_) => Ok(()),
            Expr::Apply(op, children) => {
                arity_ok(*op, children.len())?;
                children.iter().try_for_each(Expr::check_arity)
            }
        }
    }

    pub fn render(&self) -> String {
        self.to_string()
    }

    /// Distinct variable names occurring in the tree, sorted.
    pub fn variables(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Expr::Var(v) => {
                out.insert(v.as_str());
            }
            Expr::Apply(_, children) => children.iter().for_each(|c| c.collect_vars(out)),
        }
    }

    pub fn mentions(&self, name: &str) -> bool {
        match self {
            Expr::Var(v) => v == name,
            Expr::Apply(_, children) => children.iter().any(|c| c.mentions(name)),
        }
    }

    pub fn evaluate(&self, assignment: &BTreeMap<String, bool>) -> Result<bool, DslError> {
        self.evaluate_with(&|name| assignment.get(name).copied())
    }

    pub fn evaluate_with(&self, lookup: &dyn Fn(&str) -> Option<bool>) -> Result<bool, DslError> {
        match self {
            Expr::Var(v) => lookup(v).ok_or_else(|| DslError::MissingVariable(v.clone())),
            Expr::Apply(Op::Not, children) => Ok(!children[0].evaluate_with(lookup)?),
            Expr::Apply(op, children) => {
                let mut acc = children[0].evaluate_with(lookup)?;
                for c in &children[1..] {
                    acc = op.fold(acc, c.evaluate_with(lookup)?);
                }
                Ok(acc)
            }
        }
    }

    /// Compiles the formula against a variable indexing; the result
    /// evaluates on rows packed as bitmasks (bit `i` = variable `i`).
    pub fn bind(&self, index_of: &dyn Fn(&str) -> Option<usize>) -> Result<Bound, DslError> {
        let mut code = Vec::new();
        self.emit(index_of, &mut code)?;
        Ok(Bound { code })
    }

    fn emit(
        &self,
        index_of: &dyn Fn(&str) -> Option<usize>,
        code: &mut Vec<Instr>,
    ) -> Result<(), DslError> {
        match self {
            Expr::Var(v) => {
                let i = index_of(v).ok_or_else(|| DslError::MissingVariable(v.clone()))?;
                assert!(i < 64, "bound variable index out of range");
                code.push(Instr::Load(i as u8));
            }
            Expr::Apply(op, children) => {
                for c in children {
                    c.emit(index_of, code)?;
                }
                code.push(Instr::Apply(*op, children.len() as u32));
            }
        }
        Ok(())
    }

    /// Truth table over `parents`; the first parent is the most significant
    /// bit of the assignment index.
    pub fn truth_table(&self, parents: &[String]) -> Result<TruthTable, DslError> {
        let k = parents.len();
        if k > MAX_TABLE_VARS {
            return Err(DslError::TooManyVariables(k));
        }
        let bound = self.bind(&|name| parents.iter().position(|p| p == name).map(|i| k - 1 - i))?;
        let outputs = (0..1usize << k).map(|idx| bound.eval(idx as u64)).collect();
        Ok(TruthTable {
            parents: parents.to_vec(),
            outputs,
        })
    }

    fn occurring_table(&self) -> TruthTable {
        let vars: Vec<String> = self.variables().into_iter().map(str::to_owned).collect();
        self.truth_table(&vars)
            .expect("occurring variables cover the formula")
    }

    /// Variables whose flip changes the output for some assignment of the
    /// other occurring variables.
    pub fn effective_parents(&self) -> BTreeSet<String> {
        let table = self.occurring_table();
        let k = table.parents.len();
        table
            .parents
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let bit = 1usize << (k - 1 - i);
                (0..table.outputs.len())
                    .any(|idx| idx & bit == 0 && table.outputs[idx] != table.outputs[idx | bit])
            })
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn signature(&self) -> SemanticSignature {
        let parents: Vec<String> = self.effective_parents().into_iter().collect();
        let table = self.restricted_table(&parents);
        SemanticSignature { parents, table }
    }

    /// Truth table over `parents` with every other variable fixed to 0.
    pub fn restricted_table(&self, parents: &[String]) -> TruthTable {
        let k = parents.len();
        assert!(k <= MAX_TABLE_VARS, "too many parents for a truth table");
        // Bit k of an index below 2^k is always clear.
        let bound = self
            .bind(&|name| Some(parents.iter().position(|p| p == name).map_or(k, |i| k - 1 - i)))
            .expect("every name resolves");
        let outputs = (0..1usize << k).map(|idx| bound.eval(idx as u64)).collect();
        TruthTable {
            parents: parents.to_vec(),
            outputs,
        }
    }

    pub fn metrics(&self) -> AstMetrics {
        match self {
            Expr::Var(_) => AstMetrics { size: 1, depth: 1 },
            Expr::Apply(_, children) => {
                let mut size = 1;
                let mut depth = 0;
                for c in children {
                    let m = c.metrics();
                    size += m.size;
                    depth = depth.max(m.depth);
                }
                AstMetrics {
                    size,
                    depth: depth + 1,
                }
            }
        }
    }

    pub fn size(&self) -> usize {
        self.metrics().size
    }

    pub fn canonicalize(&self) -> Expr {
        canon::canonicalize(self)
    }
}

pub(crate) fn arity_ok(op: Op, got: usize) -> Result<(), DslError> {
    let ok = match op {
        Op::Not => got == 1,
        _ => got >= 2,
    };
    if ok {
        Ok(())
    } else {
        Err(DslError::Arity {
            op,
            expected: if op == Op::Not { "exactly 1" } else { "at least 2" },
            got,
        })
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Var(v) => f.write_str(v),
            Expr::Apply(op, children) => {
                write!(f, "({op}")?;
                for c in children {
                    write!(f, " {c}")?;
                }
                f.write_str(")")
            }
        }
    }
}

pub fn semantically_equal(a: &Expr, b: &Expr) -> bool {
    let mut vars: BTreeSet<&str> = a.variables();
    vars.extend(b.variables());
    let vars: Vec<String> = vars.into_iter().map(str::to_owned).collect();
    match (a.truth_table(&vars), b.truth_table(&vars)) {
        (Ok(ta), Ok(tb)) => ta.outputs == tb.outputs,
        _ => false,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Instr {
    Load(u8),
    Apply(Op, u32),
}

/// A formula compiled against a fixed variable indexing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bound {
    code: Vec<Instr>,
}

impl Bound {
    pub fn eval(&self, row: u64) -> bool {
        let mut stack: Vec<bool> = Vec::with_capacity(16);
        for instr in &self.code {
            match *instr {
                Instr::Load(i) => stack.push(row >> i & 1 == 1),
                Instr::Apply(Op::Not, _) => {
                    let top = stack.last_mut().expect("operand");
                    *top = !*top;
                }
                Instr::Apply(op, n) => {
                    let base = stack.len() - n as usize;
                    let mut acc = stack[base];
                    for &b in &stack[base + 1..] {
                        acc = op.fold(acc, b);
                    }
                    stack.truncate(base);
                    stack.push(acc);
                }
            }
        }
        stack.pop().expect("formula yields a value")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TruthTable {
    pub parents: Vec<String>,
    pub outputs: Vec<bool>,
}

impl TruthTable {
    pub fn is_constant(&self) -> bool {
        self.outputs.windows(2).all(|w| w[0] == w[1])
    }

    /// Row index for an assignment given in parent order.
    pub fn index_of(bits: &[bool]) -> usize {
        bits.iter().fold(0, |acc, &b| acc << 1 | b as usize)
    }
}

/// Effective parents (sorted) and the truth table restricted to them.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SemanticSignature {
    pub parents: Vec<String>,
    pub table: TruthTable,
}
