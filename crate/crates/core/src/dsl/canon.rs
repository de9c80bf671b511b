use super::{Expr, Op};

/// Sorts commutative children by rendering, collapses duplicate `and`/`or`
/// children and removes double negation. Semantics are unchanged.
pub(super) fn canonicalize(e: &Expr) -> Expr {
    match e {
        Expr::Var(_) => e.clone(),
        Expr::Apply(Op::Not, children) => match canonicalize(&children[0]) {
            Expr::Apply(Op::Not, mut inner) => inner.pop().expect("unary"),
            c => Expr::not(c),
        },
        Expr::Apply(op, children) => {
            let mut keyed: Vec<(String, Expr)> = children
                .iter()
                .map(|c| {
                    let c = canonicalize(c);
                    (c.to_string(), c)
                })
                .collect();
            keyed.sort_by(|a, b| a.0.cmp(&b.0));
            if matches!(op, Op::And | Op::Or) {
                keyed.dedup_by(|a, b| a.0 == b.0);
                if keyed.len() == 1 {
                    return keyed.pop().expect("one child").1;
                }
            }
            Expr::Apply(*op, keyed.into_iter().map(|(_, c)| c).collect())
        }
    }
}
