use super::{arity_ok, DslError, Expr, Op};

pub const MAX_NODES: usize = 10_000;
pub const MAX_DEPTH: usize = 256;

const CONSTANT_SPELLINGS: &[&str] = &[
    "0", "1", "true", "false", "True", "False", "TRUE", "FALSE", "#t", "#f", "T", "F", "nil",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tok<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn tokenize(text: &str) -> Vec<(usize, Tok<'_>)> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => {
                out.push((i, Tok::Open));
                i += 1;
            }
            b')' => {
                out.push((i, Tok::Close));
                i += 1;
            }
            c if c.is_ascii_whitespace() => i += 1,
            _ => {
                let start = i;
                while i < bytes.len()
                    && !bytes[i].is_ascii_whitespace()
                    && bytes[i] != b'('
                    && bytes[i] != b')'
                {
                    i += 1;
                }
                out.push((start, Tok::Atom(&text[start..i])));
            }
        }
    }
    out
}

fn is_constant(atom: &str) -> bool {
    CONSTANT_SPELLINGS.contains(&atom)
}

fn leaf<V: AsRef<str>>(atom: &str, vocabulary: &[V]) -> Result<Expr, DslError> {
    if is_constant(atom) {
        return Err(DslError::ConstantDisallowed(atom.to_owned()));
    }
    if vocabulary.iter().any(|v| v.as_ref() == atom) {
        Ok(Expr::Var(atom.to_owned()))
    } else {
        Err(DslError::UnknownVariable(atom.to_owned()))
    }
}

struct Frame {
    op: Op,
    children: Vec<Expr>,
}

/// Parses one formula. Every variable must be in `vocabulary`; operator
/// names and variable names are matched exactly.
pub fn parse<V: AsRef<str>>(text: &str, vocabulary: &[V]) -> Result<Expr, DslError> {
    let tokens = tokenize(text);
    let Some(&(first_pos, first)) = tokens.first() else {
        return Err(DslError::Syntax {
            pos: 0,
            msg: "empty formula".into(),
        });
    };

    let mut stack: Vec<Frame> = Vec::new();
    let mut nodes = 0usize;
    let mut result: Option<Expr> = None;
    let mut i = 0;

    if let Tok::Atom(a) = first {
        if tokens.len() > 1 {
            return Err(DslError::Syntax {
                pos: tokens[1].0,
                msg: "trailing input after formula".into(),
            });
        }
        if Op::from_name(a).is_some() {
            return Err(DslError::Syntax {
                pos: first_pos,
                msg: format!("operator `{a}` outside parentheses"),
            });
        }
        return leaf(a, vocabulary);
    }

    while i < tokens.len() {
        let (pos, tok) = tokens[i];
        if result.is_some() {
            return Err(DslError::Syntax {
                pos,
                msg: "trailing input after formula".into(),
            });
        }
        match tok {
            Tok::Open => {
                let Some(&(hpos, head)) = tokens.get(i + 1) else {
                    return Err(DslError::Syntax {
                        pos,
                        msg: "unclosed parenthesis".into(),
                    });
                };
                let op = match head {
                    Tok::Atom(name) => match Op::from_name(name) {
                        Some(op) => op,
                        None if is_constant(name) => {
                            return Err(DslError::ConstantDisallowed(name.to_owned()))
                        }
                        None => return Err(DslError::UnknownOperator(name.to_owned())),
                    },
                    Tok::Close => {
                        return Err(DslError::Syntax {
                            pos: hpos,
                            msg: "empty application".into(),
                        })
                    }
                    Tok::Open => {
                        return Err(DslError::Syntax {
                            pos: hpos,
                            msg: "expected operator name".into(),
                        })
                    }
                };
                nodes += 1;
                if stack.len() >= MAX_DEPTH {
                    return Err(DslError::TooLarge(format!("depth over {MAX_DEPTH}")));
                }
                stack.push(Frame {
                    op,
                    children: Vec::new(),
                });
                i += 2;
                continue;
            }
            Tok::Close => {
                let Some(frame) = stack.pop() else {
                    return Err(DslError::Syntax {
                        pos,
                        msg: "unbalanced `)`".into(),
                    });
                };
                arity_ok(frame.op, frame.children.len())?;
                let node = Expr::Apply(frame.op, frame.children);
                match stack.last_mut() {
                    Some(parent) => parent.children.push(node),
                    None => result = Some(node),
                }
            }
            Tok::Atom(a) => {
                let Some(parent) = stack.last_mut() else {
                    return Err(DslError::Syntax {
                        pos,
                        msg: "trailing input after formula".into(),
                    });
                };
                if Op::from_name(a).is_some() {
                    return Err(DslError::Syntax {
                        pos,
                        msg: format!("operator `{a}` used as an operand"),
                    });
                }
                nodes += 1;
                parent.children.push(leaf(a, vocabulary)?);
            }
        }
        if nodes > MAX_NODES {
            return Err(DslError::TooLarge(format!("more than {MAX_NODES} nodes")));
        }
        i += 1;
    }

    result.ok_or_else(|| DslError::Syntax {
        pos: text.len(),
        msg: "unclosed parenthesis".into(),
    })
}
