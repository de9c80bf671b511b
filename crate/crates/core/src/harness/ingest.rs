//! Extraction of one task-shaped JSON object from free-form response text.

use std::collections::BTreeMap;

use serde_json::{Map, Value};
use thiserror::Error;

use super::submission::{Answer, Experiment, Submission};
use crate::scm::{validate_text, Setting};
use crate::worlds::ProblemRecord;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no JSON object found in the response")]
pub struct NoCandidateObject;

/// Answer schema a task expects.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Shape {
    Mechanisms { endogenous: Vec<String> },
    RootsAndMechanisms,
    Alternative { endogenous: Vec<String> },
}

impl Shape {
    pub fn for_record(record: &ProblemRecord) -> Shape {
        match record.setting() {
            Setting::HiddenRoots => Shape::RootsAndMechanisms,
            _ => Shape::Mechanisms {
                endogenous: record.gold.endogenous().to_vec(),
            },
        }
    }

    pub fn alternative(record: &ProblemRecord) -> Shape {
        Shape::Alternative {
            endogenous: record.gold.endogenous().to_vec(),
        }
    }

    fn keys(&self) -> &'static [&'static str] {
        match self {
            Shape::Mechanisms { .. } => &["mechanisms"],
            Shape::RootsAndMechanisms => &["roots", "mechanisms"],
            Shape::Alternative { .. } => &["mechanisms", "experiment", "witness"],
        }
    }
}

/// A JSON object found in the text with its byte span.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub value: Map<String, Value>,
    pub start: usize,
    pub end: usize,
}

/// Every parseable JSON object starting at some `{`, nested ones included.
pub fn candidates(text: &str) -> Vec<Candidate> {
    let mut out = Vec::new();
    for (i, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            out.push(Candidate {
                value: map,
                start: i,
                end: i + stream.byte_offset(),
            });
        }
    }
    out
}

fn node_count(v: &Value) -> usize {
    1 + match v {
        Value::Array(xs) => xs.iter().map(node_count).sum(),
        Value::Object(m) => m.values().map(node_count).sum(),
        _ => 0,
    }
}

fn string_map(v: Option<&Value>) -> Option<&Map<String, Value>> {
    v.and_then(Value::as_object).filter(|m| m.values().all(Value::is_string))
}

/// How closely an object matches the task schema.
pub fn schema_score(shape: &Shape, m: &Map<String, Value>) -> u32 {
    let mut score = 0;
    if let Some(mechs) = m.get("mechanisms").and_then(Value::as_object) {
        score += 4;
        if mechs.values().all(Value::is_string) {
            score += 2;
        }
        let required = match shape {
            Shape::Mechanisms { endogenous } | Shape::Alternative { endogenous } => Some(endogenous),
            Shape::RootsAndMechanisms => None,
        };
        if required.map_or(true, |r| mechs.len() == r.len() && r.iter().all(|v| mechs.contains_key(v))) {
            score += 2;
        }
    }
    match shape {
        Shape::RootsAndMechanisms => {
            if m.get("roots").and_then(Value::as_array).is_some_and(|a| a.iter().all(Value::is_string)) {
                score += 3;
            }
        }
        Shape::Alternative { .. } => {
            let exp = m.get("experiment").and_then(Value::as_object);
            if exp.is_some_and(|e| e.get("mode").is_some_and(Value::is_string) && e.get("targets").is_some_and(Value::is_object)) {
                score += 2;
            }
            if m.get("witness").is_some_and(Value::is_object) {
                score += 2;
            }
        }
        Shape::Mechanisms { .. } => {}
    }
    if m.keys().all(|k| shape.keys().contains(&k.as_str())) {
        score += 1;
    }
    score
}

/// Extractor order: schema score, node count and span length descending,
/// then earliest start.
pub fn rank(shape: &Shape, mut cands: Vec<Candidate>) -> Vec<Candidate> {
    cands.sort_by(|a, b| {
        let key = |c: &Candidate| {
            (
                schema_score(shape, &c.value),
                node_count(&Value::Object(c.value.clone())),
                c.end - c.start,
            )
        };
        key(b).cmp(&key(a)).then(a.start.cmp(&b.start))
    });
    cands
}

fn bit(v: &Value) -> Option<u8> {
    match v {
        Value::Number(n) => n.as_u64().filter(|x| *x <= 1).map(|x| x as u8),
        Value::Bool(b) => Some(*b as u8),
        _ => None,
    }
}

/// Answer fields from an object; mechanism strings are copied verbatim.
pub fn to_answer(shape: &Shape, m: &Map<String, Value>) -> Result<Answer, String> {
    let mechs = string_map(m.get("mechanisms")).ok_or("`mechanisms` must map variables to strings")?;
    let mechanisms: BTreeMap<String, String> = mechs
        .iter()
        .map(|(k, v)| (k.clone(), v.as_str().expect("string").to_owned()))
        .collect();
    let mut answer = Answer::mechanisms(mechanisms);
    match shape {
        Shape::Mechanisms { .. } => {}
        Shape::RootsAndMechanisms => {
            let roots = m
                .get("roots")
                .and_then(Value::as_array)
                .filter(|a| a.iter().all(Value::is_string))
                .ok_or("`roots` must be a list of variable names")?;
            answer.roots = Some(roots.iter().map(|r| r.as_str().expect("string").to_owned()).collect());
        }
        Shape::Alternative { .. } => {
            let exp = m
                .get("experiment")
                .and_then(Value::as_object)
                .ok_or("`experiment` must be an object")?;
            let mode = exp.get("mode").and_then(Value::as_str).ok_or("`experiment.mode` must be a string")?;
            let targets = exp
                .get("targets")
                .and_then(Value::as_object)
                .ok_or("`experiment.targets` must be an object")?;
            let targets = targets
                .iter()
                .map(|(k, v)| bit(v).map(|b| (k.clone(), b)))
                .collect::<Option<BTreeMap<_, _>>>()
                .ok_or("experiment values must be 0 or 1")?;
            answer.experiment = Some(Experiment {
                mode: mode.to_owned(),
                targets,
            });
            let witness = m.get("witness").and_then(Value::as_object).ok_or("`witness` must be an object")?;
            let witness = witness
                .iter()
                .map(|(k, v)| bit(v).map(|b| (k.clone(), b)))
                .collect::<Option<BTreeMap<_, _>>>()
                .ok_or("witness values must be 0 or 1")?;
            answer.witness = Some(witness);
        }
    }
    Ok(answer)
}

/// The extracted submission plus the extraction diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct Ingested {
    pub submission: Submission,
    pub span: (usize, usize),
    pub candidates: usize,
}

fn executable(record: &ProblemRecord, a: &Answer) -> bool {
    let roots = a.roots.as_deref().unwrap_or(record.gold.roots());
    validate_text(record.observed(), roots, &record.disclosure, &a.mechanisms)
        .0
        .is_valid()
}

/// Picks the first ranked candidate that is executable-valid, else the top
/// ranked one. `strict` holds when the whole text is that single object.
pub fn ingest_text(text: &str, shape: &Shape, record: &ProblemRecord, task: &str, system: &str) -> Result<Ingested, NoCandidateObject> {
    let ranked = rank(shape, candidates(text));
    let n = ranked.len();
    let chosen = ranked
        .iter()
        .find(|c| to_answer(shape, &c.value).is_ok_and(|a| executable(record, &a)))
        .or(ranked.first())
        .ok_or(NoCandidateObject)?;
    let trimmed = text.trim();
    let lead = text.len() - text.trim_start().len();
    let strict = chosen.start == lead && chosen.end == lead + trimmed.len();
    let (answer, schema_error) = match to_answer(shape, &chosen.value) {
        Ok(a) => (a, None),
        Err(e) => (Answer::default(), Some(e)),
    };
    Ok(Ingested {
        submission: Submission {
            task: task.to_owned(),
            system: system.to_owned(),
            answer,
            strict,
            failed: false,
            schema_error,
        },
        span: (chosen.start, chosen.end),
        candidates: n,
    })
}
