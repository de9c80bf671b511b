//! Answer objects in the task output schemas.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Submitted experiment for an alternative-SCM answer.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Experiment {
    pub mode: String,
    pub targets: BTreeMap<String, u8>,
}

/// The schema-shaped object a system returns. Mechanism texts are kept
/// exactly as submitted.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roots: Option<Vec<String>>,
    pub mechanisms: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<BTreeMap<String, u8>>,
}

impl Answer {
    pub fn mechanisms(mechanisms: BTreeMap<String, String>) -> Answer {
        Answer {
            mechanisms,
            ..Answer::default()
        }
    }
}

/// One answer to one task, as stored in submission files.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    /// Record key or alternative-task id.
    pub task: String,
    pub system: String,
    pub answer: Answer,
    /// The source text was exactly one bare JSON object.
    #[serde(default = "yes")]
    pub strict: bool,
    /// Set by solvers that gave up; the answer is still schema-shaped.
    #[serde(default)]
    pub failed: bool,
    /// Why the extracted object does not fit the answer schema.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_error: Option<String>,
}

fn yes() -> bool {
    true
}
