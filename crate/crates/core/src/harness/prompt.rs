//! Prompt text for induction and alternative-SCM tasks. Only training worlds
//! are rendered.

use std::fmt::Write;

use crate::generator::AltTask;
use crate::scm::{Disclosure, Setting};
use crate::worlds::{Mode, ProblemRecord, World};

const SYSTEM: &str = "You are solving a formal causal mechanism induction task
over finite interventional worlds.
Treat the input as machine-checkable structure.
Output exactly one JSON object matching the required schema.";

const DSL: &str = "expr ::= VAR
       | (not expr)
       | (and expr expr ...)
       | (or expr expr ...)
       | (xor expr expr ...)
       | (iff expr expr ...)
Constants are disallowed. Operators and variable names must match the metadata exactly.";

const SCORING: &str = "For each world and row, intervened variables are clamped to their intervention values, non-intervened roots are copied from the row, and non-intervened endogenous variables are evaluated in topological order from the submitted mechanisms. Only non-intervened endogenous cells are scored. The same mechanism map is replayed on all training and held-out worlds.";

pub const TASK_SCM: &str = "CIND_A_SCM";
pub const TASK_ROOTS: &str = "CIND_A_SCM_ROOTS";
pub const TASK_ALT: &str = "CIND_A_ALT_SCM";

pub fn task_name(setting: Setting) -> &'static str {
    match setting {
        Setting::HiddenRoots => TASK_ROOTS,
        _ => TASK_SCM,
    }
}

fn join(xs: &[String]) -> String {
    xs.join(", ")
}

fn metadata(out: &mut String, task: &str, record: &ProblemRecord) {
    let gold = &record.gold;
    writeln!(out, "Task: {task}").unwrap();
    writeln!(out, "ObservedVariables: {}", join(gold.observed())).unwrap();
    if let Some((roots, endo)) = record.disclosed_partition() {
        writeln!(out, "RootVariables: {}", join(roots)).unwrap();
        writeln!(out, "EndogenousVariables: {}", join(endo)).unwrap();
    }
    match &record.disclosure {
        Disclosure::Ordered { order } => writeln!(out, "TopologicalOrder: {}", join(order)).unwrap(),
        Disclosure::BlockOrder { blocks } => {
            let parts: Vec<String> = blocks.iter().map(|b| format!("[{}]", join(b))).collect();
            writeln!(out, "BlockOrder: {}", parts.join(" < ")).unwrap();
        }
        Disclosure::HiddenOrder | Disclosure::HiddenRoots => {}
    }
    writeln!(out, "AllowedOperators: not, and, or, xor, iff").unwrap();
    writeln!(out, "InterventionModes: none, hard_constant, hard_assigned").unwrap();
}

fn validity(out: &mut String, record: &ProblemRecord) {
    out.push_str("Validity conditions:\n");
    match &record.disclosure {
        Disclosure::HiddenRoots => {
            out.push_str("- Predict the root set; every observed variable not listed as a root needs exactly one mechanism.\n");
        }
        _ => out.push_str("- Give exactly one mechanism for every endogenous variable and none for roots.\n"),
    }
    match &record.disclosure {
        Disclosure::Ordered { .. } => out.push_str("- A mechanism may only use variables earlier in the topological order.\n"),
        Disclosure::BlockOrder { .. } => {
            out.push_str("- A mechanism may use variables from earlier blocks or its own block.\n")
        }
        _ => {}
    }
    out.push_str("- Mechanisms must not reference their own variable, and the induced graph must be acyclic.\n");
}

fn json_list(xs: &[String]) -> String {
    serde_json::to_string(xs).expect("strings")
}

pub fn render_world(out: &mut String, observed: &[String], w: &World) {
    let iv = &w.intervention;
    writeln!(out, "WorldId: {}", w.id).unwrap();
    writeln!(out, "InterventionMode: {}", iv.mode().name()).unwrap();
    match iv.mode() {
        Mode::None => {
            out.push_str("InterventionTargetsAssigned: []\n");
            out.push_str("InterventionTargetsConstant: {}\n");
        }
        Mode::HardConstant => {
            let body: Vec<String> = iv
                .constant
                .iter()
                .map(|(k, v)| format!("{}: {}", serde_json::to_string(k).unwrap(), *v as u8))
                .collect();
            writeln!(out, "InterventionTargetsConstant: {{{}}}", body.join(", ")).unwrap();
        }
        Mode::HardAssigned => {
            let keys: Vec<String> = iv.assigned.keys().cloned().collect();
            writeln!(out, "InterventionTargetsAssigned: {}", json_list(&keys)).unwrap();
        }
    }
    out.push_str("Rows:\n");
    for r in &w.rows {
        let cells: Vec<String> = observed
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{v}={}", r.get(i) as u8))
            .collect();
        writeln!(out, "- {}: {}", r.unit, cells.join(" ")).unwrap();
    }
}

fn worlds(out: &mut String, record: &ProblemRecord) {
    out.push_str("Training worlds:\n\n");
    for (i, w) in record.train.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        render_world(out, record.observed(), w);
    }
}

fn schema_line(record: &ProblemRecord) -> String {
    match record.setting() {
        Setting::HiddenRoots => {
            r#"{"roots":["<root variable>", "..."],"mechanisms":{"<endogenous variable>":"..."}}"#.to_owned()
        }
        _ => {
            let body: Vec<String> = record
                .gold
                .endogenous()
                .iter()
                .map(|v| format!("{}:\"...\"", serde_json::to_string(v).unwrap()))
                .collect();
            format!("{{\"mechanisms\":{{{}}}}}", body.join(","))
        }
    }
}

fn example_line(record: &ProblemRecord) -> String {
    let obs = record.observed();
    let (a, b) = (&obs[0], &obs[obs.len().min(2) - 1]);
    match record.setting() {
        Setting::HiddenRoots => format!(r#"{{"roots":["{a}"],"mechanisms":{{"{b}":"(not {a})"}}}}"#),
        _ => format!(r#"{{"mechanisms":{{"{b}":"(not {a})"}}}}"#),
    }
}

fn common_head(out: &mut String, task: &str, record: &ProblemRecord) {
    out.push_str(SYSTEM);
    out.push_str("\n\n");
    metadata(out, task, record);
    out.push('\n');
    out.push_str("DSL:\n");
    out.push_str(DSL);
    out.push_str("\n\nScoring:\n");
    out.push_str(SCORING);
    if record.setting() == Setting::HiddenRoots {
        out.push_str(" Roots and endogenous variables are taken from your predicted root set.");
    }
    out.push_str("\n\n");
    validity(out, record);
    out.push('\n');
}

/// Deterministic prompt for an induction record.
pub fn render_prompt(record: &ProblemRecord) -> String {
    let mut out = String::new();
    common_head(&mut out, task_name(record.setting()), record);
    worlds(&mut out, record);
    out.push('\n');
    out.push_str("Formatting example only (not a solution): ");
    out.push_str(&example_line(record));
    out.push('\n');
    out.push_str("Output schema: ");
    out.push_str(&schema_line(record));
    out.push('\n');
    out
}

/// Prompt for an alternative-SCM task: the reference SCM is supplied and
/// the answer adds a single-variable experiment and a witness.
pub fn render_alt_prompt(task: &AltTask) -> String {
    let record = &task.record;
    let mut out = String::new();
    common_head(&mut out, TASK_ALT, record);
    out.push_str("Reference SCM (valid and exact on every training world):\n");
    for (v, m) in task.reference.rendered() {
        writeln!(out, "{v} = {m}").unwrap();
    }
    out.push_str("\nGoal: return a different SCM that is also exact on every training world and semantically distinct from the reference, plus one hard intervention on a single variable and a witness assignment of the roots under which the reference and your SCM disagree on some non-intervened cell.\n\n");
    worlds(&mut out, record);
    out.push('\n');
    let endo: Vec<String> = record
        .gold
        .endogenous()
        .iter()
        .map(|v| format!("{}:\"...\"", serde_json::to_string(v).unwrap()))
        .collect();
    let roots: Vec<String> = record
        .gold
        .roots()
        .iter()
        .map(|r| format!("{}:0", serde_json::to_string(r).unwrap()))
        .collect();
    writeln!(
        out,
        "Output schema: {{\"mechanisms\":{{{}}},\"experiment\":{{\"mode\":\"hard_do\",\"targets\":{{\"<variable>\":1}}}},\"witness\":{{{}}}}}",
        endo.join(","),
        roots.join(",")
    )
    .unwrap();
    out
}
