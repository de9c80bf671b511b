use std::collections::BTreeMap;
use std::sync::OnceLock;

use super::ingest::{candidates, ingest_text, NoCandidateObject, Shape};
use super::io::{self, FormatError};
use super::pipeline::{score_all, PipelineError};
use super::prompt::{render_alt_prompt, render_prompt, TASK_ALT, TASK_ROOTS, TASK_SCM};
use super::report::{check_identities, report, ROW_HEADER};
use super::score::{score_alt, score_record, RunResult};
use super::submission::{Answer, Experiment, Submission};
use crate::fixtures::{record_with, scm, twin_alt_task, twin_alternative_mechanisms, xs};
use crate::generator::{derive_variants, generate_pool, GeneratorConfig};
use crate::metrics::score_submission;
use crate::scm::{Disclosure, Setting};
use crate::worlds::{Intervention, ProblemRecord};

fn generated() -> &'static Vec<ProblemRecord> {
    static POOL: OnceLock<Vec<ProblemRecord>> = OnceLock::new();
    POOL.get_or_init(|| generate_pool(&GeneratorConfig::default(), 21, 3).unwrap())
}

fn variant(s: Setting) -> ProblemRecord {
    derive_variants(&generated()[0])
        .into_iter()
        .find(|r| r.setting() == s)
        .unwrap()
}

fn without_timings(mut r: ProblemRecord) -> ProblemRecord {
    for a in &mut r.meta.audits {
        a.seconds = 0.0;
    }
    r
}

fn sub(task: &str, answer: Answer) -> Submission {
    Submission {
        task: task.into(),
        system: "test".into(),
        answer,
        strict: true,
        failed: false,
        schema_error: None,
    }
}

#[test]
fn record_round_trips_through_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    for r in generated() {
        io::save_record(&path, r).unwrap();
        let back = io::load_record(&path).unwrap();
        assert_eq!(back, without_timings(r.clone()));
        assert_eq!(io::to_jsonl(io::RECORD, &[back]), io::to_jsonl(io::RECORD, &[r.clone()]));
    }
}

#[test]
fn truncated_file_is_format_error() {
    let text = io::to_jsonl(io::RECORD, &generated()[..1]);
    let cut = &text[..text.len() / 2];
    match io::from_jsonl::<ProblemRecord>("r.jsonl", io::RECORD, cut) {
        Err(FormatError::Truncated { line, .. }) => assert_eq!(line, 1),
        other => panic!("expected truncation, got {other:?}"),
    }
}

#[test]
fn future_version_is_rejected() {
    let text = io::to_jsonl(io::RECORD, &generated()[..1]).replacen("\"version\":1", "\"version\":2", 1);
    match io::from_jsonl::<ProblemRecord>("r.jsonl", io::RECORD, &text) {
        Err(FormatError::Version { found, .. }) => assert_eq!(found, 2),
        other => panic!("expected version error, got {other:?}"),
    }
}

#[test]
fn wrong_kind_is_rejected() {
    let text = io::to_jsonl(io::RECORD, &generated()[..1]);
    assert!(matches!(
        io::from_jsonl::<ProblemRecord>("r.jsonl", io::SUBMISSION, &text),
        Err(FormatError::Kind { .. })
    ));
}

#[test]
fn bad_json_reports_location() {
    let err = io::from_jsonl::<ProblemRecord>("r.jsonl", io::RECORD, "\n{\"format\": x}\n").unwrap_err();
    match err {
        FormatError::Syntax { line, column, .. } => {
            assert_eq!(line, 2);
            assert!(column > 1);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn ordered_prompt_lists_topological_order() {
    let r = variant(Setting::Ordered);
    let p = render_prompt(&r);
    let Disclosure::Ordered { order } = &r.disclosure else { unreachable!() };
    assert!(p.contains(&format!("TopologicalOrder: {}\n", order.join(", "))));
    assert!(p.contains(&format!("Task: {TASK_SCM}\n")));
    assert!(p.contains("WorldId: train_00\n"));
    assert!(p.contains("RootVariables: "));
    assert_eq!(p, render_prompt(&r));
}

#[test]
fn hidden_order_prompt_has_partition_but_no_order() {
    let p = render_prompt(&variant(Setting::HiddenOrder));
    assert!(!p.contains("TopologicalOrder:"));
    assert!(!p.contains("BlockOrder:"));
    assert!(p.contains("RootVariables: "));
    assert!(p.contains("EndogenousVariables: "));
}

#[test]
fn block_and_hidden_roots_prompts() {
    let p = render_prompt(&variant(Setting::BlockOrder));
    assert!(p.lines().any(|l| l.starts_with("BlockOrder: [") && l.contains("] < [")));
    let p = render_prompt(&variant(Setting::HiddenRoots));
    assert!(p.contains(&format!("Task: {TASK_ROOTS}\n")));
    assert!(!p.contains("RootVariables:"));
    assert!(p.contains("\"roots\""));
}

#[test]
fn prompts_never_mention_heldout_worlds() {
    for core in generated() {
        for r in derive_variants(core) {
            let p = render_prompt(&r);
            for w in &r.heldout {
                assert!(!p.contains(&w.id), "{} leaks {}", r.key(), w.id);
            }
            assert!(!p.contains("heldout_"));
            let rows: usize = r.train.iter().map(|w| w.rows.len()).sum();
            assert_eq!(p.lines().filter(|l| l.starts_with("- u")).count(), rows);
        }
    }
}

#[test]
fn alt_prompt_shows_reference() {
    let task = twin_alt_task();
    let p = render_alt_prompt(&task);
    assert!(p.contains(&format!("Task: {TASK_ALT}\n")));
    assert!(p.contains("X6 = (xor X1 X2)\n"));
    assert!(p.contains("\"experiment\""));
}

fn hidden_shape(r: &ProblemRecord) -> Shape {
    Shape::for_record(r)
}

fn twin_record() -> ProblemRecord {
    twin_alt_task().record
}

const BARE: &str = r#"{"mechanisms":{"X1":"(xor X3 X8)","X2":"(xor X3 X8)","X5":"(iff X4 (xor (and X1 X6) (or X2 X4)))","X6":"(xor X1 X2)","X7":"(xor X1 X2)"}}"#;

#[test]
fn bare_object_is_strict() {
    let r = twin_record();
    let got = ingest_text(&format!("  {BARE}\n"), &hidden_shape(&r), &r, "k", "s").unwrap();
    assert!(got.submission.strict);
    assert!(got.submission.schema_error.is_none());
    assert_eq!(got.submission.answer.mechanisms["X6"], "(xor X1 X2)");
}

#[test]
fn wrapped_object_is_extracted_but_not_strict() {
    let r = twin_record();
    let text = format!("Here is my answer:\n```json\n{BARE}\n```\nDone.");
    let got = ingest_text(&text, &hidden_shape(&r), &r, "k", "s").unwrap();
    assert!(!got.submission.strict);
    assert_eq!(&text[got.span.0..got.span.1], BARE);
}

#[test]
fn task_shaped_object_wins_over_others() {
    let r = twin_record();
    let text = format!("{{\"note\":\"draft\",\"size\":[1,2,3,4,5,6,7,8,9]}} then {BARE}");
    let got = ingest_text(&text, &hidden_shape(&r), &r, "k", "s").unwrap();
    assert_eq!(got.candidates, 3);
    assert_eq!(got.submission.answer.mechanisms.len(), 5);
    assert_eq!(&text[got.span.0..got.span.1], BARE);
}

#[test]
fn executable_candidate_preferred_among_equal_shapes() {
    let r = twin_record();
    let broken = BARE.replace("(xor X3 X8)\",\"X2", "(xor X3 X9)\",\"X2");
    let text = format!("{broken}\n{BARE}");
    let got = ingest_text(&text, &hidden_shape(&r), &r, "k", "s").unwrap();
    assert_eq!(&text[got.span.0..got.span.1], BARE);
}

#[test]
fn formula_text_is_kept_verbatim() {
    let r = twin_record();
    let odd = BARE.replace("(xor X1 X2)\",\"X7", "( xor  X1\\tX2 )\",\"X7");
    let got = ingest_text(&odd, &hidden_shape(&r), &r, "k", "s").unwrap();
    assert_eq!(got.submission.answer.mechanisms["X6"], "( xor  X1\tX2 )");
}

#[test]
fn no_object_and_bad_schema() {
    let r = twin_record();
    assert_eq!(
        ingest_text("no json here", &hidden_shape(&r), &r, "k", "s").unwrap_err(),
        NoCandidateObject
    );
    let got = ingest_text(r#"{"mechanisms":{"X1":3}}"#, &hidden_shape(&r), &r, "k", "s").unwrap();
    assert!(got.submission.schema_error.is_some());
    let scored = score_record(&r, &got.submission);
    assert!(!scored.extracted);
    assert!(!scored.replay.is_valid());
}

#[test]
fn nested_objects_are_candidates() {
    let c = candidates(r#"{"a":{"b":1}}"#);
    assert_eq!(c.len(), 2);
}

fn twin_answer(mechanisms: BTreeMap<String, String>, targets: &[(&str, u8)], witness: &[(&str, u8)]) -> Answer {
    Answer {
        mechanisms,
        experiment: Some(Experiment {
            mode: "hard_do".into(),
            targets: targets.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }),
        witness: Some(witness.iter().map(|(k, v)| (k.to_string(), *v)).collect()),
        roots: None,
    }
}

const WITNESS: [(&str, u8); 3] = [("X4", 1), ("X8", 0), ("X3", 1)];

#[test]
fn twin_alternative_scores_joint_success() {
    let task = twin_alt_task();
    let a = twin_answer(twin_alternative_mechanisms(), &[("X7", 1)], &WITNESS);
    let r = score_alt(&task, &sub(&task.id, a.clone()));
    let f = r.alt.clone().unwrap();
    assert!(f.alt_valid && f.alt_train_exact && f.distinct);
    assert!(f.experiment_valid && f.witness_valid && f.separates);
    assert!(f.joint);
    assert_eq!(f.pair_disagreement_rate, 1.0);
    assert_eq!(f.cell_difference_rate, 0.25);
    assert_eq!(f.cell_difference_rate_vs_unintervened, 0.375);
    let general = score_submission(&task.record, None, &a.mechanisms).0;
    assert!(general.is_valid() && general.train_exact);
}

#[test]
fn rewrite_of_reference_is_not_distinct() {
    let task = twin_alt_task();
    let mut m = task.reference.rendered();
    m.insert("X6".into(), "(xor X2 X1)".into());
    let r = score_alt(&task, &sub(&task.id, twin_answer(m, &[("X7", 1)], &WITNESS)));
    let f = r.alt.unwrap();
    assert!(f.alt_train_exact);
    assert!(!f.distinct);
    assert!(!f.separates);
    assert!(!f.joint);
}

#[test]
fn two_target_experiment_is_invalid() {
    let task = twin_alt_task();
    let a = twin_answer(twin_alternative_mechanisms(), &[("X7", 1), ("X1", 0)], &WITNESS);
    let f = score_alt(&task, &sub(&task.id, a)).alt.unwrap();
    assert!(!f.experiment_valid);
    assert!(!f.joint);
}

#[test]
fn soft_mode_and_partial_witness_fail() {
    let task = twin_alt_task();
    let mut a = twin_answer(twin_alternative_mechanisms(), &[("X7", 1)], &WITNESS[..2]);
    let f = score_alt(&task, &sub(&task.id, a.clone())).alt.unwrap();
    assert!(!f.witness_valid && !f.joint);
    a.witness = Some(WITNESS.iter().map(|(k, v)| (k.to_string(), *v)).collect());
    a.experiment.as_mut().unwrap().mode = "soft".into();
    let f = score_alt(&task, &sub(&task.id, a)).alt.unwrap();
    assert!(!f.experiment_valid && !f.joint);
}

#[test]
fn non_separating_experiment_is_not_joint() {
    let task = twin_alt_task();
    let a = twin_answer(twin_alternative_mechanisms(), &[("X3", 1)], &WITNESS);
    let f = score_alt(&task, &sub(&task.id, a)).alt.unwrap();
    assert!(f.experiment_valid && f.witness_valid);
    assert!(!f.separates);
    assert_eq!(f.pair_disagreement_rate, 0.0);
    assert!(!f.joint);
}

fn copy_record() -> ProblemRecord {
    let gold = scm(&xs(3), &["X1", "X3"], &[("X2", "X1")]);
    record_with(gold, Disclosure::HiddenRoots, &[Intervention::none()], 2)
}

fn roots_answer(roots: &[&str], mechs: &[(&str, &str)]) -> Answer {
    Answer {
        roots: Some(roots.iter().map(|s| s.to_string()).collect()),
        mechanisms: mechs.iter().map(|(v, t)| (v.to_string(), t.to_string())).collect(),
        ..Answer::default()
    }
}

#[test]
fn hidden_roots_correct_answer() {
    let r = copy_record();
    let res = score_record(&r, &sub(&r.key(), roots_answer(&["X1", "X3"], &[("X2", "X1")])));
    assert_eq!(res.root_exact, Some(true));
    assert!(res.replay.train_exact);
    assert!(res.structure.is_some());
}

#[test]
fn hidden_roots_wrong_set_can_still_fit() {
    let r = copy_record();
    let res = score_record(&r, &sub(&r.key(), roots_answer(&["X2", "X3"], &[("X1", "X2")])));
    assert_eq!(res.root_exact, Some(false));
    assert!(res.replay.train_exact);
    assert!(res.structure.is_none());
}

#[test]
fn hidden_roots_unknown_root_fails_funnel() {
    let r = copy_record();
    let res = score_record(&r, &sub(&r.key(), roots_answer(&["X1", "X9"], &[("X2", "X1"), ("X3", "X1")])));
    assert_eq!(res.root_exact, Some(false));
    assert!(!res.replay.is_valid());
    let res = score_record(&r, &sub(&r.key(), Answer::default()));
    assert!(!res.replay.is_valid());
}

fn fixture_results() -> Vec<RunResult> {
    let gold = scm(&xs(3), &["X1"], &[("X2", "(not X1)"), ("X3", "(and X1 X2)")]);
    let ivs = [Intervention::none(), Intervention::constant(BTreeMap::from([("X2".into(), true)]))];
    let mut out = Vec::new();
    for (i, d) in [
        Disclosure::Ordered {
            order: xs(3),
        },
        Disclosure::HiddenOrder,
    ]
    .into_iter()
    .enumerate()
    {
        for id in ["a", "b", "c"] {
            let mut r = record_with(gold.clone(), d.clone(), &ivs, 1);
            r.id = id.into();
            let x3 = if i == 1 && id == "c" { "X1" } else { "(and X1 X2)" };
            let m = BTreeMap::from([("X2".to_owned(), "(not X1)".to_owned()), ("X3".to_owned(), x3.to_owned())]);
            out.push(score_record(&r, &sub(&r.key(), Answer::mechanisms(m))));
        }
    }
    out
}

#[test]
fn report_suppresses_small_conditionals() {
    let results = fixture_results();
    let rep = report(&results, 100, 1);
    assert_eq!(rep.rows.len(), 2);
    let csv = rep.rows_csv();
    let ordered = csv.lines().nth(1).unwrap();
    assert!(ordered.starts_with("ordered,core,test,3,"));
    let cols: Vec<&str> = ordered.split(',').collect();
    let idx = ROW_HEADER.split(',').position(|h| h == "HeldoutExact|TrainExact").unwrap();
    assert_eq!(cols[idx], "*");
    check_identities(&results, &rep).unwrap();
    for row in &rep.rows {
        assert!(row.heldout_exact.num <= row.train_exact.num);
    }
}

#[test]
fn report_deltas_on_matched_ids() {
    let rep = report(&fixture_results(), 200, 3);
    assert_eq!(rep.deltas.len(), 3);
    let d = &rep.deltas[0];
    assert_eq!((d.first.as_str(), d.second.as_str(), d.matched), ("ordered", "hidden_order", 3));
    assert!(d.result.lo <= d.result.mean_delta && d.result.mean_delta <= d.result.hi);
}

#[test]
fn report_is_input_order_independent() {
    let mut results = fixture_results();
    let a = report(&results, 100, 5);
    results.reverse();
    let b = report(&results, 100, 5);
    assert_eq!(a.rows_csv(), b.rows_csv());
    assert_eq!(a.deltas_csv(), b.deltas_csv());
}

#[test]
fn empty_report_is_header_only() {
    let rep = report(&[], 100, 0);
    assert_eq!(rep.rows_csv(), format!("{ROW_HEADER}\n"));
    assert!(rep.deltas.is_empty());
    check_identities(&[], &rep).unwrap();
}

#[test]
fn scoring_rejects_unknown_and_duplicate_tasks() {
    let r = copy_record();
    let s = sub("nope", Answer::default());
    assert!(matches!(
        score_all(std::slice::from_ref(&r), &[], &[s]),
        Err(PipelineError::UnknownTask(_))
    ));
    let s = sub(&r.key(), Answer::default());
    assert!(matches!(
        score_all(std::slice::from_ref(&r), &[], &[s.clone(), s]),
        Err(PipelineError::Duplicate { .. })
    ));
}
