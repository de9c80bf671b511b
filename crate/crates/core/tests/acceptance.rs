mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use scmbench_core::dsl::{parse, semantically_equal};
use scmbench_core::fixtures::{self, record_with, twin_alt_task, twin_alternative_mechanisms};
use scmbench_core::generator::{derive_variants, generate_pool, GeneratorConfig};
use scmbench_core::harness::io;
use scmbench_core::harness::pipeline::{self, derive, run_pipeline, solve_record, Budgets, Method};
use scmbench_core::harness::report::{check_identities, report};
use scmbench_core::harness::score::{score_alt, score_record, RunResult};
use scmbench_core::harness::submission::{Answer, Experiment, Submission};
use scmbench_core::metrics::{check_sanity, score_scm, AggregateCell};
use scmbench_core::scm::{Disclosure, Scm, Setting};
use scmbench_core::solvers::partial_table;
use scmbench_core::worlds::{replay, simulate_world, Intervention, ProblemRecord, World};

type Outcome = Result<String, String>;

fn gold_self_replay() -> Outcome {
    let pool = generate_pool(&GeneratorConfig::default(), 1, 100).map_err(|e| e.to_string())?;
    let bad: Vec<&str> = pool
        .iter()
        .filter(|r| {
            let rep = score_scm(r, &r.gold);
            !(rep.train_exact && rep.heldout_exact)
        })
        .map(|r| r.id.as_str())
        .collect();
    if bad.is_empty() {
        Ok(format!("{} records, gold TrainExact and HeldoutExact on all", pool.len()))
    } else {
        Err(format!("gold not exact on {bad:?}"))
    }
}

fn bits_of(observed: &[String], m: &BTreeMap<String, bool>) -> u64 {
    observed.iter().enumerate().filter(|(_, v)| m[*v]).fold(0, |acc, (i, _)| acc | 1 << i)
}

fn mismatch_names(observed: &[String], bits: u64) -> Vec<String> {
    observed
        .iter()
        .enumerate()
        .filter(|(j, _)| bits >> j & 1 == 1)
        .map(|(_, v)| v.clone())
        .collect()
}

fn semantics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut cells = 0usize;
    for case in 0..500 {
        let n = rng.gen_range(2..=6);
        let roots = rng.gen_range(1..n);
        let (scm, texts) = random_scm(&mut rng, n, roots);
        let rows = rng.gen_range(1..=8);
        let w = random_world(&mut rng, scm.observed(), rows, "w");
        let got = replay(&scm, &w);
        let (want, bad) = oracle_replay(scm.observed(), scm.roots(), &texts, &w);
        for (i, r) in want.iter().enumerate() {
            cells += n;
            let names = mismatch_names(scm.observed(), got.mismatches[i]);
            if got.rows[i] != bits_of(scm.observed(), r) || names != bad[i].iter().cloned().collect::<Vec<_>>() {
                return Err(format!("fixture {case} row {i} differs"));
            }
        }
    }
    Ok(format!("500 fixtures, {cells} cells equal"))
}

fn pointwise(record: &ProblemRecord, cand: &Scm) -> bool {
    cand.endogenous().iter().all(|v| {
        let e = cand.mechanism(v).unwrap();
        let parents: Vec<String> = e.variables().into_iter().map(str::to_owned).collect();
        let table = e.truth_table(&parents).unwrap();
        let bits = table
            .outputs
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .fold(0u64, |acc, (i, _)| acc | 1 << i);
        partial_table(record, v, &parents).is_some_and(|p| p.accepts(bits))
    })
}

fn pointwise_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut fits, mut misses) = (0, 0);
    for case in 0..200 {
        let n = rng.gen_range(3..=6);
        let roots = rng.gen_range(1..n - 1);
        let (gold, texts) = random_scm(&mut rng, n, roots);
        let ivs: Vec<Intervention> = (0..3)
            .map(|_| random_intervention(&mut rng, gold.observed(), 1 << gold.roots().len()))
            .collect();
        let record = record_with(gold.clone(), Disclosure::HiddenOrder, &ivs, 1);
        let endo = gold.endogenous();
        let v = endo[rng.gen_range(0..endo.len())].clone();
        let others: Vec<String> = gold.observed().iter().filter(|u| **u != v).cloned().collect();
        let text = random_formula(&mut rng, &others, 2);
        let mut cands = vec![(gold.clone(), texts.clone())];
        if let Ok(m) = gold.with_mechanism(&v, parse(&text, gold.observed()).unwrap()) {
            let mut t = texts.clone();
            t.insert(v, text);
            cands.push((m, t));
        }
        for (cand, ctexts) in &cands {
            let exact = score_scm(&record, cand).train_exact;
            let reference = pointwise_fits(record.observed(), ctexts, &record.train);
            if exact != reference || exact != pointwise(&record, cand) {
                return Err(format!("fixture {case}: replay {exact}, reference {reference}"));
            }
            if exact {
                fits += 1;
            } else {
                misses += 1;
            }
        }
    }
    Ok(format!("200 fixtures agree ({fits} fitting, {misses} non-fitting candidates)"))
}

fn metric_sanity(results: &[RunResult]) -> Outcome {
    for r in results {
        check_sanity(&r.replay).map_err(|e| format!("{}/{}: {e}", r.task, r.system))?;
    }
    let rep = report(results, 200, 0);
    check_identities(results, &rep)?;
    Ok(format!("{} scored submissions, {} report rows", results.len(), rep.rows.len()))
}

fn truth(pairs: &[(&str, bool)]) -> BTreeMap<String, bool> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn eval(text: &str, a: &BTreeMap<String, bool>) -> bool {
    parse(text, &fixtures::xs(8)).unwrap().evaluate(a).unwrap()
}

/// Gold with roots X1, X4, X7, where the training regimes never reach the
/// parent assignments on which the submitted X5 differs.
fn corner_item() -> (ProblemRecord, Scm) {
    let x = fixtures::xs(7);
    let gold_x5 = "(iff (and X3 X6) (or X4 X7))";
    let sub_x5 = "(or (and X3 (or X4 (iff X6 X7))) (and X6 (not (or X3 X4 X7))))";
    let mechs = |x5| {
        vec![
            ("X2", "(xor X1 X7)"),
            ("X3", "(or X1 X4)"),
            ("X6", "(or (not X1) X4)"),
            ("X5", x5),
        ]
    };
    let gold = fixtures::scm(&x, &["X1", "X4", "X7"], &mechs(gold_x5));
    let sub = fixtures::scm(&x, &["X1", "X4", "X7"], &mechs(sub_x5));
    let c = |pairs: &[(&str, bool)]| Intervention::constant(truth(pairs));
    let train = [Intervention::none(), c(&[("X7", true)]), c(&[("X2", false)])];
    let heldout = [
        c(&[("X7", false)]),
        c(&[("X2", true)]),
        c(&[("X1", true)]),
        c(&[("X3", false), ("X6", false)]),
    ];
    let units = fixtures::pattern_units(gold.roots(), 1);
    let env = scmbench_core::worlds::middle_env(gold.roots());
    let sim = |prefix: &str, ivs: &[Intervention]| -> Vec<World> {
        ivs.iter()
            .enumerate()
            .map(|(i, iv)| simulate_world(format!("{prefix}_{i:02}"), &gold, &units, &env, iv).unwrap())
            .collect()
    };
    let record = ProblemRecord::from_parts(
        "corner",
        gold.clone(),
        Disclosure::HiddenOrder,
        units.clone(),
        sim("train", &train),
        sim("heldout", &heldout),
    );
    (record, sub)
}

fn golden_vectors() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |what: &str, ok: bool| {
        if !ok {
            failures.push(what.to_owned());
        }
    };

    let a = truth(&[("X1", true), ("X3", true), ("X5", false), ("X7", true), ("X8", true)]);
    check("downstream surrogate gold X2=0", !eval("(xor X5 (and (iff X7 X8) (xor X3 X7)))", &a));
    check("downstream surrogate answer X2=1", eval("(or (xor X1 X5 X7 X8) (and X5 X8 (not X1)))", &a));

    let a = truth(&[("X3", false), ("X4", false), ("X6", false), ("X7", false)]);
    check("corner gold X5=1", eval("(iff (and X3 X6) (or X4 X7))", &a));
    check(
        "corner answer X5=0",
        !eval("(or (and X3 (or X4 (iff X6 X7))) (and X6 (not (or X3 X4 X7))))", &a),
    );
    let (record, sub) = corner_item();
    let rep = score_scm(&record, &sub);
    check("corner TrainWorldExact 1.000", rep.train_world_exact.is_one());
    check(
        "corner HeldoutWorldExact 0.750",
        (rep.heldout_world_exact.num, rep.heldout_world_exact.den) == (3, 4),
    );

    let a = truth(&[("X1", true), ("X4", true), ("X6", true), ("X7", false)]);
    check("short formula gold X2=0", !eval("(xor X1 X4 (and X4 (xor X1 X4 X7)))", &a));
    check("short formula answer X2=1", eval("(or X6 X7)", &a));

    let x = fixtures::xs(8);
    let gold = parse("(xor (and X5 X7) (or X4 X6))", &x).unwrap();
    let long = parse(
        "(or (and X7 (not (or (and X5 X4) (and X5 X6) (not (or X5 X4 X6))))) (and (not X7) (or X4 X6)))",
        &x,
    )
    .unwrap();
    check(
        "long formula X3 differs from gold X3 at some assignment (truth tables are identical)",
        !semantically_equal(&gold, &long),
    );

    if failures.is_empty() {
        Ok("all evaluated cells match".into())
    } else {
        Err(failures.join("; "))
    }
}

fn solver_soundness() -> Outcome {
    let pool = generate_pool(&GeneratorConfig::default(), 6, 50).map_err(|e| e.to_string())?;
    let ordered: Vec<ProblemRecord> = pool
        .iter()
        .map(|r| derive_variants(r).into_iter().find(|v| v.setting() == Setting::Ordered).unwrap())
        .collect();
    let budgets = Budgets::desk();
    let mut parts = Vec::new();
    let mut ok = true;
    for method in Method::ALL {
        let mut solved = 0;
        for r in &ordered {
            let out = solve_record(r, method, &budgets);
            if out.submission.failed {
                continue;
            }
            let res = score_record(r, &out.submission);
            if !(res.replay.is_valid() && res.replay.train_exact) {
                return Err(format!("{} returned an unsound answer on {}", method.name(), r.id));
            }
            solved += 1;
        }
        let rate = solved as f64 / ordered.len() as f64;
        ok &= rate >= 0.90;
        parts.push(format!("{} {solved}/{} ({rate:.3})", method.name(), ordered.len()));
    }
    let msg = format!("sound; TrainExact rate {}", parts.join(", "));
    if ok {
        Ok(msg)
    } else {
        Err(format!("{msg} below 0.90"))
    }
}

fn support_ladder() -> Outcome {
    let cfg = GeneratorConfig::default();
    let pool = generate_pool(&cfg, 7, 30).map_err(|e| e.to_string())?;
    let ladder = derive(&pool, &cfg, &Budgets::desk()).ladder;
    let ordered: Vec<_> = ladder.iter().filter(|l| l.setting == Setting::Ordered.name()).collect();
    if ordered.len() != 30 {
        return Err(format!("{} ladder entries", ordered.len()));
    }
    let mean = |f: &dyn Fn(&pipeline::LadderStats) -> f64| ordered.iter().map(|l| f(l)).sum::<f64>() / 30.0;
    let (core, extra) = (mean(&|l| l.coverage_core), mean(&|l| l.coverage_extra));
    let mut errs = Vec::new();
    let bad_added: Vec<_> = ladder.iter().filter(|l| !(3..=4).contains(&l.added_worlds)).collect();
    if !bad_added.is_empty() {
        errs.push(format!("{} entries outside 3-4 added worlds", bad_added.len()));
    }
    if extra <= core {
        errs.push(format!("mean coverage {core:.4} -> {extra:.4} not increasing"));
    }
    let full = pool
        .iter()
        .filter(|r| ladder.iter().filter(|l| l.id == r.id).all(|l| l.coverage_cex == 1.0 && l.surviving_cex == 0))
        .count();
    if full != 30 {
        errs.push(format!("cex complete on {full}/30"));
    }
    let pooled: usize = ladder.iter().map(|l| l.pool).sum();
    let msg = format!("coverage {core:.4} -> {extra:.4} -> 1.0000 on {full}/30, {pooled} pooled alternatives, 0 surviving");
    if errs.is_empty() {
        Ok(msg)
    } else {
        Err(errs.join("; "))
    }
}

fn twin_submission(task: &str, mechanisms: BTreeMap<String, String>, targets: &[(&str, u8)]) -> Submission {
    Submission {
        task: task.into(),
        system: "acceptance".into(),
        answer: Answer {
            mechanisms,
            experiment: Some(Experiment {
                mode: "hard_do".into(),
                targets: targets.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            }),
            witness: Some([("X4", 1), ("X8", 0), ("X3", 1)].iter().map(|(k, v)| (k.to_string(), *v)).collect()),
            roots: None,
        },
        strict: true,
        failed: false,
        schema_error: None,
    }
}

fn alternative_scm() -> Outcome {
    let task = twin_alt_task();
    let joint = score_alt(&task, &twin_submission(&task.id, twin_alternative_mechanisms(), &[("X7", 1)]))
        .alt
        .unwrap();
    let mut rewrite = task.reference.rendered();
    rewrite.insert("X6".into(), "(xor X2 X1)".into());
    let rewrite = score_alt(&task, &twin_submission(&task.id, rewrite, &[("X7", 1)])).alt.unwrap();
    let two = score_alt(
        &task,
        &twin_submission(&task.id, twin_alternative_mechanisms(), &[("X7", 1), ("X1", 0)]),
    )
    .alt
    .unwrap();
    if joint.joint && !rewrite.distinct && !two.experiment_valid {
        Ok(format!(
            "joint success, PairDisagreementRate {:.3}; rewrite not distinct; two-target experiment invalid",
            joint.pair_disagreement_rate
        ))
    } else {
        Err(format!(
            "joint {}, rewrite distinct {}, two-target valid {}",
            joint.joint, rewrite.distinct, two.experiment_valid
        ))
    }
}

fn suppression() -> Outcome {
    let shown: Vec<String> = [(0, 0), (1, 3), (4, 6)]
        .iter()
        .map(|&(num, den)| AggregateCell { num, den }.display())
        .collect();
    if shown == ["–", "*", "0.667"] {
        Ok(format!("{shown:?}"))
    } else {
        Err(format!("{shown:?}"))
    }
}

fn same_files(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<_> = fs::read_dir(a)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    for n in &names {
        if fs::read(a.join(n)).ok() != fs::read(b.join(n)).ok() {
            return Err(format!("{} differs", n.to_string_lossy()));
        }
    }
    Ok(names.len())
}

fn determinism(results: &mut Vec<RunResult>) -> Outcome {
    let cfg = GeneratorConfig::default();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run_pipeline(d.path(), &cfg, 11, 6, &Budgets::desk(), 500).map_err(|e| e.to_string())?;
    }
    *results = io::read_jsonl(&dirs[0].path().join(pipeline::RESULTS), io::RESULT).map_err(|e| e.to_string())?;
    let n = same_files(dirs[0].path(), dirs[1].path())?;
    Ok(format!("{n} output files byte-identical"))
}

fn main() -> ExitCode {
    let mut results = Vec::new();
    let start = Instant::now();
    let pipeline_run = determinism(&mut results);
    let pipeline_secs = start.elapsed().as_secs_f64();
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome>)> = vec![
        ("gold self-replay", Box::new(gold_self_replay)),
        ("formal-semantics oracle", Box::new(semantics_oracle)),
        ("pointwise-fit equivalence", Box::new(pointwise_equivalence)),
        ("metric sanity", Box::new(move || metric_sanity(&results))),
        ("golden vectors", Box::new(golden_vectors)),
        ("solver soundness", Box::new(solver_soundness)),
        ("support-audit ladder", Box::new(support_ladder)),
        ("alternative SCM", Box::new(alternative_scm)),
        ("suppression display", Box::new(suppression)),
        ("determinism", Box::new(move || pipeline_run)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let mut secs = start.elapsed().as_secs_f64();
        if name == "determinism" {
            secs += pipeline_secs;
        }
        match outcome {
            Ok(msg) => println!("PASS {:>2} {name}: {msg} [{secs:.1}s]", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {msg} [{secs:.1}s]", i + 1)
            }
        }
    }
    println!("{} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
