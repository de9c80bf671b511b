//! `scmbench` command line: every stage reads and writes files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use scmbench_core::generator::audit::{audit_local, audit_pairs};
use scmbench_core::generator::{AltTask, GeneratorConfig};
use scmbench_core::harness::ingest::{ingest_text, Shape};
use scmbench_core::harness::io::{self, FormatError};
use scmbench_core::harness::pipeline::{self as pl, Budgets, Method, PipelineError};
use scmbench_core::harness::prompt::{render_alt_prompt, render_prompt};
use scmbench_core::harness::report::{check_identities, report};
use scmbench_core::harness::score::RunResult;
use scmbench_core::harness::submission::Submission;
use scmbench_core::worlds::ProblemRecord;

#[derive(Debug, Parser)]
#[command(name = "scmbench", version, about = "Executable Boolean SCM induction benchmark")]
struct Cli {
    /// Master seed for generation and bootstrap resampling.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Generator configuration (TOML); missing keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BudgetArg {
    Desk,
    Full,
}

impl BudgetArg {
    fn budgets(self) -> Budgets {
        match self {
            BudgetArg::Desk => Budgets::desk(),
            BudgetArg::Full => Budgets::full(),
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Symbolic,
    Hybrid,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Symbolic => Method::Symbolic,
            MethodArg::Hybrid => Method::Hybrid,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a pool of core problems plus a manifest.
    Generate {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Disclosure variants, extra-worlds and counterexample levels, and
    /// alternative-SCM tasks.
    Derive {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = BudgetArg::Desk)]
        budget: BudgetArg,
    },
    /// Local and pairwise ambiguity audits.
    Audit {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// One prompt file per record and task.
    RenderPrompt {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        alt_tasks: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract submissions from response text files named like the prompts.
    Ingest {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        alt_tasks: Option<PathBuf>,
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        system: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a baseline solver.
    Solve {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        alt_tasks: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = BudgetArg::Desk)]
        budget: BudgetArg,
    },
    /// Score submissions into run results.
    Score {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        alt_tasks: Option<PathBuf>,
        #[arg(long, required = true, num_args = 1..)]
        submissions: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Fail unless every non-failure submission is valid and train-exact.
        #[arg(long)]
        require_sound: bool,
    },
    /// Aggregate tables and paired deltas.
    Report {
        #[arg(long, required = true, num_args = 1..)]
        results: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
    },
    /// generate, derive, solve with both methods, score and report.
    Run {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = BudgetArg::Desk)]
        budget: BudgetArg,
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
    },
}

enum Failure {
    Validation(anyhow::Error),
    Internal(anyhow::Error),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Failure {
        if e.is_validation() {
            Failure::Validation(e.into())
        } else {
            Failure::Internal(e.into())
        }
    }
}

fn invalid(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Validation(e.into())
}

fn internal(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Internal(e.into())
}

type Outcome = Result<(), Failure>;

fn load_config(path: Option<&Path>) -> Result<GeneratorConfig, Failure> {
    let Some(path) = path else {
        return Ok(GeneratorConfig::default());
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("--config {}", path.display()))
        .map_err(invalid)?;
    let cfg: GeneratorConfig = toml::from_str(&text)
        .with_context(|| format!("--config {}", path.display()))
        .map_err(invalid)?;
    cfg.check()
        .map_err(|e| invalid(anyhow!("--config {}: {e}", path.display())))?;
    Ok(cfg)
}

fn read<T: serde::de::DeserializeOwned>(path: &Path, kind: &str) -> Result<Vec<T>, Failure> {
    io::read_jsonl(path, kind).map_err(invalid)
}

fn write<T: serde::Serialize>(path: &Path, kind: &str, items: &[T]) -> Outcome {
    io::write_jsonl(path, kind, items).map_err(|e| match e {
        FormatError::Io { .. } => internal(e),
        e => invalid(e),
    })
}

fn read_tasks(path: Option<&Path>) -> Result<Vec<AltTask>, Failure> {
    path.map_or(Ok(Vec::new()), |p| read(p, io::ALT_TASK))
}

/// File-system safe stem for a task key.
fn stem(task: &str) -> String {
    task.replace(':', "__")
}

fn generate(cfg: &GeneratorConfig, seed: u64, count: usize, out: &Path) -> Outcome {
    let (records, manifest) = pl::generate(cfg, seed, count).map_err(|e| Failure::from(PipelineError::from(e)))?;
    write(&out.join(pl::RECORDS), io::RECORD, &records)?;
    pl::write_manifest(&out.join(pl::MANIFEST), &manifest)?;
    println!("generated {} records into {}", records.len(), out.display());
    Ok(())
}

fn derive(cfg: &GeneratorConfig, records: &Path, out: &Path, budgets: &Budgets) -> Outcome {
    let core: Vec<ProblemRecord> = read(records, io::RECORD)?;
    let d = pl::derive(&core, cfg, budgets);
    write(&out.join(pl::VARIANTS), io::RECORD, &d.records)?;
    write(&out.join(pl::ALT_TASKS), io::ALT_TASK, &d.alt_tasks)?;
    write(&out.join(pl::LADDER), io::LADDER, &d.ladder)?;
    println!(
        "derived {} records and {} alternative-SCM tasks into {}",
        d.records.len(),
        d.alt_tasks.len(),
        out.display()
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct AuditRow {
    key: String,
    local: scmbench_core::generator::meta::AuditResult,
    pairs: scmbench_core::generator::meta::AuditResult,
}

fn audit(cfg: &GeneratorConfig, records: &Path, out: &Path) -> Outcome {
    let rs: Vec<ProblemRecord> = read(records, io::RECORD)?;
    let rows: Vec<AuditRow> = rs
        .par_iter()
        .map(|r| AuditRow {
            key: r.key(),
            local: audit_local(r, cfg),
            pairs: audit_pairs(r, cfg),
        })
        .collect();
    write(out, "audit", &rows)?;
    let flagged = rows.iter().filter(|r| r.local.total() + r.pairs.total() > 0).count();
    println!("audited {} records, {} with alternatives", rows.len(), flagged);
    Ok(())
}

fn render(records: &Path, tasks: Option<&Path>, out: &Path) -> Outcome {
    let rs: Vec<ProblemRecord> = read(records, io::RECORD)?;
    let ts = read_tasks(tasks)?;
    fs::create_dir_all(out).map_err(internal)?;
    for r in &rs {
        fs::write(out.join(format!("{}.txt", stem(&r.key()))), render_prompt(r)).map_err(internal)?;
    }
    for t in &ts {
        fs::write(out.join(format!("{}.txt", stem(&t.id))), render_alt_prompt(t)).map_err(internal)?;
    }
    println!("rendered {} prompts into {}", rs.len() + ts.len(), out.display());
    Ok(())
}

fn ingest(records: &Path, tasks: Option<&Path>, responses: &Path, system: &str, out: &Path) -> Outcome {
    let rs: Vec<ProblemRecord> = read(records, io::RECORD)?;
    let ts = read_tasks(tasks)?;
    let mut jobs: Vec<(String, &ProblemRecord, Shape)> =
        rs.iter().map(|r| (r.key(), r, Shape::for_record(r))).collect();
    jobs.extend(ts.iter().map(|t| (t.id.clone(), &t.record, Shape::alternative(&t.record))));
    let mut subs = Vec::new();
    let mut missing = 0;
    for (key, record, shape) in &jobs {
        let path = responses.join(format!("{}.txt", stem(key)));
        let Ok(text) = fs::read_to_string(&path) else {
            missing += 1;
            continue;
        };
        match ingest_text(&text, shape, record, key, system) {
            Ok(got) => subs.push(got.submission),
            Err(e) => subs.push(Submission {
                task: key.clone(),
                system: system.to_owned(),
                answer: Default::default(),
                strict: false,
                failed: true,
                schema_error: Some(e.to_string()),
            }),
        }
    }
    write(out, io::SUBMISSION, &subs)?;
    println!("ingested {} responses ({missing} missing)", subs.len());
    Ok(())
}

fn solve(method: Method, records: &Path, tasks: Option<&Path>, out: &Path, budgets: &Budgets) -> Outcome {
    let rs: Vec<ProblemRecord> = read(records, io::RECORD)?;
    let ts = read_tasks(tasks)?;
    let subs = pl::solve_all(&rs, &ts, method, budgets);
    write(out, io::SUBMISSION, &subs)?;
    let failed = subs.iter().filter(|s| s.failed).count();
    println!("{}: {} submissions, {failed} failures", method.name(), subs.len());
    Ok(())
}

fn score(records: &Path, tasks: Option<&Path>, submissions: &[PathBuf], out: &Path, require_sound: bool) -> Outcome {
    let rs: Vec<ProblemRecord> = read(records, io::RECORD)?;
    let ts = read_tasks(tasks)?;
    let mut subs: Vec<Submission> = Vec::new();
    for p in submissions {
        subs.extend(read::<Submission>(p, io::SUBMISSION)?);
    }
    let results = pl::score_all(&rs, &ts, &subs)?;
    write(out, io::RESULT, &results)?;
    if require_sound {
        for (s, r) in subs.iter().zip(&results) {
            let ok = match &r.alt {
                Some(a) => a.alt_valid && a.alt_train_exact,
                None => r.replay.is_valid() && r.replay.train_exact,
            };
            if !s.failed && !ok {
                return Err(invalid(anyhow!("unsound submission for {} from {}", s.task, s.system)));
            }
        }
    }
    let exact = results.iter().filter(|r| r.replay.train_exact).count();
    println!("scored {} submissions, {exact} train-exact", results.len());
    Ok(())
}

fn write_report(results: &[RunResult], out: &Path, resamples: usize, seed: u64) -> Outcome {
    let rep = report(results, resamples, seed);
    check_identities(results, &rep).map_err(|e| invalid(anyhow!("metric identity violated: {e}")))?;
    pl::write_report(out, &rep)?;
    println!("report: {} rows, {} deltas in {}", rep.rows.len(), rep.deltas.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(invalid(anyhow!("--jobs must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(internal)?;
    }
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Generate { count, out } => generate(&cfg, cli.seed, count, &out),
        Command::Derive { records, out, budget } => derive(&cfg, &records, &out, &budget.budgets()),
        Command::Audit { records, out } => audit(&cfg, &records, &out),
        Command::RenderPrompt { records, alt_tasks, out } => render(&records, alt_tasks.as_deref(), &out),
        Command::Ingest {
            records,
            alt_tasks,
            responses,
            system,
            out,
        } => ingest(&records, alt_tasks.as_deref(), &responses, &system, &out),
        Command::Solve {
            method,
            records,
            alt_tasks,
            out,
            budget,
        } => solve(method.into(), &records, alt_tasks.as_deref(), &out, &budget.budgets()),
        Command::Score {
            records,
            alt_tasks,
            submissions,
            out,
            require_sound,
        } => score(&records, alt_tasks.as_deref(), &submissions, &out, require_sound),
        Command::Report { results, out, resamples } => {
            let mut all: Vec<RunResult> = Vec::new();
            for p in &results {
                all.extend(read::<RunResult>(p, io::RESULT)?);
            }
            write_report(&all, &out, resamples, cli.seed)
        }
        Command::Run {
            count,
            out,
            budget,
            resamples,
        } => {
            let rep = pl::run_pipeline(&out, &cfg, cli.seed, count, &budget.budgets(), resamples)?;
            println!("pipeline: {} report rows in {}", rep.rows.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(1)
        }
    }
}
