//! `policylr`: compile privacy policies into truth tables and analyse them.
//!
//! Exit codes: 0 on success, 1 when `comply` finds a violated rule, 2 on
//! any error or partial compilation failure.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use policylr_core::analyses::{comply, compare, diff_over_time, RuleSet};
use policylr_core::bench::{
    build_eval_set, evidence_recall, label_counts, load_annotations, load_cases, load_pairs,
    oracle_from_instances, run_eval, EvidenceRecall, Metrics, PolicyPipeline, ReferenceRow,
    Sampling, REFERENCE_ROW,
};
use policylr_core::compiler::{CompileReport, CompileSettings, Compiler, PolicySource, DEFAULT_K};
use policylr_core::corpus::{ingest, SourceFormat, DEFAULT_MAX_TOKENS};
use policylr_core::entailment::ChatBackend;
use policylr_core::logic::TruthTable;
use policylr_core::taxonomy::{generate_atomics, Taxonomy};
use policylr_core::translation::{LlmTranslator, TemplateTranslator, Translator};
use policylr_core::FORMAT_VERSION;

use config::{load_oracle, read, BackendArgs, ChatKind, TranslatorKind};

#[derive(Debug, Parser)]
#[command(name = "policylr", version, about = "Privacy policies as truth tables over taxonomy atomics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Enumerate the atomic formulae of a taxonomy.
    Atomics {
        #[arg(long)]
        taxonomy: PathBuf,
        /// Bind attribute subsets of this size instead of every attribute.
        #[arg(long)]
        cap: Option<NonZeroUsize>,
        #[arg(long)]
        json: bool,
    },
    /// Compile policy files into truth tables.
    Compile {
        #[arg(required = true)]
        policies: Vec<PathBuf>,
        #[arg(long)]
        taxonomy: PathBuf,
        #[arg(long)]
        cap: Option<NonZeroUsize>,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_TOKENS)]
        max_tokens: usize,
        #[arg(long)]
        out: PathBuf,
        /// Policy id for a single input file; defaults to the file stem.
        #[arg(long)]
        policy_id: Option<String>,
        /// Leave the compile timestamp out of tables for byte-stable output.
        #[arg(long)]
        no_timestamp: bool,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        json: bool,
    },
    /// Evaluate compliance rules against a truth table.
    Comply {
        #[arg(long)]
        rules: PathBuf,
        #[arg(long)]
        table: PathBuf,
        /// Validate rule names against this taxonomy.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Atomics whose valuation changed between two tables.
    Diff {
        #[arg(long)]
        old: PathBuf,
        #[arg(long)]
        new: PathBuf,
        /// Also write per-category counts as CSV.
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Place policies in a grid over two attributes of one category.
    Compare {
        /// Directory of `*.table.json` files.
        #[arg(long)]
        tables: PathBuf,
        #[arg(long)]
        category: String,
        #[arg(long)]
        row: String,
        #[arg(long)]
        col: String,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Score the entailment pipeline on a labelled case set.
    Bench {
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        /// Directory of `<policy_id>.txt` or `.html` files; defaults to
        /// `policies/` next to the cases file.
        #[arg(long)]
        policies: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_TOKENS)]
        max_tokens: usize,
        /// Sample this many positives (seeded) before building negatives.
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Judge with an oracle built from the labels themselves.
        #[arg(long)]
        ground_truth: bool,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        json: bool,
    },
}

/// Outcome of a command that succeeded in running.
enum Status {
    Ok,
    NonCompliant,
    Partial,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::NonCompliant) => ExitCode::from(1),
        Ok(Status::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_taxonomy(path: &Path) -> Result<Taxonomy> {
    Taxonomy::from_json_str(&read(path)?).with_context(|| format!("taxonomy {}", path.display()))
}

fn load_table(path: &Path) -> Result<TruthTable> {
    TruthTable::from_json(&read(path)?).with_context(|| format!("table {}", path.display()))
}

fn policy_id_of(path: &Path) -> Result<String> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .with_context(|| format!("no usable file name in {}", path.display()))?;
    Ok(stem.to_string())
}

fn run(command: Command) -> Result<Status> {
    match command {
        Command::Atomics { taxonomy, cap, json } => atomics(&taxonomy, cap, json),
        Command::Compile {
            policies,
            taxonomy,
            cap,
            k,
            max_tokens,
            out,
            policy_id,
            no_timestamp,
            backend,
            json,
        } => compile(CompileArgs {
            policies,
            taxonomy,
            cap,
            k,
            max_tokens,
            out,
            policy_id,
            no_timestamp,
            backend,
            json,
        }),
        Command::Comply {
            rules,
            table,
            taxonomy,
            json,
        } => comply_cmd(&rules, &table, taxonomy.as_deref(), json),
        Command::Diff { old, new, csv, json } => diff_cmd(&old, &new, csv.as_deref(), json),
        Command::Compare {
            tables,
            category,
            row,
            col,
            taxonomy,
            json,
        } => compare_cmd(&tables, &category, &row, &col, taxonomy.as_deref(), json),
        Command::Bench {
            cases,
            annotations,
            pairs,
            policies,
            k,
            max_tokens,
            sample,
            seed,
            ground_truth,
            backend,
            json,
        } => bench_cmd(BenchArgs {
            cases,
            annotations,
            pairs,
            policies,
            k,
            max_tokens,
            sampling: sample.map(|positives| Sampling { positives, seed }),
            ground_truth,
            backend,
            json,
        }),
    }
}

#[derive(Serialize)]
struct AtomicsOutput {
    format_version: u32,
    taxonomy_fingerprint: String,
    cap: Option<usize>,
    count: usize,
    atomics: Vec<String>,
}

fn atomics(path: &Path, cap: Option<NonZeroUsize>, json: bool) -> Result<Status> {
    let t = load_taxonomy(path)?;
    let ids: Vec<String> = generate_atomics(&t, cap).iter().map(|a| a.id()).collect();
    if json {
        print_json(&AtomicsOutput {
            format_version: FORMAT_VERSION,
            taxonomy_fingerprint: t.fingerprint().to_string(),
            cap: cap.map(NonZeroUsize::get),
            count: ids.len(),
            atomics: ids,
        })?;
    } else {
        for id in &ids {
            println!("{id}");
        }
        println!("count: {}", ids.len());
    }
    Ok(Status::Ok)
}

struct CompileArgs {
    policies: Vec<PathBuf>,
    taxonomy: PathBuf,
    cap: Option<NonZeroUsize>,
    k: usize,
    max_tokens: usize,
    out: PathBuf,
    policy_id: Option<String>,
    no_timestamp: bool,
    backend: BackendArgs,
    json: bool,
}

#[derive(Serialize)]
struct PolicyResult {
    policy_id: String,
    source: String,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    table: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<CompileReport>,
}

#[derive(Serialize)]
struct CompileSummary {
    format_version: u32,
    taxonomy_fingerprint: String,
    atomics: usize,
    policies: Vec<PolicyResult>,
}

fn compile(args: CompileArgs) -> Result<Status> {
    let taxonomy = load_taxonomy(&args.taxonomy)?;
    let atomics = generate_atomics(&taxonomy, args.cap);
    let resolved = args.backend.resolve()?;
    let embedder = resolved.embedder()?;
    let cache = resolved.cache()?;

    if args.policy_id.is_some() && args.policies.len() != 1 {
        bail!("--policy-id needs exactly one policy file");
    }
    let mut ids = BTreeMap::new();
    let mut sources = Vec::with_capacity(args.policies.len());
    for path in &args.policies {
        let policy_id = match &args.policy_id {
            Some(id) => id.clone(),
            None => policy_id_of(path)?,
        };
        if let Some(other) = ids.insert(policy_id.clone(), path.clone()) {
            bail!(
                "{} and {} both map to policy id {policy_id:?}",
                other.display(),
                path.display()
            );
        }
        sources.push(PolicySource {
            raw: fs::read(path).with_context(|| format!("reading {}", path.display()))?,
            format: SourceFormat::from_path(path),
            policy_id,
        });
    }

    // The translator may itself need the chat backend, and the oracle needs
    // the translator to resolve atomic ids, hence the two-step setup.
    let http_chat = match resolved.chat_kind {
        ChatKind::Http => Some(resolved.http_chat()?),
        ChatKind::Oracle => None,
    };
    let few_shot = resolved.few_shot()?;
    let translator: Box<dyn Translator + '_> = match resolved.translator {
        TranslatorKind::Template => Box::new(TemplateTranslator),
        TranslatorKind::Llm => {
            let Some(chat) = http_chat.as_deref() else {
                bail!("the llm translator needs the http chat backend");
            };
            Box::new(LlmTranslator::new(chat, few_shot.examples, cache.as_cache()))
        }
    };
    let oracle = match resolved.chat_kind {
        ChatKind::Oracle => {
            let Some(path) = &resolved.oracle_answers else {
                bail!("the oracle backend needs --oracle FILE or [oracle].answers");
            };
            Some(load_oracle(
                path,
                resolved.oracle_fallback,
                Some(&taxonomy),
                Some(translator.as_ref()),
            )?)
        }
        ChatKind::Http => None,
    };
    let backend: &dyn ChatBackend = match (&oracle, &http_chat) {
        (Some(o), _) => o,
        (None, Some(h)) => h.as_ref(),
        (None, None) => unreachable!("one backend is always configured"),
    };

    let compiler = Compiler {
        taxonomy: &taxonomy,
        translator: translator.as_ref(),
        embedder: embedder.as_ref(),
        backend,
        cache: cache.as_cache(),
        settings: CompileSettings {
            k: args.k,
            max_tokens: args.max_tokens,
            max_in_flight: resolved.chat.max_in_flight,
            timestamp: (!args.no_timestamp).then(|| {
                chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
            }),
        },
    };
    let outcomes = compiler.compile_batch(&sources, &atomics);
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let mut all_ok = true;
    let mut results = Vec::with_capacity(outcomes.len());
    for (src, (path, outcome)) in sources.iter().zip(args.policies.iter().zip(outcomes)) {
        let source = path.display().to_string();
        match outcome {
            Ok(o) => {
                let file = args.out.join(format!("{}.table.json", src.policy_id));
                fs::write(&file, o.table.to_json())
                    .with_context(|| format!("writing {}", file.display()))?;
                let complete = o.is_complete();
                all_ok &= complete;
                results.push(PolicyResult {
                    policy_id: src.policy_id.clone(),
                    source,
                    status: if complete { "ok" } else { "partial" },
                    table: Some(file.display().to_string()),
                    error: None,
                    report: Some(o.report),
                });
            }
            Err(e) => {
                all_ok = false;
                results.push(PolicyResult {
                    policy_id: src.policy_id.clone(),
                    source,
                    status: "error",
                    table: None,
                    error: Some(e.to_string()),
                    report: None,
                });
            }
        }
    }
    cache.flush()?;
    let summary = CompileSummary {
        format_version: FORMAT_VERSION,
        taxonomy_fingerprint: taxonomy.fingerprint().to_string(),
        atomics: atomics.len(),
        policies: results,
    };
    let report_path = args.out.join("compile-report.json");
    fs::write(&report_path, serde_json::to_string_pretty(&summary)? + "\n")
        .with_context(|| format!("writing {}", report_path.display()))?;

    if args.json {
        print_json(&summary)?;
    } else {
        println!("taxonomy: {} ({} atomics)", summary.taxonomy_fingerprint, summary.atomics);
        for r in &summary.policies {
            match (&r.report, &r.error) {
                (Some(rep), _) => {
                    println!(
                        "{}: {} segments, {} compiled, {} failed, {} entailment calls, {} cache hits, {} evidence warnings -> {}",
                        r.policy_id,
                        rep.segments,
                        rep.atomics - rep.failed.len(),
                        rep.failed.len(),
                        rep.entailment_calls,
                        rep.cache_hits,
                        rep.evidence_warnings,
                        r.table.as_deref().unwrap_or("-"),
                    );
                    for f in &rep.failed {
                        println!("  failed {}: {}", f.id, f.reason);
                    }
                }
                (None, Some(e)) => println!("{}: error: {e}", r.policy_id),
                (None, None) => {}
            }
        }
        println!("report: {}", report_path.display());
    }
    Ok(if all_ok { Status::Ok } else { Status::Partial })
}

fn comply_cmd(rules: &Path, table: &Path, taxonomy: Option<&Path>, json: bool) -> Result<Status> {
    let rules = RuleSet::from_json(&read(rules)?).with_context(|| format!("rules {}", rules.display()))?;
    let table = load_table(table)?;
    let taxonomy = taxonomy.map(load_taxonomy).transpose()?;
    let report = comply(&rules, &table, taxonomy.as_ref())?;
    if json {
        print_json(&report)?;
    } else {
        print!("{}", report.render_text());
    }
    Ok(if report.compliant { Status::Ok } else { Status::NonCompliant })
}

fn diff_cmd(old: &Path, new: &Path, csv: Option<&Path>, json: bool) -> Result<Status> {
    let diff = diff_over_time(&load_table(old)?, &load_table(new)?)?;
    if let Some(path) = csv {
        fs::write(path, diff.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    if json {
        print_json(&diff)?;
    } else {
        print!("{}", diff.render_text());
    }
    Ok(Status::Ok)
}

fn compare_cmd(
    dir: &Path,
    category: &str,
    row: &str,
    col: &str,
    taxonomy: Option<&Path>,
    json: bool,
) -> Result<Status> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.to_str().is_some_and(|s| s.ends_with(".table.json")));
    paths.sort();
    let mut tables = BTreeMap::new();
    for p in &paths {
        let t = load_table(p)?;
        if let Some(prev) = tables.insert(t.policy_id.clone(), t) {
            bail!("policy {:?} appears twice in {}", prev.policy_id, dir.display());
        }
    }
    if tables.is_empty() {
        bail!("no *.table.json files in {}", dir.display());
    }
    let taxonomy = taxonomy.map(load_taxonomy).transpose()?;
    let matrix = compare(&tables, category, row, col, taxonomy.as_ref())?;
    if json {
        print_json(&matrix)?;
    } else {
        print!("{}", matrix.render_text());
    }
    Ok(Status::Ok)
}

struct BenchArgs {
    cases: PathBuf,
    annotations: PathBuf,
    pairs: PathBuf,
    policies: Option<PathBuf>,
    k: usize,
    max_tokens: usize,
    sampling: Option<Sampling>,
    ground_truth: bool,
    backend: BackendArgs,
    json: bool,
}

#[derive(Serialize)]
struct BenchOutput {
    format_version: u32,
    backend_id: String,
    embedder_id: String,
    k: usize,
    positives: usize,
    negatives: usize,
    metrics: Metrics,
    unparseable: usize,
    evidence_recall: EvidenceRecall,
    reference: ReferenceRow,
}

fn find_policy(dir: &Path, id: &str) -> Result<PathBuf> {
    for ext in ["txt", "html", "htm"] {
        let p = dir.join(format!("{id}.{ext}"));
        if p.exists() {
            return Ok(p);
        }
    }
    bail!("no policy file for {id:?} in {}", dir.display())
}

fn fmt_ratio(x: Option<f64>) -> String {
    x.map_or_else(|| "undefined".into(), |v| format!("{v:.4}"))
}

fn bench_cmd(args: BenchArgs) -> Result<Status> {
    let cases = load_cases(&read(&args.cases)?).context("cases")?;
    let annotations = load_annotations(&read(&args.annotations)?).context("annotations")?;
    let pairs = load_pairs(&read(&args.pairs)?).context("pairs")?;
    let instances = build_eval_set(&cases, &annotations, &pairs, args.sampling)?;
    let dir = match args.policies {
        Some(d) => d,
        None => args
            .cases
            .parent()
            .map_or_else(|| PathBuf::from("policies"), |p| p.join("policies")),
    };
    let mut docs = Vec::new();
    for id in policylr_core::bench::distinct_policies(&instances) {
        let path = find_policy(&dir, id)?;
        let raw = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        docs.push(ingest(id, &raw, SourceFormat::from_path(&path))?);
    }
    let resolved = args.backend.resolve()?;
    let embedder = resolved.embedder()?;

    // Segments are needed to build a ground-truth oracle, so segment once
    // with a placeholder backend first.
    let placeholder = policylr_core::entailment::OracleBackend::strict();
    let segments = PolicyPipeline::new(&docs, embedder.as_ref(), &placeholder, args.k, args.max_tokens)?.segments();
    let backend: Box<dyn ChatBackend> = if args.ground_truth {
        Box::new(oracle_from_instances(&instances, &cases, &segments))
    } else {
        match resolved.chat_kind {
            ChatKind::Http => resolved.http_chat()?,
            ChatKind::Oracle => {
                let Some(path) = &resolved.oracle_answers else {
                    bail!("the oracle backend needs --oracle FILE or [oracle].answers");
                };
                Box::new(load_oracle(path, resolved.oracle_fallback, None, None)?)
            }
        }
    };
    let pipeline = PolicyPipeline::new(&docs, embedder.as_ref(), backend.as_ref(), args.k, args.max_tokens)?;
    let outcome = run_eval(&instances, &cases, |p, s| pipeline.judge(p, s))?;
    let recall = evidence_recall(&instances, &outcome.judgements, &segments);
    let (positives, negatives) = label_counts(&instances);
    let out = BenchOutput {
        format_version: FORMAT_VERSION,
        backend_id: backend.id(),
        embedder_id: embedder.id(),
        k: args.k,
        positives,
        negatives,
        metrics: outcome.metrics,
        unparseable: outcome.unparseable,
        evidence_recall: recall,
        reference: REFERENCE_ROW,
    };
    if args.json {
        print_json(&out)?;
    } else {
        let m = &out.metrics;
        println!("backend: {} / {} (k = {})", out.backend_id, out.embedder_id, out.k);
        println!("instances: {} positive, {} negative", positives, negatives);
        println!("tp {}  fp {}  fn {}  tn {}  unparseable {}", m.tp, m.fp, m.fn_, m.tn, out.unparseable);
        println!(
            "precision {}  recall {}  f1 {}",
            fmt_ratio(m.precision),
            fmt_ratio(m.recall),
            fmt_ratio(m.f1)
        );
        println!(
            "evidence recall {} ({} of {} eligible; {} not retrieved, {} unlocatable)",
            fmt_ratio(recall.recall),
            recall.hits,
            recall.eligible,
            recall.not_retrieved,
            recall.unlocatable
        );
        let r = &out.reference;
        println!(
            "reference (published, not reproduced here): {} k={} precision {:.2} recall {:.2} f1 {:.2}",
            r.model, r.k, r.precision, r.recall, r.f1
        );
    }
    Ok(Status::Ok)
}
