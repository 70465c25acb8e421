//! The `ragforge` command line.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage or configuration error.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use tracing_subscriber::EnvFilter;

use crate::click_ingest::{compute_relevance, parse_click_log, ClickRecord, TrainingPair};
use crate::config::Config;
use crate::corpus::{read_jsonl, write_jsonl, Document};
use crate::embedder::{train, Embedder, Projection};
use crate::error::{Error, Result};
use crate::eval::{eval_set_from_clicks, evaluate_retriever, judge_rows, synth_clicks, EvalQuery, JudgeRow};
use crate::finetune::{build_dataset, render_training_sample, DEFAULT_SAMPLE_TEMPLATE};
use crate::qa_gen::{generate_for_corpus, Exemplar, GeneratedQa};
use crate::rag::{service, AskOptions, RagEngine};
use crate::sanitizer::{DictionaryProvider, Sanitizer};
use crate::vector_index::Index;

#[derive(Debug, Parser)]
#[command(name = "ragforge", version, about = "Retrieval-augmented QA over product help content")]
struct Cli {
    /// TOML config shared by every stage.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every seeded stage, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only log errors.
    #[arg(long, global = true, conflicts_with = "trace")]
    quiet: bool,
    /// Verbose logs; `ask` also prints the full answer bundle.
    #[arg(long, global = true)]
    trace: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Turn a click log into graded (query, document) training pairs.
    IngestClicks(IngestArgs),
    /// Train the retriever projection on training pairs.
    TrainRetriever(TrainArgs),
    /// Embed source records into an index file.
    BuildIndex(BuildIndexArgs),
    /// Redact contact details and names from JSONL records.
    Sanitize(SanitizeArgs),
    /// Generate question-answer pairs from documents with the LLM.
    GenerateQa(GenerateQaArgs),
    /// Compile finetuning records from generated pairs.
    BuildFinetuneSet(FinetuneArgs),
    /// Retrieval nDCG@k on an evaluation set.
    EvalNdcg(EvalArgs),
    /// Score candidate answers against gold answers with the LLM judge.
    Judge(JudgeArgs),
    /// Write a synthetic corpus and click log.
    Synth(SynthArgs),
    /// Serve /ask, /retrieve and /health over HTTP.
    Serve(ServeArgs),
    /// Answer one query.
    Ask(AskArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Click log JSONL (query, doc_id, clicks).
    #[arg(long)]
    clicks: PathBuf,
    /// Source records used to resolve doc ids [default: paths.corpus].
    #[arg(long)]
    docs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training pairs JSONL from ingest-clicks.
    #[arg(long)]
    pairs: PathBuf,
    /// Projection output [default: paths.projection].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BuildIndexArgs {
    /// Source record JSONL files [default: paths.corpus].
    #[arg(long)]
    docs: Vec<PathBuf>,
    /// Generated QA JSONL files to index alongside the records.
    #[arg(long)]
    qa: Vec<PathBuf>,
    #[arg(long)]
    projection: Option<PathBuf>,
    /// Index output [default: paths.index].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SanitizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated fields to scrub.
    #[arg(long, value_delimiter = ',', required = true)]
    fields: Vec<String>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenerateQaArgs {
    #[arg(long)]
    docs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Few-shot exemplars JSONL ({document, qa: [{question, answer}]}).
    #[arg(long)]
    exemplars: Option<PathBuf>,
    #[arg(long)]
    max_per_doc: Option<usize>,
    #[arg(long)]
    concurrency: Option<usize>,
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    #[arg(long)]
    qa: PathBuf,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Rendered training samples, one block per record.
    #[arg(long)]
    rendered: Option<PathBuf>,
    /// Custom sample template with {context}, {question} and {answer}.
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    projection: Option<PathBuf>,
    /// Graded queries ({query, relevant}) or raw click records.
    #[arg(long)]
    eval: PathBuf,
    #[arg(short, long)]
    k: Option<usize>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct JudgeArgs {
    /// Gold rows {id, question, answer}.
    #[arg(long)]
    gold: PathBuf,
    /// Candidate rows {id, answer}.
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    host: Option<String>,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    projection: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AskArgs {
    query: String,
    /// Explicit product filter, repeatable; skips automatic detection.
    #[arg(long = "product")]
    products: Vec<String>,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    projection: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the command, returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_logging(&cli);
    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match dispatch(cli, cfg) {
        Ok(()) => 0,
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn init_logging(cli: &Cli) {
    let level = if cli.quiet {
        "error"
    } else if cli.trace {
        "trace"
    } else {
        "info"
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_target(false)
        .try_init();
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    Ok(cfg)
}

fn dispatch(cli: Cli, cfg: Config) -> Result<()> {
    let trace = cli.trace;
    let quiet = cli.quiet;
    match cli.command {
        Command::IngestClicks(a) => ingest(&cfg, a, quiet),
        Command::TrainRetriever(a) => train_retriever(&cfg, a, quiet),
        Command::BuildIndex(a) => build_index(&cfg, a, quiet),
        Command::Sanitize(a) => sanitize(&cfg, a, quiet),
        Command::GenerateQa(a) => generate_qa(&cfg, a, quiet),
        Command::BuildFinetuneSet(a) => finetune_set(&cfg, a, quiet),
        Command::EvalNdcg(a) => eval_ndcg(&cfg, a),
        Command::Judge(a) => judge(&cfg, a),
        Command::Synth(a) => synth(&cfg, a, quiet),
        Command::Serve(a) => serve(&cfg, a),
        Command::Ask(a) => ask(&cfg, a, trace),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io_at(path, e))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io_at(path, e))?;
    w.flush().map_err(|e| Error::io_at(path, e))
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, e)),
        _ => Ok(()),
    }
}

fn doc_paths(cfg: &Config, given: Vec<PathBuf>) -> Result<Vec<PathBuf>> {
    if !given.is_empty() {
        return Ok(given);
    }
    Ok(vec![cfg.require(&cfg.paths.corpus, "corpus")?.to_path_buf()])
}

fn read_docs(paths: &[PathBuf]) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for p in paths {
        docs.extend(read_jsonl::<Document>(p)?);
    }
    Ok(docs)
}

fn pick<'a>(given: &'a Option<PathBuf>, cfg: &'a Config, slot: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    match given {
        Some(p) => Ok(p),
        None => cfg.require(slot, key),
    }
}

fn embedder(cfg: &Config, projection: &Path) -> Result<Embedder> {
    Embedder::new(Projection::load(projection)?, cfg.features.clone())
}

fn ingest(cfg: &Config, a: IngestArgs, quiet: bool) -> Result<()> {
    let file = File::open(&a.clicks).map_err(|e| Error::io_at(&a.clicks, e))?;
    let parsed = parse_click_log(BufReader::new(file))?;
    let docs: HashMap<String, Document> = read_docs(&doc_paths(cfg, a.docs)?)?
        .into_iter()
        .map(|d| (d.item_id.clone(), d))
        .collect();
    let out = compute_relevance(&parsed.records, &docs)?;
    create_parent(&a.out)?;
    write_jsonl(&a.out, &out.pairs)?;
    if !quiet {
        println!(
            "{} pairs written, {} malformed lines skipped, {} records with unknown doc ids",
            out.pairs.len(),
            parsed.skipped,
            out.unresolved
        );
    }
    Ok(())
}

fn train_retriever(cfg: &Config, a: TrainArgs, quiet: bool) -> Result<()> {
    let pairs: Vec<TrainingPair> = read_jsonl(&a.pairs)?;
    let out = pick(&a.out, cfg, &cfg.paths.projection, "projection")?;
    let outcome = train(&pairs, &cfg.train, &cfg.features)?;
    create_parent(out)?;
    outcome.projection.save(out)?;
    if !quiet {
        let last = outcome.epoch_losses.last().copied().unwrap_or(f64::NAN);
        println!(
            "trained on {} pairs for {} epochs, final loss {last:.6}, projection version {:08x}",
            pairs.len(),
            outcome.epoch_losses.len(),
            outcome.projection.version()
        );
    }
    Ok(())
}

fn build_index(cfg: &Config, a: BuildIndexArgs, quiet: bool) -> Result<()> {
    let mut docs = read_docs(&doc_paths(cfg, a.docs)?)?;
    if !a.qa.is_empty() {
        let sources: HashMap<String, Document> = docs.iter().map(|d| (d.item_id.clone(), d.clone())).collect();
        let mut generated = Vec::new();
        for p in &a.qa {
            generated.extend(read_jsonl::<GeneratedQa>(p)?);
        }
        docs.extend(crate::qa_gen::generated_to_documents(&generated, &sources));
    }
    let projection = pick(&a.projection, cfg, &cfg.paths.projection, "projection")?;
    let out = pick(&a.out, cfg, &cfg.paths.index, "index")?;
    let index = Index::build(&docs, &embedder(cfg, projection)?)?;
    create_parent(out)?;
    index.save(out)?;
    if !quiet {
        let counts: Vec<String> = index.kind_counts().iter().map(|(k, n)| format!("{k}={n}")).collect();
        println!("indexed {} items ({})", index.len(), counts.join(", "));
    }
    Ok(())
}

fn sanitize(cfg: &Config, a: SanitizeArgs, quiet: bool) -> Result<()> {
    let sanitizer = if cfg.sanitize.signature_markers.is_empty() {
        Sanitizer::default()
    } else {
        Sanitizer::new(cfg.sanitize.signature_markers.clone())
    };
    let provider = DictionaryProvider::new(&cfg.sanitize.person_names);
    let input = File::open(&a.input).map_err(|e| Error::io_at(&a.input, e))?;
    create_parent(&a.out)?;
    let output = BufWriter::new(File::create(&a.out).map_err(|e| Error::io_at(&a.out, e))?);
    let report = sanitizer.sanitize_jsonl(BufReader::new(input), output, &a.fields, &provider)?;
    match &a.report {
        Some(p) => write_json(p, &report)?,
        None if !quiet => println!("{}", serde_json::to_string_pretty(&report)?),
        None => {}
    }
    Ok(())
}

fn generate_qa(cfg: &Config, a: GenerateQaArgs, quiet: bool) -> Result<()> {
    let docs: Vec<Document> = read_jsonl(&a.docs)?;
    let exemplars: Vec<Exemplar> = match &a.exemplars {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let mut gen_cfg = cfg.qa.clone();
    if let Some(n) = a.max_per_doc {
        gen_cfg.max_per_doc = n;
    }
    if let Some(n) = a.concurrency {
        gen_cfg.concurrency = n.max(1);
    }
    if exemplars.is_empty() {
        gen_cfg.few_shot = false;
    }
    let client = cfg.llm_client()?;
    create_parent(&a.out)?;
    let report = generate_for_corpus(&docs, &exemplars, client.as_ref(), &gen_cfg, &a.out)?;
    if !quiet {
        println!(
            "{} docs ok, {} failed, {} already done; {} pairs written",
            report.ok, report.failed, report.skipped, report.pairs_written
        );
    }
    Ok(())
}

fn finetune_set(cfg: &Config, a: FinetuneArgs, quiet: bool) -> Result<()> {
    let pairs: Vec<GeneratedQa> = read_jsonl(&a.qa)?;
    let index = Index::load(pick(&a.index, cfg, &cfg.paths.index, "index")?)?;
    let (records, report) = build_dataset(&pairs, &index, &cfg.finetune)?;
    create_parent(&a.out)?;
    write_jsonl(&a.out, &records)?;
    if let Some(path) = &a.rendered {
        let template = match &a.template {
            Some(t) => fs::read_to_string(t).map_err(|e| Error::io_at(t, e))?,
            None => DEFAULT_SAMPLE_TEMPLATE.to_string(),
        };
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io_at(path, e))?);
        for (i, r) in records.iter().enumerate() {
            let sample = render_training_sample(r, &template, cfg.finetune.rng_seed, i as u64);
            w.write_all(sample.as_bytes()).map_err(|e| Error::io_at(path, e))?;
            w.write_all(b"\n").map_err(|e| Error::io_at(path, e))?;
        }
        w.flush().map_err(|e| Error::io_at(path, e))?;
    }
    match &a.report {
        Some(p) => write_json(p, &report)?,
        None if !quiet => println!(
            "{} answerable, {} unanswerable, {} short answers dropped, {} skipped, {} under-filled",
            report.answerable,
            report.unanswerable,
            report.dropped_short,
            report.skipped.len(),
            report.underfilled
        ),
        None => {}
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EvalLine {
    Graded(EvalQuery),
    Click(ClickRecord),
}

fn read_eval_set(path: &Path) -> Result<Vec<EvalQuery>> {
    let lines: Vec<EvalLine> = read_jsonl(path)?;
    let mut graded = Vec::new();
    let mut clicks = Vec::new();
    for l in lines {
        match l {
            EvalLine::Graded(q) => graded.push(q),
            EvalLine::Click(c) => clicks.push(c),
        }
    }
    graded.extend(eval_set_from_clicks(&clicks));
    Ok(graded)
}

fn eval_ndcg(cfg: &Config, a: EvalArgs) -> Result<()> {
    let index = Index::load(pick(&a.index, cfg, &cfg.paths.index, "index")?)?;
    let embedder = embedder(cfg, pick(&a.projection, cfg, &cfg.paths.projection, "projection")?)?;
    let eval = read_eval_set(&a.eval)?;
    let report = evaluate_retriever(&index, &embedder, &eval, a.k.unwrap_or(cfg.eval.k))?;
    match &a.report {
        Some(p) => {
            write_json(p, &report)?;
            print!("{}", report.table());
        }
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

#[derive(Deserialize)]
struct GoldRow {
    id: String,
    question: String,
    answer: String,
}

#[derive(Deserialize)]
struct CandidateRow {
    id: String,
    answer: String,
}

fn judge(cfg: &Config, a: JudgeArgs) -> Result<()> {
    let gold: Vec<GoldRow> = read_jsonl(&a.gold)?;
    let candidates: HashMap<String, String> = read_jsonl::<CandidateRow>(&a.candidates)?
        .into_iter()
        .map(|c| (c.id, c.answer))
        .collect();
    let mut rows = Vec::new();
    for g in gold {
        let candidate = candidates
            .get(&g.id)
            .ok_or_else(|| Error::InvalidInput(format!("no candidate answer for gold row `{}`", g.id)))?;
        rows.push(JudgeRow {
            id: g.id,
            question: g.question,
            gold: g.answer,
            candidate: candidate.clone(),
        });
    }
    let report = judge_rows(&rows, cfg.llm_client()?.as_ref())?;
    match &a.out {
        Some(p) => write_json(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn synth(cfg: &Config, a: SynthArgs, quiet: bool) -> Result<()> {
    let corpus = synth_clicks(&cfg.synth)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io_at(&a.out, e))?;
    write_jsonl(&a.out.join("docs.jsonl"), &corpus.documents)?;
    write_jsonl(&a.out.join("clicks.jsonl"), &corpus.train_clicks)?;
    write_jsonl(&a.out.join("eval_clicks.jsonl"), &corpus.eval_clicks)?;
    let eval = eval_set_from_clicks(&corpus.eval_clicks);
    write_jsonl(&a.out.join("eval.jsonl"), &eval)?;
    if !quiet {
        println!(
            "{} docs, {} training click rows, {} eval queries written to {}",
            corpus.documents.len(),
            corpus.train_clicks.len(),
            eval.len(),
            a.out.display()
        );
    }
    Ok(())
}

fn engine(cfg: &Config, index: &Option<PathBuf>, projection: &Option<PathBuf>) -> Result<RagEngine> {
    let mut cfg = cfg.clone();
    if index.is_some() {
        cfg.paths.index = index.clone();
    }
    if projection.is_some() {
        cfg.paths.projection = projection.clone();
    }
    cfg.rag_engine()
}

fn serve(cfg: &Config, a: ServeArgs) -> Result<()> {
    let engine = Arc::new(engine(cfg, &a.index, &a.projection)?);
    let host = a.host.unwrap_or_else(|| cfg.service.host.clone());
    let port = a.port.unwrap_or(cfg.service.port);
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| Error::config("service.host", format!("{host}:{port}: {e}")))?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(service::serve(engine, addr, &cfg.service.cors_origins))?;
    Ok(())
}

fn ask(cfg: &Config, a: AskArgs, trace: bool) -> Result<()> {
    let engine = engine(cfg, &a.index, &a.projection)?;
    let opts = AskOptions {
        products: (!a.products.is_empty()).then_some(a.products),
        k: None,
    };
    match engine.answer_with(&a.query, &opts) {
        Ok(bundle) if trace => println!("{}", serde_json::to_string_pretty(&bundle)?),
        Ok(bundle) => println!("{}", bundle.answer),
        Err(e) => {
            if let (true, Some(partial)) = (trace, &e.partial) {
                println!("{}", serde_json::to_string_pretty(partial)?);
            }
            return Err(e.error);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_and_usage_codes() {
        assert_eq!(run(["ragforge", "--help"]), 0);
        assert_eq!(run(["ragforge", "ask", "--help"]), 0);
        assert_eq!(run(["ragforge", "frobnicate"]), 2);
        assert_eq!(run(["ragforge"]), 2);
        assert_eq!(run(["ragforge", "sanitize", "--in", "x"]), 2);
    }

    #[test]
    fn every_subcommand_has_help() {
        for sub in [
            "ingest-clicks",
            "train-retriever",
            "build-index",
            "sanitize",
            "generate-qa",
            "build-finetune-set",
            "eval-ndcg",
            "judge",
            "synth",
            "serve",
            "ask",
        ] {
            assert_eq!(run(["ragforge", sub, "--help"]), 0, "{sub}");
        }
    }

    #[test]
    fn bad_config_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.toml");
        fs::write(&cfg, "[train]\nlr = 1\n").unwrap();
        let out = dir.path().join("s");
        assert_eq!(
            run(["ragforge".as_ref(), "--config".as_ref(), cfg.as_os_str(), "synth".as_ref(), "--out".as_ref(), out.as_os_str()]),
            2
        );
    }

    #[test]
    fn missing_input_is_domain_error() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.jsonl");
        let out = dir.path().join("pairs.jsonl");
        assert_eq!(
            run([
                "ragforge".as_ref(),
                "--quiet".as_ref(),
                "train-retriever".as_ref(),
                "--pairs".as_ref(),
                missing.as_os_str(),
                "--out".as_ref(),
                out.as_os_str()
            ]),
            1
        );
    }
}
