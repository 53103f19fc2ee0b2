//! Command-line front end: split, index, retrieve, prompt, translate,
//! evaluate and experiment.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tmprompt::backend::{Backend, BackendConfig, BackendKind, DecodingParams, RetryConfig};
use tmprompt::corpus::{
    ingest, load_corpus, read_pairs_jsonl, read_split_manifest, save_split, split_corpus, CorpusSource, LangPair,
    NormalizationConfig, SentencePair, DEFAULT_MAX_TOKENS, DEFAULT_TEST_SIZE,
};
use tmprompt::eval::{corpus_bleu_with, whitespace_tokens, BleuOptions};
use tmprompt::experiment::{sweep, ExperimentConfig, RunOptions, Session, SweepAxis};
use tmprompt::postprocess::{clean_output, score_tokenize};
use tmprompt::retrieval::{QueryHits, SelectionStrategy, TmIndex, DEFAULT_CANDIDATE_LIMIT};
use tmprompt::routing::{route_demo, NmtHypothesisTable, RoutingPolicy};
use tmprompt::templates::{order_demos, render, Catalog, DemoOrder, Demonstration, PromptRequest, DEFAULT_TM_TEMPLATE};

#[derive(Parser)]
#[command(name = "tmprompt", version, about = "Translation-memory prompting for LLM translation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a parallel corpus and split it into a test set and a TM database.
    Split(SplitArgs),
    /// Build the retrieval index for a TM database.
    Index(IndexArgs),
    /// Top-k fuzzy matches for each query, as JSONL.
    Retrieve(RetrieveArgs),
    /// Render prompts from retrieval hits.
    Prompt(PromptArgs),
    /// Send prompts to a backend, optionally routing weak matches to NMT.
    Translate(TranslateArgs),
    /// Corpus BLEU in multi-bleu format.
    Evaluate(EvaluateArgs),
    /// Run an experiment or a sweep from a config file.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SplitArgs {
    /// Tab-separated `source<TAB>target` file.
    #[arg(long, conflicts_with_all = ["jsonl", "src", "tgt"])]
    tsv: Option<PathBuf>,
    /// JSONL with `source` and `target` fields.
    #[arg(long, conflicts_with_all = ["src", "tgt"])]
    jsonl: Option<PathBuf>,
    /// Source side of a line-aligned pair of files.
    #[arg(long, requires = "tgt")]
    src: Option<PathBuf>,
    #[arg(long, requires = "src")]
    tgt: Option<PathBuf>,
    #[arg(long)]
    src_lang: String,
    #[arg(long)]
    tgt_lang: String,
    #[arg(long, default_value_t = DEFAULT_TEST_SIZE)]
    test_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_TOKENS)]
    max_tokens: usize,
    /// Drop repeated (source, target) pairs.
    #[arg(long)]
    dedup: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IndexArgs {
    /// TM database as pair JSONL (`tm.jsonl` of a split).
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RetrieveArgs {
    /// Index file; built on the fly when absent.
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    db: PathBuf,
    #[arg(long, conflicts_with = "query_file", required_unless_present = "query_file")]
    query: Option<String>,
    /// Pair JSONL (ids kept) or plain text with one query per line.
    #[arg(long)]
    query_file: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_CANDIDATE_LIMIT)]
    limit: usize,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LangArgs {
    /// Split directory whose manifest gives the languages.
    #[arg(long, conflicts_with_all = ["src_lang", "tgt_lang"], required_unless_present_all = ["src_lang", "tgt_lang"])]
    split: Option<PathBuf>,
    #[arg(long, requires = "tgt_lang")]
    src_lang: Option<String>,
    #[arg(long, requires = "src_lang")]
    tgt_lang: Option<String>,
}

impl LangArgs {
    fn resolve(&self) -> Result<LangPair> {
        match (&self.split, &self.src_lang, &self.tgt_lang) {
            (Some(dir), _, _) => Ok(read_split_manifest(dir)?.lang),
            (None, Some(s), Some(t)) => Ok(LangPair::from_codes(s, t)?),
            _ => bail!("give --split or both --src-lang and --tgt-lang"),
        }
    }
}

#[derive(Args)]
struct PromptArgs {
    /// Hits JSONL written by `retrieve`.
    #[arg(long)]
    hits: PathBuf,
    #[command(flatten)]
    lang: LangArgs,
    #[arg(long, default_value_t = DEFAULT_TM_TEMPLATE)]
    template: u32,
    /// Template catalog JSONL; built-in catalog when absent.
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value = "desc")]
    order: DemoOrder,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BackendArgs {
    /// Backend config file (TOML or JSON); the flags below override it.
    #[arg(long)]
    backend_config: Option<PathBuf>,
    #[arg(long)]
    backend: Option<BackendKind>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Name of the environment variable holding the API key.
    #[arg(long)]
    credential_env: Option<String>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    #[arg(long)]
    max_attempts: Option<u32>,
    #[arg(long)]
    timeout_secs: Option<f64>,
    /// Append every request and response to this JSONL file.
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long)]
    max_tokens: Option<u32>,
    #[arg(long)]
    stop: Vec<String>,
}

impl BackendArgs {
    fn config(&self) -> Result<BackendConfig> {
        let mut c = match &self.backend_config {
            Some(path) => read_config::<BackendConfig>(path)?,
            None => BackendConfig::default(),
        };
        if let Some(k) = self.backend {
            c.kind = k;
        }
        if self.endpoint.is_some() {
            c.endpoint = self.endpoint.clone();
        }
        if self.model.is_some() {
            c.model_id = self.model.clone();
        }
        if self.credential_env.is_some() {
            c.credential_env_var = self.credential_env.clone();
        }
        if let Some(n) = self.max_in_flight {
            c.max_in_flight = n;
        }
        if let Some(n) = self.max_attempts {
            c.retry = RetryConfig { max_attempts: n, ..c.retry };
        }
        if let Some(t) = self.timeout_secs {
            c.request_timeout_secs = t;
        }
        if self.transcript.is_some() {
            c.transcript = self.transcript.clone();
        }
        c.validate()?;
        Ok(c)
    }

    fn decoding(&self) -> DecodingParams {
        DecodingParams {
            temperature: self.temperature,
            max_output_tokens: self.max_tokens,
            stop_sequences: self.stop.clone(),
        }
    }
}

#[derive(Args)]
struct TranslateArgs {
    /// PromptRequest JSONL written by `prompt`.
    #[arg(long)]
    prompts: PathBuf,
    /// `{id, hypothesis}` JSONL of NMT translations.
    #[arg(long)]
    nmt_hyp: Option<PathBuf>,
    /// TM demonstrations below this FMS are replaced by the NMT hypothesis.
    #[arg(long, default_value_t = 0.0)]
    fms_threshold: f64,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
    /// Per-sentence JSONL results; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cleaned outputs, one per line, ready for `evaluate`.
    #[arg(long)]
    text_out: Option<PathBuf>,
    /// Stop at the first failed request.
    #[arg(long)]
    fail_fast: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Hypotheses: plain text, or `translate` output JSONL.
    #[arg(long)]
    hyp: PathBuf,
    /// References: plain text, or pair JSONL.
    #[arg(long)]
    r#ref: PathBuf,
    /// Language for the scoring tokenizer.
    #[arg(long, default_value = "en")]
    lang: String,
    /// Inputs are already tokenized; split on whitespace only.
    #[arg(long)]
    tokenized: bool,
    /// Lowercase before scoring, like multi-bleu's -lc.
    #[arg(long)]
    lowercase: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Root directory for run directories.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Reuse finished translations from an earlier run with the same config.
    #[arg(long)]
    resume: bool,
    /// Sweep k; without values 1..9.
    #[arg(long, value_delimiter = ',', num_args = 0.., group = "axis")]
    sweep_k: Option<Vec<usize>>,
    /// Sweep the routing threshold; without values 0.0..1.0 in steps of 0.1.
    #[arg(long, value_delimiter = ',', num_args = 0.., group = "axis")]
    sweep_threshold: Option<Vec<f64>>,
    /// Sweep over template ids.
    #[arg(long, value_delimiter = ',', num_args = 1.., group = "axis")]
    sweep_template: Option<Vec<u32>>,
    /// Run both demonstration orders.
    #[arg(long, group = "axis")]
    sweep_order: bool,
    /// Sweep over selection strategies.
    #[arg(long, value_delimiter = ',', num_args = 1.., group = "axis")]
    sweep_selection: Option<Vec<SelectionStrategy>>,
}

impl ExperimentArgs {
    fn axis(&self) -> Option<(&'static str, SweepAxis)> {
        if let Some(v) = &self.sweep_k {
            return Some(("k", if v.is_empty() { SweepAxis::k_grid() } else { SweepAxis::K(v.clone()) }));
        }
        if let Some(v) = &self.sweep_threshold {
            let axis = if v.is_empty() { SweepAxis::threshold_grid() } else { SweepAxis::Threshold(v.clone()) };
            return Some(("threshold", axis));
        }
        if let Some(v) = &self.sweep_template {
            return Some(("template_id", SweepAxis::Template(v.clone())));
        }
        if self.sweep_order {
            return Some(("demo_order", SweepAxis::both_orders()));
        }
        self.sweep_selection.as_ref().map(|v| ("selection", SweepAxis::Selection(v.clone())))
    }
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&raw).with_context(|| format!("parsing {}", path.display()))
    } else {
        serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))
    }
}

fn writer(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn write_jsonl<T: Serialize>(out: &mut dyn Write, items: impl IntoIterator<Item = T>) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut *out, &item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(items)
}

fn is_jsonl(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "jsonl")
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l).to_string()).collect())
}

fn cmd_split(a: SplitArgs) -> Result<()> {
    let source = match (&a.tsv, &a.jsonl, &a.src, &a.tgt) {
        (Some(p), _, _, _) => CorpusSource::Tsv(p.clone()),
        (_, Some(p), _, _) => CorpusSource::Jsonl(p.clone()),
        (_, _, Some(s), Some(t)) => CorpusSource::Paired { source: s.clone(), target: t.clone() },
        _ => bail!("give --tsv, --jsonl or --src with --tgt"),
    };
    let lang = LangPair::from_codes(&a.src_lang, &a.tgt_lang)?;
    let rules = NormalizationConfig { max_tokens: a.max_tokens, reject_duplicates: a.dedup };
    let (pairs, stats) = ingest(load_corpus(&source)?, &rules);
    let split = split_corpus(&pairs, a.test_size, a.seed, lang)?;
    let manifest = save_split(&split, &a.out)?;
    eprintln!(
        "kept {} pairs ({} rejected): {} test, {} TM",
        stats.kept,
        stats.total_rejected(),
        manifest.test_size,
        split.tm_database.len()
    );
    for (reason, n) in &stats.rejected {
        eprintln!("  rejected {reason:?}: {n}");
    }
    Ok(())
}

fn cmd_index(a: IndexArgs) -> Result<()> {
    let db = read_pairs_jsonl(&a.db)?;
    let index = TmIndex::build(&db)?;
    index.save(&a.out)?;
    eprintln!("indexed {} entries into {}", index.doc_count(), a.out.display());
    Ok(())
}

fn cmd_retrieve(a: RetrieveArgs) -> Result<()> {
    let db = read_pairs_jsonl(&a.db)?;
    let index = match &a.index {
        Some(p) => TmIndex::load(p, &db)?,
        None => TmIndex::build(&db)?,
    };
    let queries: Vec<(u64, String)> = match (&a.query, &a.query_file) {
        (Some(q), _) => vec![(0, q.clone())],
        (None, Some(p)) if is_jsonl(p) => read_pairs_jsonl(p)?.into_iter().map(|q| (q.id, q.source)).collect(),
        (None, Some(p)) => read_lines(p)?.into_iter().enumerate().map(|(i, q)| (i as u64, q)).collect(),
        (None, None) => bail!("give --query or --query-file"),
    };
    let texts: Vec<&str> = queries.iter().map(|(_, q)| q.as_str()).collect();
    let hits = index.retrieve_batch(&db, &texts, a.k, a.limit)?;
    let mut out = writer(a.out.as_deref())?;
    write_jsonl(
        &mut *out,
        queries.into_iter().zip(hits).map(|((query_id, query), hits)| QueryHits { query_id, query, hits }),
    )
}

fn load_catalog(path: Option<&Path>) -> Result<Catalog> {
    Ok(match path {
        Some(p) => Catalog::load(p)?,
        None => Catalog::builtin().clone(),
    })
}

fn cmd_prompt(a: PromptArgs) -> Result<()> {
    if a.k == 0 {
        bail!("--k must be at least 1");
    }
    let lang = a.lang.resolve()?;
    let catalog = load_catalog(a.catalog.as_deref())?;
    let template = catalog.get(a.template)?;
    let all: Vec<QueryHits> = read_jsonl(&a.hits)?;
    let mut requests = Vec::with_capacity(all.len());
    for qh in all {
        let demos = if template.with_tm {
            let top = qh.hits.iter().take(a.k).map(Demonstration::from_hit).collect();
            order_demos(top, a.order)?.demos
        } else {
            Vec::new()
        };
        let req = render(template, &lang, &qh.query, &demos)
            .with_context(|| format!("query {}", qh.query_id))?
            .with_query_id(qh.query_id);
        for w in &req.warnings {
            eprintln!("warning: query {}: {w}", qh.query_id);
        }
        requests.push(req);
    }
    let mut out = writer(a.out.as_deref())?;
    write_jsonl(&mut *out, &requests)
}

#[derive(Serialize)]
struct TranslationLine {
    id: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    completion: Option<String>,
    output: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    attempts: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Re-renders `req` with weak TM demonstrations swapped for the NMT hypothesis.
fn reroute(req: PromptRequest, policy: &RoutingPolicy, catalog: &Catalog) -> Result<PromptRequest> {
    let id = req.query_id.context("routing needs prompts with query ids")?;
    let query = SentencePair::new(id, req.query.clone(), String::new());
    let demos = req
        .demos
        .iter()
        .cloned()
        .map(|d| route_demo(&query, d, policy).map(|(_, d)| d))
        .collect::<Result<Vec<_>, _>>()?;
    if demos == req.demos {
        return Ok(req);
    }
    let template = catalog.get(req.template_id)?;
    Ok(render(template, &req.lang, &req.query, &demos)?.with_query_id(id))
}

fn cmd_translate(a: TranslateArgs) -> Result<()> {
    let config = a.backend.config()?;
    let params = a.backend.decoding();
    let mut requests: Vec<PromptRequest> = read_jsonl(&a.prompts)?;
    if a.fms_threshold > 0.0 {
        let table = match &a.nmt_hyp {
            Some(p) => NmtHypothesisTable::load(p)?,
            None => bail!("--fms-threshold above 0 needs --nmt-hyp"),
        };
        let policy = RoutingPolicy::new(a.fms_threshold, table)?;
        let catalog = load_catalog(a.catalog.as_deref())?;
        requests = requests.into_iter().map(|r| reroute(r, &policy, &catalog)).collect::<Result<_>>()?;
    }

    let runtime = tokio::runtime::Runtime::new()?;
    let results = runtime.block_on(async {
        let backend = Backend::new(config)?;
        backend.translate_batch(&requests, &params, a.fail_fast).await
    })?;

    let lines: Vec<TranslationLine> = requests
        .iter()
        .zip(results)
        .map(|(req, r)| match r {
            Ok(c) => TranslationLine {
                id: req.query_id,
                output: clean_output(&c.text),
                completion: Some(c.text),
                attempts: Some(c.attempt_count),
                error: None,
            },
            Err(e) => TranslationLine {
                id: req.query_id,
                completion: None,
                output: String::new(),
                attempts: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let failures = lines.iter().filter(|l| l.error.is_some()).count();
    if let Some(p) = &a.text_out {
        let text: String = lines.iter().map(|l| format!("{}\n", l.output)).collect();
        fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    let mut out = writer(a.out.as_deref())?;
    write_jsonl(&mut *out, &lines)?;
    if failures > 0 {
        eprintln!("{failures} of {} requests failed", lines.len());
    }
    Ok(())
}

fn hypothesis_lines(path: &Path) -> Result<Vec<String>> {
    if !is_jsonl(path) {
        return read_lines(path);
    }
    let rows: Vec<serde_json::Value> = read_jsonl(path)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, v)| {
            v.get("output")
                .and_then(|o| o.as_str())
                .map(String::from)
                .with_context(|| format!("{}:{}: no output field", path.display(), i + 1))
        })
        .collect()
}

fn reference_lines(path: &Path) -> Result<Vec<String>> {
    if is_jsonl(path) {
        Ok(read_pairs_jsonl(path)?.into_iter().map(|p| p.target).collect())
    } else {
        read_lines(path)
    }
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let tok = |s: &String| if a.tokenized { whitespace_tokens(s) } else { score_tokenize(s, &a.lang) };
    let hyps: Vec<Vec<String>> = hypothesis_lines(&a.hyp)?.iter().map(tok).collect();
    let refs: Vec<Vec<String>> = reference_lines(&a.r#ref)?.iter().map(tok).collect();
    let report = corpus_bleu_with(&hyps, &refs, BleuOptions { lowercase: a.lowercase })?;
    println!("{report}");
    Ok(())
}

fn cmd_experiment(a: ExperimentArgs) -> Result<()> {
    let config = ExperimentConfig::load(&a.config)?;
    let options = RunOptions { out_root: Some(a.out.clone()), resume: a.resume };
    let (axis_name, reports) = match a.axis() {
        Some((name, axis)) => (Some(name), sweep(&config, &axis, &options)?),
        None => (None, vec![Session::open(&config.split_dir)?.run(&config, &options)?]),
    };
    let mut index = Vec::new();
    for r in &reports {
        let s = &r.summary;
        let value = axis_name.map(|n| s.config["experiment"][n].clone());
        let tm = s.routing.as_ref().map(|r| format!(" tm_proportion={:.3}", r.tm_proportion)).unwrap_or_default();
        let label = value.as_ref().map(|v| format!("{}={v} ", axis_name.unwrap_or_default())).unwrap_or_default();
        println!("{label}{} {}{tm} failures={}", s.config_hash, s.corpus, s.failures);
        index.push(serde_json::json!({
            "config_hash": s.config_hash,
            "value": value,
            "bleu": s.corpus.bleu,
        }));
    }
    if let Some(name) = axis_name {
        let path = a.out.join(format!("sweep-{name}.json"));
        let body = serde_json::to_string_pretty(&serde_json::json!({"axis": name, "runs": index}))? + "\n";
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Split(a) => cmd_split(a),
        Command::Index(a) => cmd_index(a),
        Command::Retrieve(a) => cmd_retrieve(a),
        Command::Prompt(a) => cmd_prompt(a),
        Command::Translate(a) => cmd_translate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Experiment(a) => cmd_experiment(a),
    }
}
