use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use futures::stream::{self, StreamExt};
use rayon::prelude::*;
use serde_json::json;

use super::checkpoint::{self, CheckpointLine, CheckpointWriter, CHECKPOINT_FILE};
use super::{ExperimentConfig, ExperimentError};
use crate::backend::{Backend, Completion};
use crate::corpus::{load_split, read_pairs_jsonl, read_split_manifest, sha256_hex, CorpusSplit, SentencePair, SplitManifest};
use crate::eval::{
    bleu_by_bucket, corpus_bleu, emit_report, ExperimentReport, ReportSummary, RoutingSummary, ScoredSentence,
    SentenceRecord,
};
use crate::postprocess::{clean_output, score_tokenize};
use crate::retrieval::{fms_histogram, sample_pairs, RetrievalHit, SelectionStrategy, TmIndex, BUCKET_EDGES};
use crate::routing::{route_demo, NmtHypothesisTable, RouteChoice, RoutingError, RoutingPolicy};
use crate::templates::{order_demos, render, Catalog, DemoOrder, Demonstration, PromptRequest, Provenance};

/// Depth of the shared retrieval; smaller k take prefixes of it.
pub const RETRIEVAL_DEPTH: usize = 9;

/// Where and how a run writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Reports go to `<out_root>/<config hash>/`; nothing is written when unset.
    pub out_root: Option<PathBuf>,
    /// Reuse completions already in the run directory's checkpoint.
    pub resume: bool,
}

/// Per-query seed for the random strategies.
pub fn derive_seed(seed: u64, query_id: u64) -> u64 {
    let mut z = seed ^ query_id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// How demonstrations are chosen for one query.
#[derive(Debug, Clone, Copy)]
pub struct DemoSpec<'a> {
    pub strategy: SelectionStrategy,
    pub k: usize,
    pub order: DemoOrder,
    pub policy: &'a RoutingPolicy,
    pub db: &'a [SentencePair],
    pub aux_pool: Option<&'a [SentencePair]>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedDemos {
    pub demos: Vec<Demonstration>,
    /// Routing of the best hit; only set for top-fms selection.
    pub route: Option<RouteChoice>,
}

/// Selects, orders and routes the demonstrations for `query`. `hits` are its
/// ranked retrieval hits, used only by top-fms selection.
pub fn build_demos(
    query: &SentencePair,
    hits: &[RetrievalHit],
    spec: &DemoSpec<'_>,
) -> Result<SelectedDemos, ExperimentError> {
    let (pool, provenance) = match spec.strategy {
        SelectionStrategy::TopFms => {
            let best = hits.first().ok_or(RoutingError::NoHit(query.id))?;
            let top = hits.iter().take(spec.k).map(Demonstration::from_hit).collect();
            let ordered = order_demos(top, spec.order)?.demos;
            let demos = ordered
                .into_iter()
                .map(|d| route_demo(query, d, spec.policy).map(|(_, d)| d))
                .collect::<Result<_, _>>()?;
            let route = if spec.policy.routes_to_nmt(best.fms) { RouteChoice::Nmt } else { RouteChoice::Tm };
            return Ok(SelectedDemos { demos, route: Some(route) });
        }
        SelectionStrategy::RandomInDomain => (spec.db, Provenance::RandomIn),
        SelectionStrategy::RandomOutDomain => (
            spec.aux_pool.ok_or(crate::retrieval::RetrievalError::MissingAuxPool)?,
            Provenance::RandomOut,
        ),
    };
    let demos = sample_pairs(pool, spec.k, derive_seed(spec.seed, query.id))?
        .into_iter()
        .map(|p| Demonstration {
            source: p.source.clone(),
            target: p.target.clone(),
            provenance,
            fms: None,
            entry_id: Some(p.id),
        })
        .collect();
    Ok(SelectedDemos { demos, route: None })
}

#[derive(Debug)]
struct CachedHits {
    depth: usize,
    hits: Arc<Vec<RetrievalHit>>,
}

/// A loaded file and the SHA-256 of its bytes.
#[derive(Debug)]
struct Loaded<T> {
    value: T,
    sha256: String,
}

type FileCache<T> = Mutex<HashMap<PathBuf, Arc<Loaded<T>>>>;

/// A loaded split with its index and caches, shared by every run on it.
pub struct Session {
    split_dir: PathBuf,
    split: CorpusSplit,
    manifest: SplitManifest,
    index: TmIndex,
    hits: Mutex<HashMap<(String, u64, usize), CachedHits>>,
    hypotheses: FileCache<NmtHypothesisTable>,
    pools: FileCache<Vec<SentencePair>>,
    catalogs: FileCache<Catalog>,
    backends: Mutex<Vec<Backend>>,
    runtime: OnceLock<tokio::runtime::Runtime>,
}

/// A prepared sentence before translation.
struct Prepared {
    top_fms: f64,
    route: Option<RouteChoice>,
    request: PromptRequest,
}

fn load_cached<T>(
    cache: &FileCache<T>,
    path: &Path,
    parse: impl FnOnce(&Path) -> Result<T, ExperimentError>,
) -> Result<Arc<Loaded<T>>, ExperimentError> {
    if let Some(hit) = cache.lock().expect("cache lock").get(path) {
        return Ok(hit.clone());
    }
    let bytes = fs::read(path).map_err(|e| ExperimentError::Io(path.to_path_buf(), e))?;
    let loaded = Arc::new(Loaded { value: parse(path)?, sha256: sha256_hex(&bytes) });
    cache.lock().expect("cache lock").insert(path.to_path_buf(), loaded.clone());
    Ok(loaded)
}

impl Session {
    /// Loads and verifies the split in `split_dir` and indexes its TM database.
    pub fn open(split_dir: &Path) -> Result<Self, ExperimentError> {
        let manifest = read_split_manifest(split_dir)?;
        let split = load_split(split_dir)?;
        let index = TmIndex::build(&split.tm_database)?;
        Ok(Session {
            split_dir: split_dir.to_path_buf(),
            split,
            manifest,
            index,
            hits: Mutex::default(),
            hypotheses: Mutex::default(),
            pools: Mutex::default(),
            catalogs: Mutex::default(),
            backends: Mutex::default(),
            runtime: OnceLock::new(),
        })
    }

    pub fn split(&self) -> &CorpusSplit {
        &self.split
    }

    pub fn manifest(&self) -> &SplitManifest {
        &self.manifest
    }

    pub fn index(&self) -> &TmIndex {
        &self.index
    }

    /// Number of (query, limit) retrievals held in the cache.
    pub fn cached_retrievals(&self) -> usize {
        self.hits.lock().expect("hits lock").len()
    }

    /// Ranked hits for each query, at least `depth` deep where the database
    /// allows. Cached per (database checksum, query id, limit).
    pub fn hits_for(
        &self,
        queries: &[SentencePair],
        depth: usize,
        limit: usize,
    ) -> Result<Vec<Arc<Vec<RetrievalHit>>>, ExperimentError> {
        let checksum = self.index.corpus_checksum().to_string();
        let key = |q: &SentencePair| (checksum.clone(), q.id, limit);
        let missing: Vec<&SentencePair> = {
            let cache = self.hits.lock().expect("hits lock");
            queries
                .iter()
                .filter(|q| cache.get(&key(q)).is_none_or(|c| c.depth < depth))
                .collect()
        };
        if !missing.is_empty() {
            let texts: Vec<&str> = missing.iter().map(|q| q.source.as_str()).collect();
            let found = self.index.retrieve_batch(&self.split.tm_database, &texts, depth, limit)?;
            let mut cache = self.hits.lock().expect("hits lock");
            for (q, hits) in missing.into_iter().zip(found) {
                cache.insert(key(q), CachedHits { depth, hits: Arc::new(hits) });
            }
        }
        let cache = self.hits.lock().expect("hits lock");
        Ok(queries.iter().map(|q| cache[&key(q)].hits.clone()).collect())
    }

    fn backend(&self, config: &ExperimentConfig) -> Result<Backend, ExperimentError> {
        let mut backends = self.backends.lock().expect("backend lock");
        if let Some(b) = backends.iter().find(|b| *b.config() == config.backend) {
            return Ok(b.clone());
        }
        let b = Backend::new(config.backend.clone())?;
        backends.push(b.clone());
        Ok(b)
    }

    fn runtime(&self) -> &tokio::runtime::Runtime {
        self.runtime.get_or_init(|| {
            tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .expect("tokio runtime")
        })
    }

    fn catalog(&self, config: &ExperimentConfig) -> Result<(Arc<Loaded<Catalog>>, bool), ExperimentError> {
        match &config.catalog {
            Some(path) => Ok((load_cached(&self.catalogs, path, |p| Ok(Catalog::load(p)?))?, true)),
            None => Ok((
                Arc::new(Loaded { value: Catalog::builtin().clone(), sha256: String::new() }),
                false,
            )),
        }
    }

    /// The config together with checksums of every input it names.
    fn snapshot(&self, config: &ExperimentConfig) -> Result<serde_json::Value, ExperimentError> {
        let mut snap = json!({
            "experiment": config,
            "split": {
                "seed": self.manifest.seed,
                "lang": self.manifest.lang,
                "checksums": self.manifest.checksums,
            },
        });
        if config.catalog.is_some() {
            snap["catalog_sha256"] = json!(self.catalog(config)?.0.sha256);
        }
        if let Some(p) = &config.nmt_hypotheses {
            snap["nmt_hypotheses_sha256"] = json!(self.hypothesis_table(p)?.sha256);
        }
        if let Some(p) = &config.aux_pool {
            snap["aux_pool_sha256"] = json!(self.aux_pool(p)?.sha256);
        }
        Ok(snap)
    }

    fn hypothesis_table(&self, path: &Path) -> Result<Arc<Loaded<NmtHypothesisTable>>, ExperimentError> {
        load_cached(&self.hypotheses, path, |p| Ok(NmtHypothesisTable::load(p)?))
    }

    fn aux_pool(&self, path: &Path) -> Result<Arc<Loaded<Vec<SentencePair>>>, ExperimentError> {
        load_cached(&self.pools, path, |p| Ok(read_pairs_jsonl(p)?))
    }

    fn check_config(&self, config: &ExperimentConfig) -> Result<(), ExperimentError> {
        config.validate()?;
        if config.split_dir != self.split_dir {
            return Err(ExperimentError::Config(format!(
                "config names split {} but the session holds {}",
                config.split_dir.display(),
                self.split_dir.display()
            )));
        }
        if let Some(lang) = &config.lang {
            if *lang != self.split.lang {
                return Err(ExperimentError::Config(format!(
                    "config language {}-{} differs from the split's {}-{}",
                    lang.src_code, lang.tgt_code, self.split.lang.src_code, self.split.lang.tgt_code
                )));
            }
        }
        Ok(())
    }

    fn test_set(&self, config: &ExperimentConfig) -> &[SentencePair] {
        let n = config.limit.unwrap_or(usize::MAX).min(self.split.test_set.len());
        &self.split.test_set[..n]
    }

    /// Hex SHA-256 prefix of the config snapshot; names the run directory.
    pub fn config_hash(&self, config: &ExperimentConfig) -> Result<String, ExperimentError> {
        let snap = self.snapshot(config)?;
        Ok(sha256_hex(serde_json::to_string(&snap).expect("snapshot serializes").as_bytes())[..16].to_string())
    }

    /// Renders the prompt of every test sentence without translating.
    pub fn prompts(&self, config: &ExperimentConfig) -> Result<Vec<PromptRequest>, ExperimentError> {
        self.check_config(config)?;
        Ok(self.prepare(config)?.into_iter().map(|p| p.request).collect())
    }

    fn prepare(&self, config: &ExperimentConfig) -> Result<Vec<Prepared>, ExperimentError> {
        let test = self.test_set(config);
        let (catalog, _) = self.catalog(config)?;
        let template = catalog.value.get(config.template_id)?;
        let table = match &config.nmt_hypotheses {
            Some(p) => self.hypothesis_table(p)?.value.clone(),
            None => NmtHypothesisTable::new(),
        };
        let policy = RoutingPolicy::new(config.threshold, table)?;
        let pool = config.aux_pool.as_deref().map(|p| self.aux_pool(p)).transpose()?;
        let spec = DemoSpec {
            strategy: config.selection,
            k: config.k,
            order: config.demo_order,
            policy: &policy,
            db: &self.split.tm_database,
            aux_pool: pool.as_ref().map(|p| p.value.as_slice()),
            seed: config.seed,
        };
        let hits = self.hits_for(test, config.k.max(RETRIEVAL_DEPTH), config.candidate_limit)?;
        let lang = &self.split.lang;
        test.par_iter()
            .zip(hits.par_iter())
            .map(|(q, hits)| {
                let prepare = || -> Result<Prepared, ExperimentError> {
                    let top_fms = hits.first().map_or(0.0, |h| h.fms);
                    let selected = if template.with_tm {
                        build_demos(q, hits, &spec)?
                    } else {
                        SelectedDemos { demos: Vec::new(), route: None }
                    };
                    let request = render(template, lang, &q.source, &selected.demos)?.with_query_id(q.id);
                    Ok(Prepared { top_fms, route: selected.route, request })
                };
                prepare().map_err(ExperimentError::at(q.id))
            })
            .collect()
    }

    /// Runs one experiment on this session's split.
    pub fn run(&self, config: &ExperimentConfig, options: &RunOptions) -> Result<ExperimentReport, ExperimentError> {
        self.check_config(config)?;
        let snapshot = self.snapshot(config)?;
        let config_hash = self.config_hash(config)?;
        let prepared = self.prepare(config)?;
        let test = self.test_set(config);

        let run_dir = options.out_root.as_ref().map(|root| root.join(&config_hash));
        let (done, writer) = match &run_dir {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| ExperimentError::Io(dir.clone(), e))?;
                let snap_path = dir.join("config.json");
                let snap_text = serde_json::to_string_pretty(&snapshot).expect("snapshot serializes") + "\n";
                fs::write(&snap_path, snap_text).map_err(|e| ExperimentError::Io(snap_path, e))?;
                let path = dir.join(CHECKPOINT_FILE);
                let done = if options.resume { checkpoint::load(&path)? } else { HashMap::new() };
                (done, Some(CheckpointWriter::open(&path, options.resume)?))
            }
            None => (HashMap::new(), None),
        };

        let backend = self.backend(config)?;
        let outcomes = self.translate_all(config, &backend, &prepared, &done, writer.as_ref())?;
        let report = assemble(config, config_hash, snapshot, test, prepared, outcomes, &self.split.lang.tgt_code)?;
        if let Some(dir) = &run_dir {
            emit_report(&report, dir)?;
        }
        Ok(report)
    }

    fn translate_all(
        &self,
        config: &ExperimentConfig,
        backend: &Backend,
        prepared: &[Prepared],
        done: &HashMap<u64, CheckpointLine>,
        writer: Option<&CheckpointWriter>,
    ) -> Result<Vec<Outcome>, ExperimentError> {
        let hashes: Vec<String> = prepared.iter().map(|p| sha256_hex(p.request.rendered.as_bytes())).collect();
        let mut outcomes: Vec<Option<Outcome>> = prepared
            .iter()
            .zip(&hashes)
            .map(|(p, h)| {
                let id = p.request.query_id.expect("query id set");
                done.get(&id).filter(|c| c.prompt_sha256 == *h).map(|c| Outcome {
                    completion: c.completion.clone(),
                    attempts: c.attempts,
                    error: None,
                })
            })
            .collect();
        let pending: Vec<usize> = (0..prepared.len()).filter(|&i| outcomes[i].is_none()).collect();
        let width = backend.config().max_in_flight.max(1) * 2;

        let finished = self.runtime().block_on(async {
            let mut results = stream::iter(pending)
                .map(|i| async move { (i, backend.translate(&prepared[i].request, &config.decoding).await) })
                .buffer_unordered(width);
            let mut finished = Vec::new();
            while let Some((i, result)) = results.next().await {
                let id = prepared[i].request.query_id.expect("query id set");
                let outcome = Outcome::from_result(result.as_ref());
                if let Some(w) = writer {
                    w.write(&CheckpointLine {
                        id,
                        prompt_sha256: hashes[i].clone(),
                        completion: outcome.completion.clone(),
                        attempts: outcome.attempts,
                        error: outcome.error.clone(),
                    })?;
                }
                if config.fail_fast {
                    if let Err(e) = result {
                        return Err(ExperimentError::at(id)(e.into()));
                    }
                }
                finished.push((i, outcome));
            }
            Ok(finished)
        })?;
        for (i, o) in finished {
            outcomes[i] = Some(o);
        }
        Ok(outcomes.into_iter().map(|o| o.expect("every sentence translated")).collect())
    }
}

#[derive(Debug, Clone)]
struct Outcome {
    completion: Option<String>,
    attempts: Option<u32>,
    error: Option<String>,
}

impl Outcome {
    fn from_result(result: Result<&Completion, &crate::backend::BackendError>) -> Self {
        match result {
            Ok(c) => Outcome { completion: Some(c.text.clone()), attempts: Some(c.attempt_count), error: None },
            Err(e) => Outcome { completion: None, attempts: None, error: Some(e.to_string()) },
        }
    }
}

fn assemble(
    config: &ExperimentConfig,
    config_hash: String,
    snapshot: serde_json::Value,
    test: &[SentencePair],
    prepared: Vec<Prepared>,
    outcomes: Vec<Outcome>,
    tgt_code: &str,
) -> Result<ExperimentReport, ExperimentError> {
    let records: Vec<SentenceRecord> = test
        .iter()
        .zip(prepared)
        .zip(outcomes)
        .map(|((q, p), o)| SentenceRecord {
            id: q.id,
            source: q.source.clone(),
            reference: q.target.clone(),
            top_fms: p.top_fms,
            route: p.route,
            template_id: p.request.template_id,
            k: p.request.k,
            output: o.completion.as_deref().map(clean_output).unwrap_or_default(),
            demos: p.request.demos,
            prompt: p.request.rendered,
            completion: o.completion,
            attempts: o.attempts,
            error: o.error,
        })
        .collect();

    let tokenize = |text: &str| -> Vec<String> {
        let mut toks = score_tokenize(text, tgt_code);
        if config.lowercase_bleu {
            toks.iter_mut().for_each(|t| t.make_ascii_lowercase());
        }
        toks
    };
    let scored: Vec<ScoredSentence> = records
        .par_iter()
        .map(|r| ScoredSentence { fms: r.top_fms, hyp: tokenize(&r.output), reference: tokenize(&r.reference) })
        .collect();
    let hyps: Vec<&[String]> = scored.iter().map(|s| s.hyp.as_slice()).collect();
    let refs: Vec<&[String]> = scored.iter().map(|s| s.reference.as_slice()).collect();
    let hyps: Vec<Vec<&str>> = hyps.iter().map(|h| h.iter().map(String::as_str).collect()).collect();
    let refs: Vec<Vec<&str>> = refs.iter().map(|h| h.iter().map(String::as_str).collect()).collect();
    let corpus = corpus_bleu(&hyps, &refs)?;
    let buckets = bleu_by_bucket(&scored, &BUCKET_EDGES);

    let routing = records.iter().all(|r| r.route.is_some()).then(|| {
        let routed: Vec<f64> =
            records.iter().filter(|r| r.route == Some(RouteChoice::Nmt)).map(|r| r.top_fms).collect();
        let total = records.len().max(1) as f64;
        RoutingSummary {
            threshold: config.threshold,
            tm_proportion: (records.len() - routed.len()) as f64 / total,
            nmt_proportion: routed.len() as f64 / total,
            routed_out_histogram: (!routed.is_empty())
                .then(|| fms_histogram(&routed).expect("FMS values lie in [0, 1]")),
        }
    });

    let summary = ReportSummary {
        config_hash,
        config: snapshot,
        sentences: records.len(),
        failures: records.iter().filter(|r| r.error.is_some()).count(),
        empty_outputs: records.iter().filter(|r| r.completion.is_some() && r.output.is_empty()).count(),
        routing,
        corpus,
        buckets,
    };
    Ok(ExperimentReport { summary, records })
}
