//! End-to-end runs and parameter sweeps.

mod checkpoint;
mod run;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{BackendConfig, BackendError, DecodingParams};
use crate::corpus::{CorpusError, LangPair};
use crate::eval::{EvalError, ExperimentReport};
use crate::retrieval::{RetrievalError, SelectionStrategy, DEFAULT_CANDIDATE_LIMIT};
use crate::routing::RoutingError;
use crate::templates::{DemoOrder, TemplateError, DEFAULT_TM_TEMPLATE};

pub use run::{build_demos, derive_seed, DemoSpec, RunOptions, SelectedDemos, Session, RETRIEVAL_DEPTH};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("sentence {id}: {source}")]
    Sentence {
        id: u64,
        #[source]
        source: Box<ExperimentError>,
    },
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error("{0}: {1}")]
    Format(PathBuf, String),
}

impl ExperimentError {
    fn at(id: u64) -> impl FnOnce(ExperimentError) -> ExperimentError {
        move |e| ExperimentError::Sentence { id, source: Box::new(e) }
    }
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Directory written by `save_split`.
    pub split_dir: PathBuf,
    /// Must agree with the split manifest when given.
    pub lang: Option<LangPair>,
    pub template_id: u32,
    /// Template catalog file; the built-in catalog when unset.
    pub catalog: Option<PathBuf>,
    pub k: usize,
    pub demo_order: DemoOrder,
    pub selection: SelectionStrategy,
    /// Pair JSONL used by random-out-domain selection.
    pub aux_pool: Option<PathBuf>,
    pub threshold: f64,
    /// `{id, hypothesis}` JSONL consulted when routing to NMT.
    pub nmt_hypotheses: Option<PathBuf>,
    pub backend: BackendConfig,
    pub decoding: DecodingParams,
    pub seed: u64,
    pub candidate_limit: usize,
    pub lowercase_bleu: bool,
    /// Only the first `limit` test sentences.
    pub limit: Option<usize>,
    /// Abort on the first failed translation instead of recording it.
    pub fail_fast: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            split_dir: PathBuf::new(),
            lang: None,
            template_id: DEFAULT_TM_TEMPLATE,
            catalog: None,
            k: 5,
            demo_order: DemoOrder::Descending,
            selection: SelectionStrategy::TopFms,
            aux_pool: None,
            threshold: 0.0,
            nmt_hypotheses: None,
            backend: BackendConfig::default(),
            decoding: DecodingParams::default(),
            seed: 0,
            candidate_limit: DEFAULT_CANDIDATE_LIMIT,
            lowercase_bleu: false,
            limit: None,
            fail_fast: false,
        }
    }
}

impl ExperimentConfig {
    pub fn new(split_dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig { split_dir: split_dir.into(), ..Default::default() }
    }

    /// TOML for `.toml` files, JSON otherwise.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let raw = fs::read_to_string(path).map_err(|e| ExperimentError::Io(path.to_path_buf(), e))?;
        let fmt = |m: String| ExperimentError::Format(path.to_path_buf(), m);
        let mut config: ExperimentConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&raw).map_err(|e| fmt(e.to_string()))?
        } else {
            serde_json::from_str(&raw).map_err(|e| fmt(e.to_string()))?
        };
        config.resolve_paths(path.parent().unwrap_or(Path::new("")));
        config.validate()?;
        Ok(config)
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.split_dir);
        for p in [&mut self.catalog, &mut self.aux_pool, &mut self.nmt_hypotheses, &mut self.backend.transcript]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.into()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.candidate_limit == 0 {
            return bad("candidate_limit must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must lie in [0, 1]");
        }
        if self.threshold > 0.0 {
            if self.nmt_hypotheses.is_none() {
                return bad("a positive threshold needs nmt_hypotheses");
            }
            if self.selection != SelectionStrategy::TopFms {
                return bad("routing applies to top-fms selection only");
            }
        }
        if self.selection == SelectionStrategy::RandomOutDomain && self.aux_pool.is_none() {
            return bad("random-out-domain selection needs aux_pool");
        }
        if self.limit == Some(0) {
            return bad("limit must be at least 1");
        }
        self.backend.validate()?;
        self.decoding.validate()?;
        Ok(())
    }
}

/// One sweep dimension and its values.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    K(Vec<usize>),
    Threshold(Vec<f64>),
    Template(Vec<u32>),
    Order(Vec<DemoOrder>),
    Selection(Vec<SelectionStrategy>),
}

impl SweepAxis {
    /// k = 1..=9.
    pub fn k_grid() -> Self {
        SweepAxis::K((1..=9).collect())
    }

    /// 0.0, 0.1, ..., 1.0.
    pub fn threshold_grid() -> Self {
        SweepAxis::Threshold((0..=10).map(|i| i as f64 / 10.0).collect())
    }

    pub fn both_orders() -> Self {
        SweepAxis::Order(vec![DemoOrder::Ascending, DemoOrder::Descending])
    }

    pub fn len(&self) -> usize {
        match self {
            SweepAxis::K(v) => v.len(),
            SweepAxis::Threshold(v) => v.len(),
            SweepAxis::Template(v) => v.len(),
            SweepAxis::Order(v) => v.len(),
            SweepAxis::Selection(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The base config with each axis value applied, in axis order.
    pub fn configs(&self, base: &ExperimentConfig) -> Vec<ExperimentConfig> {
        let with = |f: &dyn Fn(&mut ExperimentConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        match self {
            SweepAxis::K(v) => v.iter().map(|&k| with(&|c| c.k = k)).collect(),
            SweepAxis::Threshold(v) => v.iter().map(|&t| with(&|c| c.threshold = t)).collect(),
            SweepAxis::Template(v) => v.iter().map(|&t| with(&|c| c.template_id = t)).collect(),
            SweepAxis::Order(v) => v.iter().map(|&o| with(&|c| c.demo_order = o)).collect(),
            SweepAxis::Selection(v) => v.iter().map(|&s| with(&|c| c.selection = s)).collect(),
        }
    }
}

/// Runs `config` once in a fresh session.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    Session::open(&config.split_dir)?.run(config, &RunOptions::default())
}

/// One report per axis value, sharing a session so the index, retrieval
/// results and backend are reused.
pub fn sweep(
    base: &ExperimentConfig,
    axis: &SweepAxis,
    options: &RunOptions,
) -> Result<Vec<ExperimentReport>, ExperimentError> {
    if axis.is_empty() {
        return Err(ExperimentError::Config("sweep axis has no values".into()));
    }
    let configs = axis.configs(base);
    for c in &configs {
        c.validate()?;
    }
    let session = Session::open(&base.split_dir)?;
    configs.iter().map(|c| session.run(c, options)).collect()
}
