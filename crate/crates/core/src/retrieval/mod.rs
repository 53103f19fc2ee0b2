//! Fuzzy-match retrieval over a translation memory.

mod distance;
mod histogram;
mod index;
mod select;
mod tokenize;

use std::path::PathBuf;

pub use distance::{fms, fms_exact, levenshtein, levenshtein_bounded, Fms};
pub use histogram::{bucket_label, bucket_of, fms_histogram, FmsHistogram, BUCKET_EDGES};
pub use index::{RetrievalHit, TmIndex, DEFAULT_CANDIDATE_LIMIT, INDEX_FORMAT, INDEX_FORMAT_VERSION};
pub use select::{sample_pairs, select_demonstrations, SelectionStrategy};
pub use tokenize::{match_tokenize, MatchTokenSeq};

use serde::{Deserialize, Serialize};

/// Ranked hits for one test query, as written to a hits JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryHits {
    pub query_id: u64,
    pub query: String,
    pub hits: Vec<RetrievalHit>,
}

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("cannot index an empty TM database")]
    EmptyDatabase,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("duplicate entry id {0} in TM database")]
    DuplicateId(u64),
    #[error("index does not belong to this database: {0}")]
    DatabaseMismatch(String),
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error("{0}: {1}")]
    Format(PathBuf, String),
    #[error("random selection needs {k} pairs but the pool has {pool}")]
    PoolTooSmall { pool: usize, k: usize },
    #[error("random-out-domain selection requires an auxiliary pool")]
    MissingAuxPool,
    #[error("histogram of an empty score list")]
    EmptyScores,
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
}
