//! multi-bleu compatible corpus BLEU and experiment reports.

mod bleu;
mod report;

use std::path::PathBuf;

pub use bleu::{
    corpus_bleu, corpus_bleu_with, sentence_stats, whitespace_tokens, BleuOptions, BleuReport, NgramStats, MAX_ORDER,
};
pub use report::{
    bleu_by_bucket, emit_report, load_report, BucketReport, ExperimentReport, ReportSummary, RoutingSummary, ScoredSentence,
    SentenceRecord, RECORDS_FILE, SUMMARY_FILE,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{hyps} hypotheses but {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("cannot score an empty corpus")]
    EmptyCorpus,
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error("{0}: {1}")]
    Format(PathBuf, String),
}
