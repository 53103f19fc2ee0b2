//! Two-stage TM retrieval: an inverted index proposes up to `limit`
//! candidates by IDF-weighted token overlap, then every candidate is scored
//! exactly by FMS.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::distance::{levenshtein_bounded, Fms};
use super::tokenize::{match_tokenize, MatchTokenSeq};
use super::RetrievalError;
use crate::corpus::{corpus_checksum, SentencePair};

pub const INDEX_FORMAT: &str = "tmprompt-index";
pub const INDEX_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_CANDIDATE_LIMIT: usize = 500;

/// Inverted index over the match tokens of every TM source sentence.
///
/// Documents are numbered in ascending entry-id order, so posting lists of
/// document numbers and of entry ids are sorted the same way.
#[derive(Debug, Clone, PartialEq)]
pub struct TmIndex {
    vocab: Vec<String>,
    term_ids: HashMap<String, u32>,
    postings: Vec<Vec<u32>>,
    doc_ids: Vec<u64>,
    doc_pos: Vec<u32>,
    doc_terms: Vec<Vec<u32>>,
    corpus_checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub entry: SentencePair,
    pub fms: f64,
    pub rank: usize,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    format_version: u32,
    corpus_checksum: String,
    doc_count: usize,
    entries: Vec<IndexFileEntry>,
    postings: BTreeMap<String, Vec<u64>>,
}

#[derive(Serialize, Deserialize)]
struct IndexFileEntry {
    id: u64,
    position: u32,
    tokens: MatchTokenSeq,
}

impl TmIndex {
    pub fn build(db: &[SentencePair]) -> Result<Self, RetrievalError> {
        if db.is_empty() {
            return Err(RetrievalError::EmptyDatabase);
        }
        let mut order: Vec<u32> = (0..db.len() as u32).collect();
        order.sort_by_key(|&p| db[p as usize].id);
        if let Some(w) = order
            .windows(2)
            .find(|w| db[w[0] as usize].id == db[w[1] as usize].id)
        {
            return Err(RetrievalError::DuplicateId(db[w[0] as usize].id));
        }
        let docs: Vec<(u64, u32, MatchTokenSeq)> = order
            .par_iter()
            .map(|&p| {
                let pair = &db[p as usize];
                (pair.id, p, match_tokenize(&pair.source))
            })
            .collect();
        Ok(Self::from_docs(docs, corpus_checksum(db)))
    }

    fn from_docs(docs: Vec<(u64, u32, MatchTokenSeq)>, corpus_checksum: String) -> Self {
        let mut vocab: Vec<String> = docs
            .iter()
            .flat_map(|(_, _, t)| t.tokens().iter().cloned())
            .collect();
        vocab.sort_unstable();
        vocab.dedup();
        let term_ids: HashMap<String, u32> = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let mut postings = vec![Vec::new(); vocab.len()];
        let mut doc_ids = Vec::with_capacity(docs.len());
        let mut doc_pos = Vec::with_capacity(docs.len());
        let mut doc_terms = Vec::with_capacity(docs.len());
        for (doc, (id, pos, tokens)) in docs.into_iter().enumerate() {
            let terms: Vec<u32> = tokens.tokens().iter().map(|t| term_ids[t]).collect();
            let mut unique = terms.clone();
            unique.sort_unstable();
            unique.dedup();
            for t in unique {
                postings[t as usize].push(doc as u32);
            }
            doc_ids.push(id);
            doc_pos.push(pos);
            doc_terms.push(terms);
        }
        TmIndex {
            vocab,
            term_ids,
            postings,
            doc_ids,
            doc_pos,
            doc_terms,
            corpus_checksum,
        }
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn corpus_checksum(&self) -> &str {
        &self.corpus_checksum
    }

    /// Entry ids containing `token` (already match-normalized), ascending.
    pub fn postings(&self, token: &str) -> Option<Vec<u64>> {
        let t = *self.term_ids.get(token)?;
        Some(
            self.postings[t as usize]
                .iter()
                .map(|&d| self.doc_ids[d as usize])
                .collect(),
        )
    }

    /// Match tokens of the entry with the given id.
    pub fn entry_tokens(&self, id: u64) -> Option<Vec<&str>> {
        let doc = self.doc_ids.binary_search(&id).ok()?;
        Some(
            self.doc_terms[doc]
                .iter()
                .map(|&t| self.vocab[t as usize].as_str())
                .collect(),
        )
    }

    /// Maps a query to term ids. Tokens absent from the vocabulary get ids
    /// past the vocabulary end, distinct per token, so they never match.
    fn query_terms(&self, query: &str) -> Vec<u32> {
        let mut unknown: HashMap<String, u32> = HashMap::new();
        match_tokenize(query)
            .into_inner()
            .into_iter()
            .map(|tok| match self.term_ids.get(&tok) {
                Some(&t) => t,
                None => {
                    let next = self.vocab.len() as u32 + unknown.len() as u32;
                    *unknown.entry(tok).or_insert(next)
                }
            })
            .collect()
    }

    /// Candidate documents by IDF-weighted unique-token overlap. Returns
    /// every document when the index holds no more than `limit` of them.
    fn candidate_docs(&self, terms: &[u32], limit: usize) -> Vec<u32> {
        let n = self.doc_count();
        if n <= limit {
            return (0..n as u32).collect();
        }
        let mut unique: Vec<u32> = terms
            .iter()
            .copied()
            .filter(|&t| (t as usize) < self.vocab.len())
            .collect();
        unique.sort_unstable();
        unique.dedup();

        let mut scores: HashMap<u32, f64> = HashMap::new();
        for t in unique {
            let posting = &self.postings[t as usize];
            let idf = (1.0 + n as f64 / posting.len() as f64).ln();
            for &d in posting {
                *scores.entry(d).or_insert(0.0) += idf;
            }
        }
        let mut scored: Vec<(u32, f64)> = scores.into_iter().collect();
        let by_rank = |a: &(u32, f64), b: &(u32, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if scored.len() > limit {
            scored.select_nth_unstable_by(limit, by_rank);
            scored.truncate(limit);
        }
        scored.sort_unstable_by(by_rank);
        scored.into_iter().map(|(d, _)| d).collect()
    }

    /// Ids of the candidate entries for `query`, best lexical overlap first
    /// (ascending id when the index is small enough to be scanned whole).
    pub fn candidates(&self, query: &str, limit: usize) -> Vec<u64> {
        let terms = self.query_terms(query);
        self.candidate_docs(&terms, limit)
            .into_iter()
            .map(|d| self.doc_ids[d as usize])
            .collect()
    }

    fn rank_docs(
        &self,
        terms: &[u32],
        docs: impl IntoIterator<Item = u32>,
        k: usize,
    ) -> Vec<(u32, Fms)> {
        // best first: higher FMS, then lower doc number
        let mut top: Vec<(u32, Fms)> = Vec::with_capacity(k + 1);
        for d in docs {
            let entry = &self.doc_terms[d as usize];
            let max_len = terms.len().max(entry.len());
            let budget = if top.len() == k {
                top[k - 1].1.distance_budget(max_len)
            } else {
                usize::MAX
            };
            let Some(dist) = levenshtein_bounded(terms, entry, budget) else {
                continue;
            };
            let score = Fms::from_distance(dist, max_len);
            let at = top.partition_point(|&(od, os)| os > score || (os == score && od < d));
            if at < k {
                top.insert(at, (d, score));
                top.truncate(k);
            }
        }
        top
    }

    pub fn retrieve_top_k(
        &self,
        db: &[SentencePair],
        query: &str,
        k: usize,
        limit: usize,
    ) -> Result<Vec<RetrievalHit>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        if db.len() != self.doc_count() {
            return Err(RetrievalError::DatabaseMismatch(format!(
                "index has {} entries, database has {}",
                self.doc_count(),
                db.len()
            )));
        }
        let terms = self.query_terms(query);
        let candidates = self.candidate_docs(&terms, limit);
        let exhaustive = candidates.len() == self.doc_count();
        let mut top = self.rank_docs(&terms, candidates, k);
        // Entries outside the candidate set share no token with the query,
        // so they can only tie at zero; rescan when that could matter.
        if !exhaustive && (top.len() < k || top[k - 1].1.is_zero()) {
            top = self.rank_docs(&terms, 0..self.doc_count() as u32, k);
        }
        top.into_iter()
            .enumerate()
            .map(|(i, (d, score))| {
                let entry = &db[self.doc_pos[d as usize] as usize];
                if entry.id != self.doc_ids[d as usize] {
                    return Err(RetrievalError::DatabaseMismatch(format!(
                        "entry id {} expected at position {}, found {}",
                        self.doc_ids[d as usize], self.doc_pos[d as usize], entry.id
                    )));
                }
                Ok(RetrievalHit {
                    entry: entry.clone(),
                    fms: score.value(),
                    rank: i + 1,
                })
            })
            .collect()
    }

    /// Retrieves for many queries in parallel; output is aligned with `queries`.
    pub fn retrieve_batch<S: AsRef<str> + Sync>(
        &self,
        db: &[SentencePair],
        queries: &[S],
        k: usize,
        limit: usize,
    ) -> Result<Vec<Vec<RetrievalHit>>, RetrievalError> {
        queries
            .par_iter()
            .map(|q| self.retrieve_top_k(db, q.as_ref(), k, limit))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let file = IndexFile {
            format: INDEX_FORMAT.to_string(),
            format_version: INDEX_FORMAT_VERSION,
            corpus_checksum: self.corpus_checksum.clone(),
            doc_count: self.doc_count(),
            entries: (0..self.doc_count())
                .map(|d| IndexFileEntry {
                    id: self.doc_ids[d],
                    position: self.doc_pos[d],
                    tokens: MatchTokenSeq::from_vec(
                        self.doc_terms[d]
                            .iter()
                            .map(|&t| self.vocab[t as usize].clone())
                            .collect(),
                    ),
                })
                .collect(),
            postings: self
                .vocab
                .iter()
                .zip(&self.postings)
                .map(|(tok, docs)| {
                    (
                        tok.clone(),
                        docs.iter().map(|&d| self.doc_ids[d as usize]).collect(),
                    )
                })
                .collect(),
        };
        let json = serde_json::to_string(&file).expect("index serializes");
        fs::write(path, json).map_err(|e| RetrievalError::Io(path.to_path_buf(), e))
    }

    /// Loads an index and refuses it unless it was built from exactly `db`.
    pub fn load(path: &Path, db: &[SentencePair]) -> Result<Self, RetrievalError> {
        let raw = fs::read_to_string(path).map_err(|e| RetrievalError::Io(path.to_path_buf(), e))?;
        let bad = |message: String| RetrievalError::Format(path.to_path_buf(), message);
        let file: IndexFile = serde_json::from_str(&raw).map_err(|e| bad(e.to_string()))?;
        if file.format != INDEX_FORMAT {
            return Err(bad(format!("not an index file (format '{}')", file.format)));
        }
        if file.format_version != INDEX_FORMAT_VERSION {
            return Err(bad(format!("unsupported format_version {}", file.format_version)));
        }
        let actual = corpus_checksum(db);
        if file.corpus_checksum != actual {
            return Err(RetrievalError::DatabaseMismatch(format!(
                "index built from corpus {}, database is {}",
                file.corpus_checksum, actual
            )));
        }
        if file.doc_count != file.entries.len() || file.doc_count != db.len() {
            return Err(bad("entry count does not match doc_count".into()));
        }
        if file.entries.windows(2).any(|w| w[0].id >= w[1].id) {
            return Err(bad("entries not in ascending id order".into()));
        }
        let docs = file
            .entries
            .into_iter()
            .map(|e| (e.id, e.position, e.tokens))
            .collect();
        let index = Self::from_docs(docs, file.corpus_checksum);
        let rebuilt: BTreeMap<String, Vec<u64>> = index
            .vocab
            .iter()
            .map(|t| (t.clone(), index.postings(t).expect("vocab term")))
            .collect();
        if rebuilt != file.postings {
            return Err(bad("postings disagree with entry tokens".into()));
        }
        Ok(index)
    }
}
