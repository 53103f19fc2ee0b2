//! Replacing weak TM matches with NMT hypotheses below an FMS threshold.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::SentencePair;
use crate::retrieval::{fms_histogram, FmsHistogram, QueryHits, RetrievalHit};
use crate::templates::{Demonstration, Provenance};

#[derive(Debug, thiserror::Error)]
pub enum RoutingError {
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("no NMT hypothesis for query {0}")]
    MissingHypothesis(u64),
    #[error("query {query} is aligned with hits for query {hits}")]
    Misaligned { query: u64, hits: u64 },
    #[error("{queries} queries but {hits} hit lists")]
    LengthMismatch { queries: usize, hits: usize },
    #[error("query {0} has no retrieval hit")]
    NoHit(u64),
    #[error("{path}:{line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct HypothesisLine {
    id: u64,
    hypothesis: String,
}

/// Pre-computed NMT translations keyed by test query id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NmtHypothesisTable(BTreeMap<u64, String>);

impl NmtHypothesisTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reads `{id, hypothesis}` JSONL. A repeated id keeps the last line.
    pub fn load(path: &Path) -> Result<Self, RoutingError> {
        let file = File::open(path).map_err(|e| RoutingError::Io(path.to_path_buf(), e))?;
        let mut table = BTreeMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| RoutingError::Io(path.to_path_buf(), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let h: HypothesisLine = serde_json::from_str(&line).map_err(|e| RoutingError::Format {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            table.insert(h.id, h.hypothesis);
        }
        Ok(NmtHypothesisTable(table))
    }

    pub fn insert(&mut self, id: u64, hypothesis: impl Into<String>) {
        self.0.insert(id, hypothesis.into());
    }

    pub fn get(&self, id: u64) -> Option<&str> {
        self.0.get(&id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<(u64, String)> for NmtHypothesisTable {
    fn from_iter<I: IntoIterator<Item = (u64, String)>>(iter: I) -> Self {
        NmtHypothesisTable(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone)]
pub struct RoutingPolicy {
    threshold: f64,
    hypotheses: NmtHypothesisTable,
}

impl RoutingPolicy {
    pub fn new(threshold: f64, hypotheses: NmtHypothesisTable) -> Result<Self, RoutingError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(RoutingError::InvalidThreshold(threshold));
        }
        Ok(RoutingPolicy { threshold, hypotheses })
    }

    /// Threshold 0: every query keeps its TM demonstration.
    pub fn pure_tm() -> Self {
        RoutingPolicy { threshold: 0.0, hypotheses: NmtHypothesisTable::new() }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn hypotheses(&self) -> &NmtHypothesisTable {
        &self.hypotheses
    }

    pub fn routes_to_nmt(&self, fms: f64) -> bool {
        fms < self.threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteChoice {
    Tm,
    Nmt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedDemo {
    pub query_id: u64,
    pub choice: RouteChoice,
    pub tm_fms: f64,
    pub demonstration: Demonstration,
}

pub fn route(query: &SentencePair, top_hit: &RetrievalHit, policy: &RoutingPolicy) -> Result<RoutedDemo, RoutingError> {
    let (choice, demonstration) = route_demo(query, Demonstration::from_hit(top_hit), policy)?;
    Ok(RoutedDemo { query_id: query.id, choice, tm_fms: top_hit.fms, demonstration })
}

/// Applies the policy to one TM demonstration. Demonstrations without an
/// FMS are not TM matches and pass through unchanged.
pub fn route_demo(
    query: &SentencePair,
    demo: Demonstration,
    policy: &RoutingPolicy,
) -> Result<(RouteChoice, Demonstration), RoutingError> {
    match demo.fms {
        Some(f) if demo.provenance == Provenance::Tm && policy.routes_to_nmt(f) => {
            let hyp = policy
                .hypotheses
                .get(query.id)
                .ok_or(RoutingError::MissingHypothesis(query.id))?;
            let nmt = Demonstration {
                source: query.source.clone(),
                target: hyp.to_string(),
                provenance: Provenance::Nmt,
                fms: None,
                entry_id: None,
            };
            Ok((RouteChoice::Nmt, nmt))
        }
        _ => Ok((RouteChoice::Tm, demo)),
    }
}

/// Routes each of a query's hits independently, keeping their order.
pub fn route_hits(
    query: &SentencePair,
    hits: &[RetrievalHit],
    policy: &RoutingPolicy,
) -> Result<Vec<RoutedDemo>, RoutingError> {
    hits.iter().map(|h| route(query, h, policy)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub entries: Vec<RoutedDemo>,
    pub tm_proportion: f64,
    pub nmt_proportion: f64,
    /// FMS distribution of the queries sent to NMT; absent when none were.
    pub routed_out_histogram: Option<FmsHistogram>,
}

impl RoutingDecision {
    pub fn nmt_ids(&self) -> Vec<u64> {
        self.entries
            .iter()
            .filter(|e| e.choice == RouteChoice::Nmt)
            .map(|e| e.query_id)
            .collect()
    }
}

/// Routes every query on its top hit.
pub fn route_batch(
    queries: &[SentencePair],
    hits: &[QueryHits],
    policy: &RoutingPolicy,
) -> Result<RoutingDecision, RoutingError> {
    if queries.len() != hits.len() {
        return Err(RoutingError::LengthMismatch { queries: queries.len(), hits: hits.len() });
    }
    let mut entries = Vec::with_capacity(queries.len());
    for (q, h) in queries.iter().zip(hits) {
        if q.id != h.query_id {
            return Err(RoutingError::Misaligned { query: q.id, hits: h.query_id });
        }
        let top = h.hits.first().ok_or(RoutingError::NoHit(q.id))?;
        entries.push(route(q, top, policy)?);
    }
    let routed_out: Vec<f64> = entries
        .iter()
        .filter(|e| e.choice == RouteChoice::Nmt)
        .map(|e| e.tm_fms)
        .collect();
    let total = entries.len().max(1) as f64;
    let nmt_proportion = routed_out.len() as f64 / total;
    let tm_proportion = if entries.is_empty() { 1.0 } else { (entries.len() - routed_out.len()) as f64 / total };
    let routed_out_histogram = if routed_out.is_empty() {
        None
    } else {
        Some(fms_histogram(&routed_out).expect("FMS values lie in [0, 1]"))
    };
    Ok(RoutingDecision { entries, tm_proportion, nmt_proportion, routed_out_histogram })
}
