use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bleu::{corpus_bleu, BleuReport};
use super::EvalError;
use crate::retrieval::FmsHistogram;
use crate::routing::RouteChoice;
use crate::templates::Demonstration;

pub const SUMMARY_FILE: &str = "summary.json";
pub const RECORDS_FILE: &str = "records.jsonl";

/// One tokenized hypothesis/reference pair with its top-hit FMS.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSentence {
    pub fms: f64,
    pub hyp: Vec<String>,
    pub reference: Vec<String>,
}

fn bucket_index(edges: &[f64], score: f64) -> Option<usize> {
    const TOL: f64 = 1e-9;
    let last = edges.len().checked_sub(2)?;
    if score + TOL < edges[0] || score > edges[last + 1] + TOL {
        return None;
    }
    Some((1..=last).rev().find(|&i| score + TOL >= edges[i]).unwrap_or(0))
}

fn edge_label(edges: &[f64], i: usize) -> String {
    let close = if i + 2 == edges.len() { ']' } else { ')' };
    format!("[{:.1},{:.1}{close}", edges[i], edges[i + 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub count: usize,
    pub bleu: BleuReport,
}

/// Corpus BLEU inside each FMS bucket; empty buckets are left out.
pub fn bleu_by_bucket(records: &[ScoredSentence], edges: &[f64]) -> BTreeMap<String, BucketReport> {
    type Sides<'a> = (Vec<&'a [String]>, Vec<&'a [String]>);
    let mut groups: BTreeMap<usize, Sides> = BTreeMap::new();
    for r in records {
        if let Some(b) = bucket_index(edges, r.fms) {
            let g = groups.entry(b).or_default();
            g.0.push(&r.hyp);
            g.1.push(&r.reference);
        }
    }
    groups
        .into_iter()
        .map(|(b, (hyps, refs))| {
            let hyps: Vec<Vec<&str>> = hyps.iter().map(|h| h.iter().map(String::as_str).collect()).collect();
            let refs: Vec<Vec<&str>> = refs.iter().map(|h| h.iter().map(String::as_str).collect()).collect();
            let bleu = corpus_bleu(&hyps, &refs).expect("non-empty aligned bucket");
            (edge_label(edges, b), BucketReport { count: hyps.len(), bleu })
        })
        .collect()
}

/// Everything recorded about one test sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub id: u64,
    pub source: String,
    pub reference: String,
    pub top_fms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<RouteChoice>,
    pub template_id: u32,
    pub k: usize,
    pub demos: Vec<Demonstration>,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion: Option<String>,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempts: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// How often the top demonstration stayed a TM match under the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingSummary {
    pub threshold: f64,
    pub tm_proportion: f64,
    pub nmt_proportion: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub routed_out_histogram: Option<FmsHistogram>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub config_hash: String,
    pub config: serde_json::Value,
    pub sentences: usize,
    pub failures: usize,
    pub empty_outputs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub routing: Option<RoutingSummary>,
    pub corpus: BleuReport,
    pub buckets: BTreeMap<String, BucketReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub summary: ReportSummary,
    pub records: Vec<SentenceRecord>,
}

/// Writes `summary.json` and `records.jsonl` into `dir`.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<(), EvalError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |e| EvalError::Io(path, e)
    };
    fs::create_dir_all(dir).map_err(io(dir))?;

    let summary_path = dir.join(SUMMARY_FILE);
    let mut summary = serde_json::to_string_pretty(&report.summary).expect("summary serializes");
    summary.push('\n');
    fs::write(&summary_path, summary).map_err(io(&summary_path))?;

    let records_path = dir.join(RECORDS_FILE);
    let mut out = std::io::BufWriter::new(fs::File::create(&records_path).map_err(io(&records_path))?);
    for r in &report.records {
        serde_json::to_writer(&mut out, r).expect("record serializes");
        out.write_all(b"\n").map_err(io(&records_path))?;
    }
    out.flush().map_err(io(&records_path))?;
    Ok(())
}

pub fn load_report(dir: &Path) -> Result<ExperimentReport, EvalError> {
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read_to_string(&path).map_err(|e| EvalError::Io(path, e))
    };
    let summary: ReportSummary =
        serde_json::from_str(&read(SUMMARY_FILE)?).map_err(|e| EvalError::Format(dir.join(SUMMARY_FILE), e.to_string()))?;
    let records = read(RECORDS_FILE)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| EvalError::Format(dir.join(RECORDS_FILE), e.to_string())))
        .collect::<Result<_, _>>()?;
    Ok(ExperimentReport { summary, records })
}
