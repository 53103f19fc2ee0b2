use std::collections::HashMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;

pub const MAX_ORDER: usize = 4;

/// Additive n-gram statistics for one or more sentence pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl std::ops::Add for NgramStats {
    type Output = NgramStats;

    fn add(mut self, o: NgramStats) -> NgramStats {
        for n in 0..MAX_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
        self
    }
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches of one hypothesis against one reference.
pub fn sentence_stats<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> NgramStats {
    let mut stats = NgramStats { hyp_len: hyp.len() as u64, ref_len: reference.len() as u64, ..Default::default() };
    for n in 1..=MAX_ORDER {
        let refs = ngram_counts(reference, n);
        for (gram, count) in ngram_counts(hyp, n) {
            stats.totals[n - 1] += count;
            stats.matches[n - 1] += count.min(refs.get(&gram).copied().unwrap_or(0));
        }
    }
    stats
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// Score on the 0..100 scale.
    pub bleu: f64,
    /// Modified precisions p1..p4 as fractions.
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub ratio: f64,
    pub hyp_length: u64,
    pub ref_length: u64,
    /// Some p_n is zero, which forces BLEU to zero.
    pub zero_precision: bool,
    pub stats: NgramStats,
}

impl BleuReport {
    pub fn from_stats(stats: NgramStats) -> Self {
        let precisions: [f64; MAX_ORDER] = std::array::from_fn(|n| {
            if stats.totals[n] == 0 {
                0.0
            } else {
                stats.matches[n] as f64 / stats.totals[n] as f64
            }
        });
        let zero_precision = precisions.contains(&0.0);
        let (hyp, reference) = (stats.hyp_len as f64, stats.ref_len as f64);
        let brevity_penalty = if stats.hyp_len >= stats.ref_len {
            1.0
        } else if stats.hyp_len == 0 {
            0.0
        } else {
            (1.0 - reference / hyp).exp()
        };
        let bleu = if zero_precision || stats.ref_len == 0 {
            0.0
        } else {
            let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
            100.0 * brevity_penalty * log_mean.exp()
        };
        let ratio = if stats.ref_len == 0 { 0.0 } else { hyp / reference };
        BleuReport {
            bleu,
            precisions,
            brevity_penalty,
            ratio,
            hyp_length: stats.hyp_len,
            ref_length: stats.ref_len,
            zero_precision,
            stats,
        }
    }

    /// The summary line printed by `multi-bleu.perl`.
    pub fn multi_bleu_line(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for BleuReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ref_length == 0 {
            return write!(f, "BLEU = 0, 0/0/0/0 (BP=0, ratio=0, hyp_len=0, ref_len=0)");
        }
        let p = self.precisions.map(|x| 100.0 * x);
        write!(
            f,
            "BLEU = {:.2}, {:.1}/{:.1}/{:.1}/{:.1} (BP={:.3}, ratio={:.3}, hyp_len={}, ref_len={})",
            self.bleu, p[0], p[1], p[2], p[3], self.brevity_penalty, self.ratio, self.hyp_length, self.ref_length
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuOptions {
    /// Lowercase both sides first, like `multi-bleu.perl -lc` (ASCII only,
    /// since the script reads bytes).
    pub lowercase: bool,
}

/// Corpus BLEU over pre-tokenized, single-reference pairs.
pub fn corpus_bleu<S: AsRef<str> + Sync>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> Result<BleuReport, EvalError> {
    corpus_bleu_with(hyps, refs, BleuOptions::default())
}

pub fn corpus_bleu_with<S: AsRef<str> + Sync>(
    hyps: &[Vec<S>],
    refs: &[Vec<S>],
    options: BleuOptions,
) -> Result<BleuReport, EvalError> {
    if hyps.len() != refs.len() {
        return Err(EvalError::LengthMismatch { hyps: hyps.len(), refs: refs.len() });
    }
    if hyps.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let stats = hyps
        .par_iter()
        .zip(refs)
        .map(|(h, r)| {
            if options.lowercase {
                let lower = |v: &[S]| v.iter().map(|t| t.as_ref().to_ascii_lowercase()).collect::<Vec<_>>();
                sentence_stats(&lower(h), &lower(r))
            } else {
                sentence_stats(h, r)
            }
        })
        .reduce(NgramStats::default, |a, b| a + b);
    Ok(BleuReport::from_stats(stats))
}

/// Whitespace tokens, as `multi-bleu.perl` splits its input lines.
pub fn whitespace_tokens(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_string).collect()
}
