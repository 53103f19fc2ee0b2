use serde::{Deserialize, Serialize};

use super::RetrievalError;

/// Left-closed bucket edges; the last bucket `[0.8, 1.0]` is closed on both ends.
pub const BUCKET_EDGES: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

// FMS values are ratios with small denominators, so anything this close to
// an edge is that edge up to float rounding.
const EDGE_TOLERANCE: f64 = 1e-9;

/// Index of the FMS bucket holding `score` (0..=4).
pub fn bucket_of(score: f64) -> usize {
    (1..5)
        .rev()
        .find(|&i| score + EDGE_TOLERANCE >= BUCKET_EDGES[i])
        .unwrap_or(0)
}

pub fn bucket_label(bucket: usize) -> String {
    let close = if bucket == 4 { ']' } else { ')' };
    format!("[{:.1},{:.1}{close}", BUCKET_EDGES[bucket], BUCKET_EDGES[bucket + 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmsHistogram {
    pub bucket_edges: [f64; 6],
    pub counts: [usize; 5],
    pub proportions: [f64; 5],
}

pub fn fms_histogram(scores: &[f64]) -> Result<FmsHistogram, RetrievalError> {
    if scores.is_empty() {
        return Err(RetrievalError::EmptyScores);
    }
    let mut counts = [0usize; 5];
    for &s in scores {
        if !(0.0..=1.0).contains(&s) {
            return Err(RetrievalError::ScoreOutOfRange(s));
        }
        counts[bucket_of(s)] += 1;
    }
    let total = scores.len() as f64;
    Ok(FmsHistogram {
        bucket_edges: BUCKET_EDGES,
        counts,
        proportions: counts.map(|c| c as f64 / total),
    })
}
