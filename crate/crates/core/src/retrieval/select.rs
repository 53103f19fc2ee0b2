use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::index::TmIndex;
use super::RetrievalError;
use crate::corpus::SentencePair;
use crate::templates::{Demonstration, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionStrategy {
    #[default]
    TopFms,
    RandomInDomain,
    RandomOutDomain,
}

impl std::str::FromStr for SelectionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "top-fms" => Ok(Self::TopFms),
            "random-in-domain" => Ok(Self::RandomInDomain),
            "random-out-domain" => Ok(Self::RandomOutDomain),
            other => Err(format!("unknown selection strategy '{other}'")),
        }
    }
}

/// Draws `k` pairs uniformly without replacement.
pub fn sample_pairs(
    pool: &[SentencePair],
    k: usize,
    seed: u64,
) -> Result<Vec<&SentencePair>, RetrievalError> {
    if pool.len() < k {
        return Err(RetrievalError::PoolTooSmall { pool: pool.len(), k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, pool.len(), k)
        .into_iter()
        .map(|i| &pool[i])
        .collect())
}

/// Picks the demonstrations for one query.
///
/// `TopFms` returns hits in rank order with their scores; the random
/// strategies ignore the query and draw from the TM database or from
/// `aux_pool` respectively.
#[allow(clippy::too_many_arguments)]
pub fn select_demonstrations(
    strategy: SelectionStrategy,
    k: usize,
    query: &str,
    index: &TmIndex,
    db: &[SentencePair],
    aux_pool: Option<&[SentencePair]>,
    seed: u64,
    limit: usize,
) -> Result<Vec<Demonstration>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    let (pool, provenance) = match strategy {
        SelectionStrategy::TopFms => {
            return Ok(index
                .retrieve_top_k(db, query, k, limit)?
                .into_iter()
                .map(|hit| Demonstration::from_hit(&hit))
                .collect());
        }
        SelectionStrategy::RandomInDomain => (db, Provenance::RandomIn),
        SelectionStrategy::RandomOutDomain => (
            aux_pool.ok_or(RetrievalError::MissingAuxPool)?,
            Provenance::RandomOut,
        ),
    };
    Ok(sample_pairs(pool, k, seed)?
        .into_iter()
        .map(|p| Demonstration {
            source: p.source.clone(),
            target: p.target.clone(),
            provenance,
            fms: None,
            entry_id: Some(p.id),
        })
        .collect())
}
