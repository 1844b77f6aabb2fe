//! Non-neural personalisation baselines: P-Click and a personalised topic
//! model, each fused with the original ranking by Borda count.

mod pclick;
mod ptm;

pub use pclick::{pclick_score, ClickStore, PClick, DEFAULT_BETA};
pub use ptm::{fit_lda, ptm_score, Lda, LdaConfig, Ptm, PtmConfig, TopicModel};

use std::collections::HashMap;
use std::hash::Hash;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("rankings cover different document sets")]
    MismatchedRankings,
    #[error("topic corpus is empty")]
    EmptyCorpus,
    #[error("{k} topics requested but the vocabulary has only {vocab} words")]
    TooManyTopics { k: usize, vocab: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Borda fusion of two rankings of the same items. Each ranking awards
/// `K - rank` points (rank 0-based, `K` items); ties keep `a`'s order.
pub fn borda_fuse<T: Clone + Eq + Hash>(a: &[T], b: &[T]) -> Result<Vec<T>, BaselineError> {
    let k = a.len();
    let rank_b: HashMap<&T, usize> = b.iter().enumerate().map(|(r, d)| (d, r)).collect();
    let unique_a: std::collections::HashSet<&T> = a.iter().collect();
    if b.len() != k || rank_b.len() != k || unique_a.len() != k || a.iter().any(|d| !rank_b.contains_key(d)) {
        return Err(BaselineError::MismatchedRankings);
    }
    let mut scored: Vec<(usize, usize)> = a
        .iter()
        .enumerate()
        .map(|(ra, d)| ((k - ra) + (k - rank_b[d]), ra))
        .collect();
    scored.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
    Ok(scored.into_iter().map(|(_, ra)| a[ra].clone()).collect())
}

/// Candidate indices `0..n` fused with the order that sorts `scores`
/// descending (ties by original position).
pub(crate) fn fuse_with_original(scores: &[f64]) -> Vec<usize> {
    let original: Vec<usize> = (0..scores.len()).collect();
    let by_score = crate::hrnn::rank_by_scores(scores);
    borda_fuse(&original, &by_score).expect("both rankings are permutations of 0..n")
}
