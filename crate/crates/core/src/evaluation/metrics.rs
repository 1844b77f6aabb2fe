//! Per-query ranking metrics.
//!
//! A ranking is a permutation of candidate indices, best first; candidates
//! are indexed in their original order, so index `i` sits at original
//! position `i + 1`.

use serde::{Deserialize, Serialize};

use crate::query_log::QueryEvent;

/// Mean over relevant documents of the precision at their rank; 0 when
/// nothing is relevant.
pub fn average_precision(ranking: &[usize], relevant: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &d) in ranking.iter().enumerate() {
        if relevant[d] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

pub fn reciprocal_rank(ranking: &[usize], relevant: &[bool]) -> f64 {
    ranking
        .iter()
        .position(|&d| relevant[d])
        .map_or(0.0, |r| 1.0 / (r + 1) as f64)
}

pub fn precision_at_1(ranking: &[usize], relevant: &[bool]) -> f64 {
    match ranking.first() {
        Some(&d) if relevant[d] => 1.0,
        _ => 0.0,
    }
}

/// Mean re-ranked position (1-based) of the marked documents.
pub fn avg_click_position(ranking: &[usize], marked: &[bool]) -> Option<f64> {
    let ranks: Vec<usize> = ranking
        .iter()
        .enumerate()
        .filter(|(_, &d)| marked[d])
        .map(|(r, _)| r + 1)
        .collect();
    (!ranks.is_empty()).then(|| ranks.iter().sum::<usize>() as f64 / ranks.len() as f64)
}

/// A clicked document and an unclicked one originally ranked above it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InversePair {
    pub clicked: usize,
    pub skipped: usize,
}

/// Skip-above pairs over candidates in original order.
pub fn inverse_pairs_of(clicked: &[bool]) -> Vec<InversePair> {
    let mut pairs = Vec::new();
    for (c, &is_clicked) in clicked.iter().enumerate() {
        if !is_clicked {
            continue;
        }
        for (s, &skipped_clicked) in clicked[..c].iter().enumerate() {
            if !skipped_clicked {
                pairs.push(InversePair { clicked: c, skipped: s });
            }
        }
    }
    pairs
}

/// Skip-above pairs of an event, as `(clicked doc, skipped doc)` ids.
pub fn inverse_pairs(event: &QueryEvent) -> Vec<(String, String)> {
    let clicked: Vec<bool> = event.impressions.iter().map(|i| i.clicked).collect();
    inverse_pairs_of(&clicked)
        .into_iter()
        .map(|p| {
            (
                event.impressions[p.clicked].doc_id.clone(),
                event.impressions[p.skipped].doc_id.clone(),
            )
        })
        .collect()
}

/// Number of pairs whose clicked document now ranks above the skipped one,
/// and that count as a fraction (`None` when there are no pairs).
pub fn count_improved(pairs: &[InversePair], ranking: &[usize]) -> (usize, Option<f64>) {
    let mut rank = vec![0usize; ranking.len()];
    for (r, &d) in ranking.iter().enumerate() {
        rank[d] = r;
    }
    let better = pairs.iter().filter(|p| rank[p.clicked] < rank[p.skipped]).count();
    let frac = (!pairs.is_empty()).then(|| better as f64 / pairs.len() as f64);
    (better, frac)
}
