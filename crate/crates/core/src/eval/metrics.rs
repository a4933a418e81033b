use std::cmp::Ordering;
use std::ops::Add;

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::{Error, Scalar};

/// Gallery indices by descending score, ties by ascending index.
pub fn rank_row<S: Scalar>(scores: &[S], query: usize) -> Result<Vec<usize>, Error> {
    if let Some(g) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Eval(format!(
            "NaN score for query {query}, gallery item {g}"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    Ok(order)
}

/// 1-based position of the first relevant gallery item, `None` if absent.
pub fn first_relevant_rank(ranking: &[usize], relevant: &[usize]) -> Option<usize> {
    ranking
        .iter()
        .position(|g| relevant.contains(g))
        .map(|p| p + 1)
}

/// Percentage of queries with a relevant item in the top `k`.
pub fn recall_at_k(rankings: &[Vec<usize>], relevance: &[Vec<usize>], k: usize) -> f64 {
    if rankings.is_empty() {
        return 0.0;
    }
    let hits = rankings
        .iter()
        .zip(relevance)
        .filter(|(r, rel)| first_relevant_rank(r, rel).is_some_and(|p| p <= k))
        .count();
    100.0 * hits as f64 / rankings.len() as f64
}

/// Sum of recall values; generic so exact arithmetic can check reporting.
pub fn rsum<T: Copy + Zero + Add<Output = T>>(values: &[T]) -> T {
    values.iter().fold(T::zero(), |acc, &v| acc + v)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionReport {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub rsum: f64,
}

impl DirectionReport {
    pub fn from_rankings(rankings: &[Vec<usize>], relevance: &[Vec<usize>]) -> Self {
        let r1 = recall_at_k(rankings, relevance, 1);
        let r5 = recall_at_k(rankings, relevance, 5);
        let r10 = recall_at_k(rankings, relevance, 10);
        Self {
            r1,
            r5,
            r10,
            rsum: rsum(&[r1, r5, r10]),
        }
    }
}
