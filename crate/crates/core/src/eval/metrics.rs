//! Binary-relevance ranking metrics.

use std::collections::HashSet;

/// DCG@k over IDCG@k with `1 / log2(rank + 1)` discounts; 0 when nothing is relevant.
pub fn ndcg_at_k(ranking: &[&str], relevant: &HashSet<&str>, k: usize) -> f64 {
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, d)| relevant.contains(*d))
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..relevant.len().min(k)).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

pub fn mrr_at_k(ranking: &[&str], relevant: &HashSet<&str>, k: usize) -> f64 {
    ranking
        .iter()
        .take(k)
        .position(|d| relevant.contains(d))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// Relevant documents in the top `k`, divided by `k`.
pub fn precision_at_k(ranking: &[&str], relevant: &HashSet<&str>, k: usize) -> f64 {
    let hits = ranking.iter().take(k).filter(|d| relevant.contains(*d)).count();
    hits as f64 / k as f64
}

pub fn recall_at_k(ranking: &[&str], relevant: &HashSet<&str>, k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let hits = ranking.iter().take(k).filter(|d| relevant.contains(*d)).count();
    hits as f64 / relevant.len() as f64
}
