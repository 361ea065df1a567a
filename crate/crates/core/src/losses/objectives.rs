//! Loss values and their gradients with respect to scores or logits.

use crate::mlp::{log_sum_exp, sigmoid, softmax, softplus};

/// `-log softmax(scores / tau)[target]`, computed on score differences so
/// that near-saturated cases keep full relative precision.
fn neg_log_softmax(scores: &[f64], target: usize, tau: f64) -> f64 {
    let st = scores[target];
    let z: Vec<f64> = scores.iter().map(|s| (s - st) / tau).collect();
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m <= 0.0 {
        let rest: f64 = z.iter().enumerate().filter(|(c, _)| *c != target).map(|(_, v)| v.exp()).sum();
        rest.ln_1p()
    } else {
        log_sum_exp(&z)
    }
}

/// In-batch cross-entropy over all candidates. `scores[k][c]` is the score
/// of query `k` against candidate `c`; query `k`'s positive is candidate `k`.
/// Returns the mean loss and d(loss)/d(scores).
pub fn retrieval_loss(scores: &[Vec<f64>], tau: f64) -> (f64, Vec<Vec<f64>>) {
    let b = scores.len();
    if b == 0 {
        return (0.0, Vec::new());
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(b);
    for (k, row) in scores.iter().enumerate() {
        let logits: Vec<f64> = row.iter().map(|s| s / tau).collect();
        loss += neg_log_softmax(row, k, tau);
        let mut g = softmax(&logits);
        g[k] -= 1.0;
        grad.push(g.into_iter().map(|v| v / (tau * b as f64)).collect());
    }
    (loss / b as f64, grad)
}

/// Multi-positive InfoNCE averaged over queries with a non-empty positive
/// set. Returns the loss, d(loss)/d(scores) and the number of active queries.
pub fn multi_positive_info_nce(scores: &[Vec<f64>], positives: &[Vec<usize>], tau: f64) -> (f64, Vec<Vec<f64>>, usize) {
    let active: Vec<usize> = (0..scores.len()).filter(|&k| !positives[k].is_empty()).collect();
    let mut grad: Vec<Vec<f64>> = scores.iter().map(|r| vec![0.0; r.len()]).collect();
    if active.is_empty() {
        return (0.0, grad, 0);
    }
    let n = active.len() as f64;
    let mut loss = 0.0;
    for &k in &active {
        let logits: Vec<f64> = scores[k].iter().map(|s| s / tau).collect();
        let p = &positives[k];
        let np = p.len() as f64;
        loss += p.iter().map(|&c| neg_log_softmax(&scores[k], c, tau)).sum::<f64>() / np;
        let sm = softmax(&logits);
        for (c, g) in grad[k].iter_mut().enumerate() {
            *g = sm[c] / (tau * n);
        }
        for &c in p {
            grad[k][c] -= 1.0 / (np * tau * n);
        }
    }
    (loss / n, grad, active.len())
}

/// Mean binary cross-entropy from logits; returns loss and d/d(logits).
pub fn binary_cross_entropy(logits: &[f64], labels: &[bool]) -> (f64, Vec<f64>) {
    let n = logits.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n);
    for (&a, &y) in logits.iter().zip(labels) {
        let y = if y { 1.0 } else { 0.0 };
        loss += softplus(a) - y * a;
        grad.push((sigmoid(a) - y) / n as f64);
    }
    (loss / n as f64, grad)
}

/// Softmax cross-entropy for one example.
pub fn cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let loss = neg_log_softmax(logits, target, 1.0);
    let mut g = softmax(logits);
    g[target] -= 1.0;
    (loss, g)
}

pub fn squared_error(pred: f64, target: f64) -> (f64, f64) {
    let r = pred - target;
    (r * r, 2.0 * r)
}
